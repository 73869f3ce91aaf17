#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "perm/errors.hpp"
#include "perm/parallel.hpp"
#include "perm/single_loop.hpp"

using namespace perm;
using testing::random_federation;

namespace {

SingleLoopConfig config(double eta, double gamma, std::size_t epochs, double smoothness) {
  SingleLoopConfig cfg;
  cfg.personal.step = eta;
  cfg.personal.local_steps = 3;
  cfg.personal.epochs = epochs;
  cfg.personal.smoothness = smoothness;
  cfg.personal.seed = 21;
  cfg.global_step = gamma;
  cfg.alpha.lambda = 1.0;
  cfg.alpha.t_alpha = 300;
  return cfg;
}

Vector pooled_ridge(const Federation& fed, double reg) {
  const auto d = static_cast<Eigen::Index>(fed.dim());
  Matrix h = Matrix::Zero(d, d);
  Vector b = Vector::Zero(d);
  for (const Shard& s : fed.shards) {
    const double n = static_cast<double>(s.n());
    h += s.train.features.transpose() * s.train.features / n + reg * Matrix::Identity(d, d);
    b += s.train.features.transpose() * s.train.labels / n;
  }
  return h.ldlt().solve(b);
}

}  // namespace

TEST_CASE("global step examples") {
  const Federation fed = random_federation(4, 10, 3, 1);
  const LossModel model = LossModel::ridge(0.1);
  const Vector w = Vector::LinSpaced(3, -1, 1);
  const Domain dom;
  CHECK((global_step(w, fed, model, 0.0, 4, 1, 0, dom).array() == w.array()).all());

  Vector mean = Vector::Zero(3);
  for (const Shard& s : fed.shards) mean += grad(model, w, s);
  const Vector expected = w - 0.1 * mean / 4.0;
  CHECK((global_step(w, fed, model, 0.1, 10, 1, 0, dom) - expected).norm() <= 1e-15);
  CHECK((global_step(w, fed, model, 0.1, 1000, 5, 3, dom) - expected).norm() <= 1e-15);

  // mini-batches are drawn from (seed, epoch, client)
  Vector sampled = Vector::Zero(3);
  for (std::size_t i = 0; i < 4; ++i) {
    Stream rng(2, StreamTag::kGlobalBatch, {7, i});
    std::vector<std::size_t> idx(3);
    for (auto& k : idx) k = rng.index(10);
    sampled += stoch_grad(model, w, fed.shards[i].train, idx);
  }
  CHECK((global_step(w, fed, model, 0.1, 3, 2, 7, dom) - (w - 0.1 * sampled / 4.0)).norm() <= 1e-15);
  CHECK_THROWS_AS(global_step(w, fed, model, -0.1, 3, 2, 7, dom), ParameterError);
}

TEST_CASE("repeated full-batch global steps reach the pooled ridge minimizer") {
  const Federation fed = random_federation(5, 20, 4, 2);
  const LossModel model = LossModel::ridge(0.1);
  const Vector star = pooled_ridge(fed, 0.1);
  const double l = estimate_constants(model, fed.shards).smoothness;
  Vector w = Vector::Zero(4);
  for (int t = 0; t < 3000; ++t) w = global_step(w, fed, model, 1.0 / l, 100, 0, t, Domain{});
  CHECK((w - star).norm() <= 1e-8);
}

TEST_CASE("alpha refresh is a fixed point once the global model stops moving") {
  const Federation fed = random_federation(5, 20, 4, 3);
  const LossModel model = LossModel::ridge(0.1);
  SingleLoopState state = SingleLoopState::initial(5, 4);
  state.w = pooled_ridge(fed, 0.1);
  AlphaSolverConfig cfg;
  cfg.t_alpha = 2000;
  state.alpha = alpha_refresh(state, fed, model, cfg);
  const auto again = alpha_refresh(state, fed, model, cfg);
  for (std::size_t i = 0; i < 5; ++i) CHECK((again[i].values() - state.alpha[i].values()).norm() <= 1e-4);

  const auto two_stage = estimate_all_alphas(fed, model, state.w, cfg);
  for (std::size_t i = 0; i < 5; ++i) CHECK((two_stage[i].values() - state.alpha[i].values()).norm() <= 1e-4);

  const Federation same = random_federation(3, 20, 4, 3, false, true);
  SingleLoopState s3 = SingleLoopState::initial(3, 4);
  s3.w = Vector::Constant(4, 0.4);
  for (const auto& a : alpha_refresh(s3, same, model, cfg))
    CHECK((a.values() - MixWeights::uniform(3).values()).norm() <= 1e-12);
}

TEST_CASE("frozen global and alpha tracks reproduce the shuffling module") {
  const Federation fed = random_federation(6, 20, 3, 4, true);
  const LossModel model = LossModel::logistic(0.05);
  SingleLoopConfig cfg = config(0.05, 0.1, 4, 2.0);
  cfg.update_alpha = false;
  cfg.update_global = false;
  const auto single = run_single_loop(fed, model, cfg);
  const auto shuffled = run_shuffling(fed, model, std::vector<MixWeights>(6, MixWeights::uniform(6)), cfg.personal);
  for (std::size_t i = 0; i < 6; ++i) CHECK((single.v_hat[i].array() == shuffled.v_hat[i].array()).all());
}

TEST_CASE("the global track converges and the rows settle") {
  const Federation fed = random_federation(5, 30, 4, 5);
  const LossModel model = LossModel::ridge(0.1);
  const double l = estimate_constants(model, fed.shards).smoothness;
  SingleLoopConfig cfg = config(0.01, 1.0 / l, 400, l);
  cfg.batch = 1000;
  cfg.alpha.t_alpha = static_cast<std::size_t>(std::ceil(40 * alpha_kappa(fed.train_counts(), 1.0))) + 500;
  std::size_t epochs = 0;
  bool settled_checked = false;
  const auto res = run_single_loop(fed, model, cfg, [&](const SingleLoopEpoch& e) {
    ++epochs;
    CHECK(e.epoch == epochs);
    if (e.global_step_norm <= 1e-8 && e.epoch > 1) {
      CHECK(e.alpha_drift <= 1e-4);
      settled_checked = true;
    }
  });
  CHECK(epochs == 400);
  CHECK(settled_checked);
  CHECK((res.w - pooled_ridge(fed, 0.1)).norm() <= 1e-8);
  CHECK(res.stats.rounds == 400 * 5);
  CHECK(res.stats.messages == 400 * (2 * 25 + 2 * 5 + 5));
}

TEST_CASE("single client keeps a unit row") {
  const Federation fed = random_federation(1, 20, 3, 6, true);
  const LossModel model = LossModel::logistic();
  const SingleLoopConfig cfg = config(0.05, 0.1, 3, 2.0);
  const auto res = run_single_loop(fed, model, cfg);
  CHECK(res.alpha[0][0] == 1.0);
  const auto shuffled = run_shuffling(fed, model, {MixWeights::uniform(1)}, cfg.personal);
  CHECK((res.v_hat[0].array() == shuffled.v_hat[0].array()).all());
}

TEST_CASE("identical clients share one personalized model equal to the single-machine solution") {
  const Federation fed = random_federation(4, 20, 3, 7, false, true);
  const LossModel model = LossModel::ridge(0.1);
  const double l = estimate_constants(model, fed.shards).smoothness;
  SingleLoopConfig cfg = config(0.5 / l, 1.0 / l, 300, l);
  cfg.personal.sampling = Sampling::kFullBatch;
  const auto res = run_single_loop(fed, model, cfg);
  const Dataset& d = fed.shards[0].train;
  const Matrix h = d.features.transpose() * d.features / 20.0 + 0.1 * Matrix::Identity(3, 3);
  const Vector star = h.ldlt().solve(d.features.transpose() * d.labels / 20.0);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK((res.v_hat[i] - res.v_hat[0]).norm() <= 1e-12);
    CHECK((res.v_hat[i] - star).norm() <= 1e-6);
  }
}

TEST_CASE("single loop is independent of the worker count and keeps its invariants") {
  const Federation fed = random_federation(6, 25, 4, 8, true);
  const LossModel model = LossModel::logistic();
  SingleLoopConfig cfg = config(0.05, 0.2, 5, 2.0);
  cfg.batch = 4;
  cfg.step_cap_smoothness = 2.0;
  set_worker_count(1);
  const auto a = run_single_loop(fed, model, cfg, [&](const SingleLoopEpoch& e) {
    CHECK_NOTHROW(e.state.check_invariants(cfg.personal.domain));
  });
  set_worker_count(4);
  const auto b = run_single_loop(fed, model, cfg);
  set_worker_count(0);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK((a.v_hat[i].array() == b.v_hat[i].array()).all());
    CHECK((a.alpha[i].values().array() == b.alpha[i].values().array()).all());
  }

  SingleLoopState broken = SingleLoopState::initial(2, 2);
  broken.v[1] = Vector::Constant(2, 5000.0);
  CHECK_THROWS_AS(broken.check_invariants(Domain{}), NumericError);
}

TEST_CASE("default global step") {
  CHECK(default_global_step(0.5, 2, 2, 10) == doctest::Approx(std::log(4000.0) / 5.0));
  CHECK(default_global_step(1.0, 1, 1, 1) == doctest::Approx(1.0));
  SingleLoopConfig bad = config(0.1, 0.1, 1, 1.0);
  bad.batch = 0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}
