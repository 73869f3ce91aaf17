#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "perm/discrepancy.hpp"
#include "perm/errors.hpp"
#include "perm/parallel.hpp"

using namespace perm;
using testing::grid_alpha2;
using testing::grid_alpha3;
using testing::random_federation;

namespace {

AlphaSolverConfig solver(double lambda, std::size_t t) {
  AlphaSolverConfig cfg;
  cfg.lambda = lambda;
  cfg.t_alpha = t;
  return cfg;
}

double linf(const Vector& a, const Vector& b) { return (a - b).lpNorm<Eigen::Infinity>(); }

Federation one_sample_clients(const std::vector<std::pair<Vector, double>>& rows) {
  Federation fed;
  for (const auto& [x, y] : rows) {
    Shard s;
    s.train.features = x.transpose();
    s.train.labels = Vector::Constant(1, y);
    s.eval = s.train;
    fed.shards.push_back(s);
    fed.group_of.push_back(0);
  }
  return fed;
}

}  // namespace

TEST_CASE("two-client mixing examples against the grid oracle") {
  const std::vector<double> ones{1, 1};
  const std::vector<double> z1{0, 1}, z4{0, 4};
  const Vector grid1 = grid_alpha2(z1, ones, 1.0, 1e-6);
  const Vector grid4 = grid_alpha2(z4, ones, 1.0, 1e-6);
  CHECK(linf(grid1, (Vector(2) << 0.75, 0.25).finished()) <= 1e-6);
  CHECK(linf(grid4, (Vector(2) << 1.0, 0.0).finished()) <= 1e-6);

  CHECK(linf(solve_alpha_gd(z1, ones, solver(1, 200)).values(), grid1) <= 1e-6);
  CHECK(linf(solve_alpha_gd(z4, ones, solver(1, 200)).values(), grid4) <= 1e-6);
  CHECK(linf(solve_alpha_kkt(z1, ones, 1.0).values(), grid1) <= 1e-6);
  CHECK(linf(solve_alpha_kkt(z4, ones, 1.0).values(), grid4) <= 1e-6);
}

TEST_CASE("degenerate rows") {
  const std::vector<double> zero(5, 0.0), n(5, 3.0);
  CHECK(linf(solve_alpha_gd(zero, n, solver(1, 50)).values(), MixWeights::uniform(5).values()) <= 1e-15);
  CHECK(linf(solve_alpha_kkt(zero, n, 1.0).values(), MixWeights::uniform(5).values()) <= 1e-15);

  const std::vector<double> far{1e12, 0.0, 1e12};
  CHECK(solve_alpha_kkt(far, std::vector<double>{1, 1, 1}, 1.0).values() == MixWeights::indicator(3, 1).values());

  const std::vector<double> single{0.0}, one{7.0};
  CHECK(solve_alpha_gd(single, one, solver(1, 3))[0] == 1.0);

  CHECK_THROWS_AS(solve_alpha_gd(zero, std::vector<double>(4, 1.0), solver(1, 5)), DimensionError);
  CHECK_THROWS_AS(solve_alpha_gd(zero, n, solver(-1, 5)), ParameterError);
  CHECK_THROWS_AS(solve_alpha_gd(zero, n, solver(1, 0)), ParameterError);
  CHECK_THROWS_AS(solve_alpha_kkt(zero, std::vector<double>(5, 0.0), 1.0), ParameterError);
}

TEST_CASE("projected GD agrees with the threshold solution on random rows") {
  Stream rng(2024, StreamTag::kFeatures);
  const double lambdas[] = {0.1, 1.0, 10.0};
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 2 + rng.index(49);
    std::vector<double> z(n), c(n);
    for (auto& v : z) v = std::abs(rng.normal());
    for (auto& v : c) v = static_cast<double>(1 + rng.index(20));
    const double lam = lambdas[t % 3];
    const double kappa = alpha_kappa(c, lam);
    const double ratio = *std::max_element(c.begin(), c.end()) / *std::min_element(c.begin(), c.end());
    const auto steps = static_cast<std::size_t>(std::ceil(std::max(40.0 * kappa, 40.0 * ratio)));
    const Vector gd = solve_alpha_gd(z, c, solver(lam, steps)).values();
    const Vector kkt = solve_alpha_kkt(z, c, lam).values();
    CHECK(linf(gd, kkt) <= 1e-6);
    // KKT conditions: equal reduced gradient on the support, larger off it
    const Vector g = Eigen::Map<const Vector>(z.data(), n) +
                     2 * lam * kkt.cwiseQuotient(Eigen::Map<const Vector>(c.data(), n));
    double nu = INFINITY;
    for (std::size_t j = 0; j < n; ++j)
      if (kkt[j] > 0) nu = std::min(nu, g[j]);
    for (std::size_t j = 0; j < n; ++j) CHECK(g[j] >= nu - 1e-9);
  }
}

TEST_CASE("three-client instances against the grid oracle") {
  Stream rng(77, StreamTag::kFeatures);
  for (int t = 0; t < 4; ++t) {
    std::vector<double> z(3), c(3);
    for (auto& v : z) v = std::abs(rng.normal());
    for (auto& v : c) v = static_cast<double>(1 + rng.index(10));
    const double lam = t % 2 ? 0.5 : 2.0;
    const Vector grid = grid_alpha3(z, c, lam, 1e-6);
    CHECK(linf(solve_alpha_kkt(z, c, lam).values(), grid) <= 2e-6);
    CHECK(linf(solve_alpha_gd(z, c, solver(lam, 2000)).values(), grid) <= 2e-6);
  }
}

TEST_CASE("objective never increases along projected GD") {
  Stream rng(5, StreamTag::kFeatures);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + rng.index(30);
    std::vector<double> z(n), c(n);
    for (auto& v : z) v = std::abs(rng.normal());
    for (auto& v : c) v = static_cast<double>(1 + rng.index(100));
    std::vector<double> trace;
    solve_alpha_gd(z, c, solver(0.1 + rng.uniform() * 5, 100), nullptr, &trace);
    CHECK(trace.size() == 101);
    for (std::size_t k = 1; k < trace.size(); ++k) CHECK(trace[k] <= trace[k - 1] + 1e-12);
  }
}

TEST_CASE("scaling z and lambda together leaves the minimizer unchanged") {
  Stream rng(6, StreamTag::kFeatures);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + rng.index(20);
    std::vector<double> z(n), c(n), zs(n);
    for (auto& v : c) v = static_cast<double>(1 + rng.index(50));
    const double s = 0.01 + 100 * rng.uniform();
    for (std::size_t j = 0; j < n; ++j) {
      z[j] = std::abs(rng.normal());
      zs[j] = s * z[j];
    }
    CHECK(linf(solve_alpha_kkt(z, c, 0.7).values(), solve_alpha_kkt(zs, c, 0.7 * s).values()) <= 1e-12);
  }
}

TEST_CASE("mixing weights vary continuously with the reference model") {
  const Federation fed = random_federation(6, 30, 4, 3);
  const LossModel model = LossModel::ridge(0.1);
  const Vector w = Vector::LinSpaced(4, -0.5, 0.5);
  const auto counts = fed.train_counts();
  auto alpha0 = [&](const Vector& at) {
    const auto z = pairwise_dissimilarity(fed, model, at);
    const Vector row = z.z.row(0).transpose();
    return solve_alpha_kkt(std::span<const double>(row.data(), 6), counts, 1.0).values();
  };
  const Vector base = alpha0(w);
  double previous = INFINITY;
  for (double eps : {1e-1, 1e-2, 1e-3, 1e-4, 1e-5}) {
    const double change = (alpha0(w + Vector::Constant(4, eps)) - base).norm();
    CHECK(change <= previous + 1e-15);
    previous = change;
  }
  CHECK(previous <= 1e-3);
}

TEST_CASE("dissimilarity examples") {
  const Federation same = random_federation(4, 20, 3, 1, false, true);
  const auto zs = pairwise_dissimilarity(same, LossModel::ridge(0.1), Vector::Ones(3));
  CHECK(zs.z.norm() == 0.0);
  CHECK(zs.heterogeneity_at_ref == 0.0);
  for (const auto& a : estimate_all_alphas(same, LossModel::ridge(0.1), Vector::Ones(3), solver(1, 50)))
    CHECK(linf(a.values(), MixWeights::uniform(4).values()) <= 1e-12);

  // ridge, reg 0, w = 0: grad f_i = -y x
  const Federation two = one_sample_clients({{(Vector(2) << 1, 0).finished(), -1.0},
                                             {(Vector(2) << 0, 1).finished(), -1.0}});
  const auto z = pairwise_dissimilarity(two, LossModel::ridge(0.0), Vector::Zero(2));
  CHECK(z.z(0, 1) == doctest::Approx(2.0));
  CHECK(z.z(1, 0) == doctest::Approx(2.0));
  CHECK(z.z(0, 0) == 0.0);
  CHECK(z.heterogeneity_at_ref == doctest::Approx(0.5));
  CHECK(z.mean_row(0) == doctest::Approx(1.0));

  const Federation lone = random_federation(1, 10, 2, 4);
  const auto a = estimate_all_alphas(lone, LossModel::ridge(0.1), Vector::Zero(2), solver(1, 10));
  CHECK(a.size() == 1);
  CHECK(a[0][0] == 1.0);
  CHECK_THROWS_AS(pairwise_dissimilarity(lone, LossModel::ridge(0.1), Vector::Zero(3)), DimensionError);
}

TEST_CASE("opposite-label groups separate in the dissimilarity matrix") {
  SyntheticSpec spec = SyntheticSpec::two_group(11);
  spec.n_clients = 10;
  const Federation fed = gen_synthetic(spec);
  const LossModel model = LossModel::logistic();
  LocalSgdConfig cfg;
  cfg.local_steps = 5;
  cfg.rounds = 10;
  cfg.seed = 11;
  cfg.step = std::min(default_local_sgd_step(model.reg, 10, 5), 1.0 / estimate_constants(model, fed.shards).smoothness);
  const Vector w = local_sgd_global(fed, model, cfg);
  const auto z = pairwise_dissimilarity(fed, model, w);

  std::vector<double> within, cross;
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 10; ++j) {
      if (i == j) continue;
      (fed.group_of[i] == fed.group_of[j] ? within : cross).push_back(z.z(i, j));
    }
  auto median = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
  };
  CHECK(median(cross) >= 10 * median(within));

  const auto alphas = solve_all_alphas(z, fed.train_counts(), solver(1, 200));
  for (std::size_t i = 0; i < 10; ++i) {
    double mass = 0;
    for (std::size_t j = 0; j < 10; ++j)
      if (fed.group_of[j] == fed.group_of[i]) mass += alphas[i][j];
    CHECK(mass >= 0.8);
  }
  const Matrix m = alpha_matrix(alphas);
  CHECK(m.rows() == 10);
  CHECK((m.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-9);
}

TEST_CASE("single-client full-batch local SGD reaches the ridge minimizer") {
  const Federation fed = random_federation(1, 40, 5, 9);
  const LossModel model = LossModel::ridge(0.05);
  const Dataset& d = fed.shards[0].train;
  const Matrix h = d.features.transpose() * d.features / 40.0 + 0.05 * Matrix::Identity(5, 5);
  const Vector star = h.ldlt().solve(d.features.transpose() * d.labels / 40.0);

  LocalSgdConfig cfg;
  cfg.sampling = Sampling::kFullBatch;
  cfg.local_steps = 10;
  cfg.rounds = 400;
  cfg.step = 1.0 / estimate_constants(model, d).smoothness;
  CHECK((local_sgd_global(fed, model, cfg) - star).norm() <= 1e-6);
}

TEST_CASE("identical clients follow the single-machine trajectory") {
  const Federation fed = random_federation(4, 25, 3, 12, false, true);
  const LossModel model = LossModel::ridge(0.1);
  LocalSgdConfig cfg;
  cfg.sampling = Sampling::kFullBatch;
  cfg.local_steps = 3;
  cfg.rounds = 6;
  cfg.step = 0.05;
  cfg.domain.diameter = 2.0;

  Vector w = Vector::Zero(3);
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t k = 0; k < 3; ++k) w -= 0.05 * grad(model, w, fed.shards[0].train);
    w = cfg.domain.project(w);
  }
  CHECK((local_sgd_global(fed, model, cfg) - w).norm() <= 1e-12);
}

TEST_CASE("one local step equals mini-batch SGD with one sample per client") {
  const Federation fed = random_federation(5, 20, 4, 13, true);
  const LossModel model = LossModel::logistic(0.05);
  LocalSgdConfig cfg;
  cfg.local_steps = 1;
  cfg.rounds = 8;
  cfg.step = 0.3;
  cfg.seed = 99;

  Vector w = Vector::Zero(4);
  for (std::size_t r = 0; r < 8; ++r) {
    Vector g = Vector::Zero(4);
    for (std::size_t i = 0; i < 5; ++i) {
      Stream rng(99, StreamTag::kLocalSgd, {r, i});
      g += sample_grad(model, w, fed.shards[i].train, rng.index(fed.shards[i].train.rows()));
    }
    w = cfg.domain.project(w - 0.3 * g / 5.0);
  }
  CHECK((local_sgd_global(fed, model, cfg) - w).norm() <= 1e-12);
}

TEST_CASE("local SGD is independent of the worker count") {
  const Federation fed = random_federation(7, 30, 4, 14, true);
  LocalSgdConfig cfg;
  cfg.local_steps = 4;
  cfg.rounds = 5;
  cfg.step = 0.1;
  cfg.seed = 3;
  set_worker_count(1);
  const Vector a = local_sgd_global(fed, LossModel::logistic(), cfg);
  set_worker_count(4);
  const Vector b = local_sgd_global(fed, LossModel::logistic(), cfg);
  set_worker_count(0);
  CHECK((a.array() == b.array()).all());

  std::size_t calls = 0;
  local_sgd_global(fed, LossModel::logistic(), cfg, Vector(), [&](std::size_t r, const Vector&) { CHECK(r == ++calls); });
  CHECK(calls == 5);
  cfg.step = 0;
  CHECK_THROWS_AS(local_sgd_global(fed, LossModel::logistic(), cfg), ParameterError);
}

TEST_CASE("default Local SGD step") {
  CHECK(default_local_sgd_step(0.5, 10, 10) == doctest::Approx(std::log(100.0) / 50.0));
  CHECK(default_local_sgd_step(1.0, 1, 1) == doctest::Approx(1.0));
  CHECK(default_local_sgd_step(1.0, 10, 10, 3.0) == doctest::Approx(3 * std::log(100.0) / 100.0));
  CHECK_THROWS_AS(default_local_sgd_step(0.0, 1, 1), ParameterError);
}
