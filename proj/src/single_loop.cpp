#include "perm/single_loop.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "perm/errors.hpp"
#include "perm/parallel.hpp"

namespace perm {

SingleLoopState SingleLoopState::initial(std::size_t n_clients, std::size_t dim) {
  SingleLoopState s;
  s.w = Vector::Zero(static_cast<Eigen::Index>(dim));
  s.v.assign(n_clients, s.w);
  s.alpha.assign(n_clients, MixWeights::uniform(n_clients));
  return s;
}

void SingleLoopState::check_invariants(const Domain& domain) const {
  for (const MixWeights& a : alpha) {
    if (a.values().minCoeff() < 0.0 || std::abs(a.values().sum() - 1.0) > MixWeights::kSimplexTol)
      throw NumericError("single loop: mixing row left the simplex at epoch " + std::to_string(epoch));
  }
  if (!domain.contains(w)) throw NumericError("single loop: global model left the domain");
  for (const Vector& vi : v)
    if (!domain.contains(vi)) throw NumericError("single loop: personalized model left the domain");
}

void SingleLoopConfig::validate() const {
  personal.validate();
  alpha.validate();
  if (!(global_step >= 0.0) || !std::isfinite(global_step)) throw ParameterError("single loop: gamma must be >= 0");
  if (batch < 1) throw ParameterError("single loop: batch M must be >= 1");
}

double default_global_step(double mu, std::size_t n_clients, std::size_t local_steps, std::size_t epochs,
                           double multiplier) {
  if (!(mu > 0.0)) throw ParameterError("default step: strong convexity must be positive");
  const double r = static_cast<double>(epochs);
  const double arg = static_cast<double>(n_clients) * static_cast<double>(local_steps) * r * r * r;
  return multiplier * std::max(1.0, std::log(arg)) / (mu * r);
}

Vector global_step(const Vector& w, const Federation& fed, const LossModel& model, double gamma, std::size_t batch,
                   std::uint64_t seed, std::size_t epoch, const Domain& domain) {
  if (!(gamma >= 0.0)) throw ParameterError("global step: gamma must be >= 0");
  if (batch < 1) throw ParameterError("global step: batch M must be >= 1");
  if (static_cast<std::size_t>(w.size()) != fed.dim()) throw DimensionError("global step: model dimension mismatch");
  if (gamma == 0.0) return w;

  const std::size_t n = fed.size();
  std::vector<Vector> grads(n);
  parallel_for(n, [&](std::size_t i) {
    const Dataset& data = fed.shards[i].train;
    if (batch >= data.rows()) {
      grads[i] = grad(model, w, data);
      return;
    }
    Stream rng(seed, StreamTag::kGlobalBatch, {epoch, i});
    std::vector<std::size_t> idx(batch);
    for (auto& k : idx) k = rng.index(data.rows());
    grads[i] = stoch_grad(model, w, data, idx);
  });
  Vector mean = Vector::Zero(w.size());
  for (const Vector& g : grads) mean += g;
  mean /= static_cast<double>(n);
  const Vector next = w - gamma * mean;
  require_finite(next, "global step (gamma too large?)");
  return domain.project(next);
}

std::vector<MixWeights> alpha_refresh(const SingleLoopState& state, const Federation& fed, const LossModel& model,
                                      const AlphaSolverConfig& cfg, bool warm_start) {
  const auto counts = fed.train_counts();
  const DissimilarityMatrix z = pairwise_dissimilarity(fed, model, state.w);
  return solve_all_alphas(z, counts, cfg, warm_start ? &state.alpha : nullptr);
}

SingleLoopResult run_single_loop(const Federation& fed, const LossModel& model, const SingleLoopConfig& cfg,
                                 const SingleLoopObserver& observer) {
  fed.validate();
  model.validate();
  cfg.validate();
  const std::size_t n = fed.size();

  SingleLoopResult result;
  SingleLoopState& state = result.final_state;
  state = SingleLoopState::initial(n, fed.dim());

  for (std::size_t r = 0; r < cfg.personal.epochs; ++r) {
    if (cfg.step_cap_smoothness > 0.0) {
      ShufflingConfig capped = cfg.personal;
      capped.step = std::min(cfg.personal.step, personalized_step_cap(state.alpha, cfg.step_cap_smoothness));
      shuffle_epoch(state.v, state.alpha, fed, model, capped, r, result.stats);
    } else {
      shuffle_epoch(state.v, state.alpha, fed, model, cfg.personal, r, result.stats);
    }

    double step_norm = 0.0;
    if (cfg.update_global) {
      Vector next = global_step(state.w, fed, model, cfg.global_step, cfg.batch, cfg.personal.seed, r,
                                cfg.personal.domain);
      step_norm = (next - state.w).norm();
      state.w = std::move(next);
      // Broadcast of w plus one mini-batch gradient per client, sent with the
      // first shuffling round.
      result.stats.messages += 2 * n;
    }

    double drift = 0.0;
    if (cfg.update_alpha) {
      auto refreshed = alpha_refresh(state, fed, model, cfg.alpha, cfg.warm_start);
      for (std::size_t i = 0; i < n; ++i)
        drift = std::max(drift, (refreshed[i].values() - state.alpha[i].values()).norm());
      state.alpha = std::move(refreshed);
      // Full gradients at the new global model for the dissimilarity matrix.
      result.stats.messages += n;
    }

    state.epoch = r + 1;
    state.check_invariants(cfg.personal.domain);
    if (observer) observer(SingleLoopEpoch{r + 1, state, drift, step_norm, result.stats});
  }

  result.v_hat.resize(n);
  parallel_for(n, [&](std::size_t i) {
    result.v_hat[i] = personalized_output(state.alpha[i], state.v[i], fed, model, cfg.personal.smoothness,
                                          cfg.personal.domain);
  });
  result.alpha = state.alpha;
  result.w = state.w;
  return result;
}

}  // namespace perm
