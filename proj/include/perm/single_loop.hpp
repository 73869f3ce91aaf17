#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "perm/discrepancy.hpp"
#include "perm/shuffling.hpp"

namespace perm {

struct SingleLoopState {
  Vector w;
  std::vector<Vector> v;
  std::vector<MixWeights> alpha;
  std::size_t epoch = 0;

  /// Uniform mixing rows and zero models.
  static SingleLoopState initial(std::size_t n_clients, std::size_t dim);
  /// Throws NumericError if a row left the simplex or a model left the domain.
  void check_invariants(const Domain& domain) const;
};

struct SingleLoopConfig {
  ShufflingConfig personal;  // eta, K, R, output-step L, seed, sampling, domain
  double global_step = 0.0;  // gamma
  std::size_t batch = 32;    // M
  AlphaSolverConfig alpha;
  /// Warm-start each alpha refresh from the previous epoch's rows.
  bool warm_start = true;
  /// Switches for isolating the personalized track in tests.
  bool update_global = true;
  bool update_alpha = true;
  /// When positive, epoch r uses min(eta, 1 / (L N max_ij alpha_i^r(j))) with
  /// L = this value, keeping every scaled SGD step at most 1/L.
  double step_cap_smoothness = 0.0;

  void validate() const;
};

/// c log(N K R^3) / (mu R), with the logarithm floored at 1.
double default_global_step(double mu, std::size_t n_clients, std::size_t local_steps, std::size_t epochs,
                           double multiplier = 1.0);

/// w <- P_W(w - gamma * mean_i g_i), where g_i averages M samples drawn with
/// replacement from client i (the exact gradient when M >= n_i). Samples are
/// keyed by (seed, epoch, client).
Vector global_step(const Vector& w, const Federation& fed, const LossModel& model, double gamma, std::size_t batch,
                   std::uint64_t seed, std::size_t epoch, const Domain& domain);

/// Mixing rows re-solved at the state's global model, warm-started from the
/// state's rows when `warm_start` is set.
std::vector<MixWeights> alpha_refresh(const SingleLoopState& state, const Federation& fed, const LossModel& model,
                                      const AlphaSolverConfig& cfg, bool warm_start = true);

struct SingleLoopEpoch {
  std::size_t epoch;  // 1-based
  const SingleLoopState& state;
  double alpha_drift;  // max_i |alpha_i^{r+1} - alpha_i^r|
  double global_step_norm;  // |w^{r+1} - w^r|
  const ShuffleStats& stats;
};

using SingleLoopObserver = std::function<void(const SingleLoopEpoch&)>;

struct SingleLoopResult {
  std::vector<Vector> v_hat;
  std::vector<MixWeights> alpha;
  Vector w;
  SingleLoopState final_state;
  ShuffleStats stats;
};

/// Per epoch: routed personalized updates with the current rows, one global
/// mini-batch step, then an alpha refresh at the new global model. Ends with
/// the output step P_W(v - (1/L) grad Phi(alpha, v)) per client.
SingleLoopResult run_single_loop(const Federation& fed, const LossModel& model, const SingleLoopConfig& cfg,
                                 const SingleLoopObserver& observer = {});

}  // namespace perm
