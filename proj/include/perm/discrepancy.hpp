#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "perm/datagen.hpp"
#include "perm/numeric.hpp"
#include "perm/objectives.hpp"

namespace perm {

/// z(i, j) = |grad f_i(w) - grad f_j(w)|^2 at the reference model w.
struct DissimilarityMatrix {
  Matrix z;
  Vector ref_model;
  /// max_i |grad f_i(w) - mean_j grad f_j(w)|^2, evaluated at the reference
  /// model only (a diagnostic, not the supremum over the domain).
  double heterogeneity_at_ref = 0.0;

  std::size_t size() const noexcept { return static_cast<std::size_t>(z.rows()); }
  /// Row mean (1/N) sum_j z(i, j).
  double mean_row(std::size_t i) const;
};

/// Settings for the per-client mixing problem
///   min_{a in simplex} sum_j a_j z_j + lambda sum_j a_j^2 / n_j.
struct AlphaSolverConfig {
  double lambda = 1.0;
  std::size_t t_alpha = 200;
  /// Projected-GD step; defaults to 1 / L_g with L_g = 2 lambda / min_j n_j.
  std::optional<double> step;

  void validate() const;
  double step_for(std::span<const double> counts) const;
};

/// n_max / (2 lambda): the condition-number proxy used to size t_alpha.
double alpha_kappa(std::span<const double> counts, double lambda);

/// Value of the mixing objective for client row `z_row`.
double alpha_objective(std::span<const double> z_row, std::span<const double> counts, double lambda,
                       const Vector& alpha);

/// t_alpha projected-GD steps from `warm_start` (uniform when absent).
/// When `trace` is given it receives the objective before the first step and
/// after each step.
MixWeights solve_alpha_gd(std::span<const double> z_row, std::span<const double> counts,
                          const AlphaSolverConfig& cfg, const MixWeights* warm_start = nullptr,
                          std::vector<double>* trace = nullptr);

/// Exact minimizer by thresholding: a_j = max(0, (nu - z_j) n_j / (2 lambda))
/// with nu fixed by sum_j a_j = 1.
MixWeights solve_alpha_kkt(std::span<const double> z_row, std::span<const double> counts, double lambda);

struct LocalSgdConfig {
  double step = 0.0;  // gamma
  std::size_t local_steps = 1;  // K
  std::size_t rounds = 1;  // R
  std::uint64_t seed = 0;
  Sampling sampling = Sampling::kSingleSample;
  /// Server averaging weights; empty means uniform 1/N.
  std::vector<double> weights;
  Domain domain;

  void validate(std::size_t n_clients) const;
};

/// c * log(RK) / (mu R K), with the logarithm floored at 1.
double default_local_sgd_step(double mu, std::size_t rounds, std::size_t local_steps, double multiplier = 1.0);

/// Called after each server update with the round index (1-based) and model.
using RoundObserver = std::function<void(std::size_t round, const Vector& w)>;

/// Local SGD with periodic averaging: every round, each client takes K
/// sampled-gradient steps from the shared model, then the server averages
/// and projects onto the domain. Starts from `init` (zero when empty).
Vector local_sgd_global(const Federation& fed, const LossModel& model, const LocalSgdConfig& cfg,
                        const Vector& init = Vector(), const RoundObserver& observer = {});

DissimilarityMatrix pairwise_dissimilarity(const Federation& fed, const LossModel& model, const Vector& w);

/// Solves every row of `z` with projected GD, optionally warm-started.
std::vector<MixWeights> solve_all_alphas(const DissimilarityMatrix& z, std::span<const double> counts,
                                         const AlphaSolverConfig& cfg,
                                         const std::vector<MixWeights>* warm_start = nullptr);

/// Dissimilarity at w followed by a projected-GD solve per client.
std::vector<MixWeights> estimate_all_alphas(const Federation& fed, const LossModel& model, const Vector& w,
                                            const AlphaSolverConfig& cfg);

/// Stacks rows into an N x N matrix.
Matrix alpha_matrix(const std::vector<MixWeights>& alphas);

}  // namespace perm
