#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "perm/datagen.hpp"
#include "perm/numeric.hpp"
#include "perm/objectives.hpp"
#include "perm/rng.hpp"

namespace perm {

/// Latin-square routing for one epoch: in round j, the model of client i is
/// hosted by shard sigma((i + j) mod N). Every round is a bijection and every
/// model visits each shard exactly once per epoch.
class ShuffleSchedule {
 public:
  explicit ShuffleSchedule(std::vector<std::size_t> sigma);
  /// Epoch schedule with sigma drawn uniformly from (seed, epoch).
  static ShuffleSchedule for_epoch(std::size_t n_clients, std::uint64_t seed, std::size_t epoch);

  std::size_t size() const noexcept { return sigma_.size(); }
  std::size_t host(std::size_t client, std::size_t round) const { return sigma_[(client + round) % sigma_.size()]; }
  const std::vector<std::size_t>& permutation() const noexcept { return sigma_; }

 private:
  std::vector<std::size_t> sigma_;
};

/// Phi(alpha, v) = (1/N) sum_j alpha(j) f_j(v).
double phi(const MixWeights& alpha, const Vector& v, const Federation& fed, const LossModel& model);
Vector phi_grad(const MixWeights& alpha, const Vector& v, const Federation& fed, const LossModel& model);

/// Counters shared by the personalized-update loops.
struct ShuffleStats {
  std::size_t safety_clamps = 0;  // inner iterates pulled back inside 10x the domain
  std::size_t messages = 0;       // model transfers, both directions
  std::size_t rounds = 0;         // communication rounds
};

/// K steps v <- v - eta * alpha(j) * N * g_j(v) on shard j, with no domain
/// projection. Iterates that leave the ball of 10x the domain diameter are
/// pulled back onto it and counted in `clamps`.
Vector sgd_update(const LossModel& model, const Vector& v, double eta, const Federation& fed, std::size_t shard,
                  std::size_t local_steps, const MixWeights& alpha, Sampling sampling, Stream& rng,
                  const Domain& domain, std::size_t* clamps = nullptr);

struct ShufflingConfig {
  double step = 0.0;  // eta
  std::size_t local_steps = 1;  // K
  std::size_t epochs = 1;  // R
  /// Smoothness constant L for the output step v - (1/L) grad Phi.
  double smoothness = 1.0;
  std::uint64_t seed = 0;
  Sampling sampling = Sampling::kSingleSample;
  Domain domain;

  void validate() const;
};

/// 4 c log(sqrt(N K) R) / (mu N K R), with the logarithm floored at 1.
double default_shuffling_step(double mu, std::size_t n_clients, std::size_t local_steps, std::size_t epochs,
                              double multiplier = 1.0);

/// 1 / (L N max_ij alpha_i(j)): the largest eta for which every scaled step
/// eta * alpha_i(j) * N stays at or below 1/L.
double personalized_step_cap(const std::vector<MixWeights>& alphas, double smoothness);

/// One epoch of routed personalized updates followed by the epoch-end
/// projection. `epoch` keys the permutation and the sample streams.
void shuffle_epoch(std::vector<Vector>& models, const std::vector<MixWeights>& alphas, const Federation& fed,
                   const LossModel& model, const ShufflingConfig& cfg, std::size_t epoch, ShuffleStats& stats);

/// P_W(v - (1/L) grad Phi(alpha, v)).
Vector personalized_output(const MixWeights& alpha, const Vector& v, const Federation& fed, const LossModel& model,
                           double smoothness, const Domain& domain);

using EpochObserver = std::function<void(std::size_t epoch, const std::vector<Vector>& models, const ShuffleStats&)>;

struct ShufflingResult {
  std::vector<Vector> v_hat;  // after the output step
  std::vector<Vector> last;   // v_i^R
  ShuffleStats stats;
};

/// Shuffling Local SGD over all N personalized objectives.
ShufflingResult run_shuffling(const Federation& fed, const LossModel& model, const std::vector<MixWeights>& alphas,
                              const ShufflingConfig& cfg, const std::vector<Vector>& init = {},
                              const EpochObserver& observer = {});

/// Minimizer of Phi(alpha, .) over the domain: normal equations for ridge,
/// accelerated projected gradient descent otherwise (stops when the
/// gradient-mapping norm is below `tol`).
Vector reference_minimizer(const MixWeights& alpha, const Federation& fed, const LossModel& model,
                           const Domain& domain, double tol = 1e-10);

/// Phi(alpha_i, v_i) - Phi(alpha_i, v*_i) for every client.
std::vector<double> epoch_suboptimality(const std::vector<Vector>& models, const std::vector<MixWeights>& alphas,
                                        const Federation& fed, const LossModel& model, const Domain& domain);

}  // namespace perm
