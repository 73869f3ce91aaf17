#include "perm/shuffling.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "perm/errors.hpp"
#include "perm/parallel.hpp"

namespace perm {
namespace {

void check_alphas(const std::vector<MixWeights>& alphas, std::size_t n) {
  if (alphas.size() != n)
    throw DimensionError("shuffling: expected " + std::to_string(n) + " mixing rows, got " +
                         std::to_string(alphas.size()));
  for (const MixWeights& a : alphas)
    if (a.size() != n) throw DimensionError("shuffling: mixing row length differs from client count");
}

}  // namespace

ShuffleSchedule::ShuffleSchedule(std::vector<std::size_t> sigma) : sigma_(std::move(sigma)) {
  if (sigma_.empty()) throw ParameterError("schedule: no clients");
  std::vector<bool> seen(sigma_.size(), false);
  for (std::size_t s : sigma_) {
    if (s >= sigma_.size() || seen[s]) throw ParameterError("schedule: sigma is not a permutation");
    seen[s] = true;
  }
}

ShuffleSchedule ShuffleSchedule::for_epoch(std::size_t n_clients, std::uint64_t seed, std::size_t epoch) {
  Stream rng(seed, StreamTag::kPermutation, {epoch});
  return ShuffleSchedule(random_permutation(n_clients, rng));
}

double phi(const MixWeights& alpha, const Vector& v, const Federation& fed, const LossModel& model) {
  if (alpha.size() != fed.size()) throw DimensionError("phi: mixing row length differs from client count");
  double total = 0.0;
  for (std::size_t j = 0; j < fed.size(); ++j)
    if (alpha[j] != 0.0) total += alpha[j] * loss(model, v, fed.shards[j].train);
  return total / static_cast<double>(fed.size());
}

Vector phi_grad(const MixWeights& alpha, const Vector& v, const Federation& fed, const LossModel& model) {
  if (alpha.size() != fed.size()) throw DimensionError("phi: mixing row length differs from client count");
  if (static_cast<std::size_t>(v.size()) != fed.dim()) throw DimensionError("phi: model dimension mismatch");
  Vector total = Vector::Zero(v.size());
  for (std::size_t j = 0; j < fed.size(); ++j)
    if (alpha[j] != 0.0) total += alpha[j] * grad(model, v, fed.shards[j].train);
  return total / static_cast<double>(fed.size());
}

Vector sgd_update(const LossModel& model, const Vector& v, double eta, const Federation& fed, std::size_t shard,
                  std::size_t local_steps, const MixWeights& alpha, Sampling sampling, Stream& rng,
                  const Domain& domain, std::size_t* clamps) {
  if (!(eta > 0.0)) throw ParameterError("sgd update: eta must be positive");
  if (local_steps < 1) throw ParameterError("sgd update: K must be >= 1");
  if (shard >= fed.size()) throw DimensionError("sgd update: shard index out of range");
  const double scale = eta * alpha[shard] * static_cast<double>(alpha.size());
  if (scale == 0.0) return v;

  const double safety_radius = 10.0 * domain.diameter;
  Vector out = v;
  for (std::size_t t = 0; t < local_steps; ++t) {
    out -= scale * sampled_grad(model, out, fed.shards[shard].train, sampling, rng);
    if (out.norm() > safety_radius) {
      out = project_ball(out, Vector::Zero(out.size()), safety_radius);
      if (clamps) ++*clamps;
    }
  }
  return out;
}

void ShufflingConfig::validate() const {
  if (!(step > 0.0) || !std::isfinite(step)) throw ParameterError("shuffling: step (eta) must be positive");
  if (local_steps < 1) throw ParameterError("shuffling: local steps K must be >= 1");
  if (epochs < 1) throw ParameterError("shuffling: epochs R must be >= 1");
  if (!(smoothness > 0.0)) throw ParameterError("shuffling: smoothness L must be positive");
  if (!(domain.diameter > 0.0)) throw ParameterError("shuffling: domain diameter must be positive");
}

double default_shuffling_step(double mu, std::size_t n_clients, std::size_t local_steps, std::size_t epochs,
                              double multiplier) {
  if (!(mu > 0.0)) throw ParameterError("default step: strong convexity must be positive");
  const double nk = static_cast<double>(n_clients) * static_cast<double>(local_steps);
  const double r = static_cast<double>(epochs);
  return multiplier * 4.0 * std::max(1.0, std::log(std::sqrt(nk) * r)) / (mu * nk * r);
}

double personalized_step_cap(const std::vector<MixWeights>& alphas, double smoothness) {
  if (!(smoothness > 0.0)) throw ParameterError("step cap: smoothness must be positive");
  double top = 0.0;
  for (const MixWeights& a : alphas) top = std::max(top, a.values().maxCoeff());
  return 1.0 / (smoothness * static_cast<double>(alphas.size()) * top);
}

void shuffle_epoch(std::vector<Vector>& models, const std::vector<MixWeights>& alphas, const Federation& fed,
                   const LossModel& model, const ShufflingConfig& cfg, std::size_t epoch, ShuffleStats& stats) {
  const std::size_t n = fed.size();
  check_alphas(alphas, n);
  if (models.size() != n) throw DimensionError("shuffling: one model per client required");
  const ShuffleSchedule schedule = ShuffleSchedule::for_epoch(n, cfg.seed, epoch);

  // Each model's pass through the epoch touches only its own slot; the sample
  // stream depends on (epoch, round, host), so rounds need no interleaving.
  std::vector<std::size_t> clamps(n, 0);
  parallel_for(n, [&](std::size_t i) {
    Vector v = std::move(models[i]);
    for (std::size_t round = 0; round < n; ++round) {
      const std::size_t host = schedule.host(i, round);
      Stream rng(cfg.seed, StreamTag::kShuffleSample, {epoch, round, host});
      v = sgd_update(model, v, cfg.step, fed, host, cfg.local_steps, alphas[i], cfg.sampling, rng, cfg.domain,
                     &clamps[i]);
    }
    require_finite(v, "shuffling: personalized model (step size too large?)");
    models[i] = cfg.domain.project(v);
  });
  for (std::size_t c : clamps) stats.safety_clamps += c;
  stats.rounds += n;
  stats.messages += 2 * n * n;
}

Vector personalized_output(const MixWeights& alpha, const Vector& v, const Federation& fed, const LossModel& model,
                           double smoothness, const Domain& domain) {
  return domain.project(v - (1.0 / smoothness) * phi_grad(alpha, v, fed, model));
}

ShufflingResult run_shuffling(const Federation& fed, const LossModel& model, const std::vector<MixWeights>& alphas,
                              const ShufflingConfig& cfg, const std::vector<Vector>& init,
                              const EpochObserver& observer) {
  fed.validate();
  model.validate();
  cfg.validate();
  const std::size_t n = fed.size();
  check_alphas(alphas, n);
  const auto d = static_cast<Eigen::Index>(fed.dim());

  ShufflingResult result;
  result.last = init.empty() ? std::vector<Vector>(n, Vector::Zero(d)) : init;
  if (result.last.size() != n) throw DimensionError("shuffling: one initial model per client required");
  for (Vector& v : result.last) {
    if (v.size() != d) throw DimensionError("shuffling: initial model has wrong dimension");
    v = cfg.domain.project(v);
  }

  for (std::size_t r = 0; r < cfg.epochs; ++r) {
    shuffle_epoch(result.last, alphas, fed, model, cfg, r, result.stats);
    if (observer) observer(r + 1, result.last, result.stats);
  }
  result.v_hat.resize(n);
  parallel_for(n, [&](std::size_t i) {
    result.v_hat[i] = personalized_output(alphas[i], result.last[i], fed, model, cfg.smoothness, cfg.domain);
  });
  return result;
}

Vector reference_minimizer(const MixWeights& alpha, const Federation& fed, const LossModel& model,
                           const Domain& domain, double tol) {
  const auto d = static_cast<Eigen::Index>(fed.dim());
  const double inv_n = 1.0 / static_cast<double>(fed.size());

  if (model.kind == LossKind::kRidge) {
    Matrix h = Matrix::Zero(d, d);
    Vector b = Vector::Zero(d);
    for (std::size_t j = 0; j < fed.size(); ++j) {
      if (alpha[j] == 0.0) continue;
      const Dataset& data = fed.shards[j].train;
      const double w = alpha[j] * inv_n / static_cast<double>(data.rows());
      h += w * (data.features.transpose() * data.features);
      h.diagonal().array() += alpha[j] * inv_n * model.reg;
      b += w * (data.features.transpose() * data.labels);
    }
    const Vector v = h.ldlt().solve(b);
    if (v.allFinite() && (h * v - b).norm() <= 1e-9 * std::max(1.0, b.norm()) && domain.contains(v)) return v;
  }

  double smooth = 0.0;
  double convex = 0.0;
  for (std::size_t j = 0; j < fed.size(); ++j) {
    if (alpha[j] == 0.0) continue;
    const CurvatureConstants c = estimate_constants(model, fed.shards[j].train);
    smooth += alpha[j] * inv_n * c.smoothness;
    convex += alpha[j] * inv_n * c.strong_convexity;
  }
  if (!(convex > 0.0)) throw NumericError("reference solve: objective is not strongly convex");
  const double step = 1.0 / smooth;
  const double root_kappa = std::sqrt(smooth / convex);
  const double momentum = (root_kappa - 1.0) / (root_kappa + 1.0);

  Vector x = Vector::Zero(d);
  Vector y = x;
  constexpr int kMaxIter = 500000;
  for (int it = 0; it < kMaxIter; ++it) {
    const Vector next = domain.project(y - step * phi_grad(alpha, y, fed, model));
    // Gradient mapping at y.
    if ((next - y).norm() / step <= tol) return next;
    y = next + momentum * (next - x);
    x = next;
  }
  throw NumericError("reference solve: no convergence to tolerance " + std::to_string(tol));
}

std::vector<double> epoch_suboptimality(const std::vector<Vector>& models, const std::vector<MixWeights>& alphas,
                                        const Federation& fed, const LossModel& model, const Domain& domain) {
  const std::size_t n = fed.size();
  check_alphas(alphas, n);
  if (models.size() != n) throw DimensionError("suboptimality: one model per client required");
  std::vector<double> gap(n);
  parallel_for(n, [&](std::size_t i) {
    const Vector best = reference_minimizer(alphas[i], fed, model, domain);
    gap[i] = phi(alphas[i], models[i], fed, model) - phi(alphas[i], best, fed, model);
  });
  return gap;
}

}  // namespace perm
