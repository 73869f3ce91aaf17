#include "perm/discrepancy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "perm/errors.hpp"
#include "perm/parallel.hpp"
#include "perm/rng.hpp"

namespace perm {
namespace {

void check_row(std::span<const double> z_row, std::span<const double> counts) {
  if (z_row.empty()) throw DimensionError("alpha solver: empty dissimilarity row");
  if (z_row.size() != counts.size()) throw DimensionError("alpha solver: row and counts differ in length");
  for (double n : counts)
    if (!(n > 0.0) || !std::isfinite(n)) throw ParameterError("alpha solver: sample counts must be positive");
  for (double z : z_row)
    if (!std::isfinite(z)) throw NumericError("alpha solver: non-finite dissimilarity");
}

}  // namespace

double DissimilarityMatrix::mean_row(std::size_t i) const {
  return z.row(static_cast<Eigen::Index>(i)).mean();
}

void AlphaSolverConfig::validate() const {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ParameterError("alpha solver: lambda must be positive");
  if (t_alpha < 1) throw ParameterError("alpha solver: t_alpha must be >= 1");
  if (step && !(*step > 0.0)) throw ParameterError("alpha solver: step must be positive");
}

double AlphaSolverConfig::step_for(std::span<const double> counts) const {
  if (step) return *step;
  const double n_min = *std::min_element(counts.begin(), counts.end());
  return n_min / (2.0 * lambda);
}

double alpha_kappa(std::span<const double> counts, double lambda) {
  return *std::max_element(counts.begin(), counts.end()) / (2.0 * lambda);
}

double alpha_objective(std::span<const double> z_row, std::span<const double> counts, double lambda,
                       const Vector& alpha) {
  double linear = 0.0;
  double quadratic = 0.0;
  for (std::size_t j = 0; j < z_row.size(); ++j) {
    const double a = alpha[static_cast<Eigen::Index>(j)];
    linear += a * z_row[j];
    quadratic += a * a / counts[j];
  }
  return linear + lambda * quadratic;
}

MixWeights solve_alpha_gd(std::span<const double> z_row, std::span<const double> counts,
                          const AlphaSolverConfig& cfg, const MixWeights* warm_start, std::vector<double>* trace) {
  cfg.validate();
  check_row(z_row, counts);
  const auto n = static_cast<Eigen::Index>(z_row.size());
  const Eigen::Map<const Vector> z(z_row.data(), n);
  const Eigen::Map<const Vector> cnt(counts.data(), n);
  if (warm_start && warm_start->size() != z_row.size()) throw DimensionError("alpha solver: warm start has wrong length");

  const double step = cfg.step_for(counts);
  Vector alpha = warm_start ? warm_start->values() : MixWeights::uniform(z_row.size()).values();
  if (trace) trace->push_back(alpha_objective(z_row, counts, cfg.lambda, alpha));
  for (std::size_t t = 0; t < cfg.t_alpha; ++t) {
    const Vector gradient = z + (2.0 * cfg.lambda) * alpha.cwiseQuotient(cnt);
    alpha = project_simplex(alpha - step * gradient).values();
    if (trace) trace->push_back(alpha_objective(z_row, counts, cfg.lambda, alpha));
  }
  return MixWeights(std::move(alpha));
}

MixWeights solve_alpha_kkt(std::span<const double> z_row, std::span<const double> counts, double lambda) {
  if (!(lambda > 0.0)) throw ParameterError("alpha solver: lambda must be positive");
  check_row(z_row, counts);
  const std::size_t n = z_row.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return z_row[a] < z_row[b]; });

  // With the k smallest z active: sum_j (nu - z_j) c_j = 1, c_j = n_j / (2 lambda).
  double weight_sum = 0.0;
  double weighted_z = 0.0;
  double nu = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double c = counts[order[k]] / (2.0 * lambda);
    weight_sum += c;
    weighted_z += c * z_row[order[k]];
    nu = (1.0 + weighted_z) / weight_sum;
    if (k + 1 == n || nu <= z_row[order[k + 1]]) break;
  }

  Vector alpha(static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j)
    alpha[static_cast<Eigen::Index>(j)] = std::max(0.0, (nu - z_row[j]) * counts[j] / (2.0 * lambda));
  alpha /= alpha.sum();
  return MixWeights(std::move(alpha));
}

void LocalSgdConfig::validate(std::size_t n_clients) const {
  if (!(step > 0.0) || !std::isfinite(step)) throw ParameterError("local sgd: step (gamma) must be positive");
  if (local_steps < 1) throw ParameterError("local sgd: local steps K must be >= 1");
  if (rounds < 1) throw ParameterError("local sgd: rounds R must be >= 1");
  if (!(domain.diameter > 0.0)) throw ParameterError("local sgd: domain diameter must be positive");
  if (!weights.empty()) {
    if (weights.size() != n_clients) throw DimensionError("local sgd: one averaging weight per client required");
    MixWeights(Eigen::Map<const Vector>(weights.data(), static_cast<Eigen::Index>(weights.size())));
  }
}

double default_local_sgd_step(double mu, std::size_t rounds, std::size_t local_steps, double multiplier) {
  if (!(mu > 0.0)) throw ParameterError("default step: strong convexity must be positive");
  const double rk = static_cast<double>(rounds) * static_cast<double>(local_steps);
  return multiplier * std::max(1.0, std::log(rk)) / (mu * rk);
}

Vector local_sgd_global(const Federation& fed, const LossModel& model, const LocalSgdConfig& cfg, const Vector& init,
                        const RoundObserver& observer) {
  fed.validate();
  model.validate();
  const std::size_t n = fed.size();
  cfg.validate(n);
  const auto d = static_cast<Eigen::Index>(fed.dim());
  if (init.size() != 0 && init.size() != d) throw DimensionError("local sgd: initial model has wrong dimension");

  Vector w = init.size() == 0 ? Vector::Zero(d) : cfg.domain.project(init);
  std::vector<Vector> local(n);
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    parallel_for(n, [&](std::size_t i) {
      Stream rng(cfg.seed, StreamTag::kLocalSgd, {r, i});
      Vector wi = w;
      for (std::size_t t = 0; t < cfg.local_steps; ++t)
        wi -= cfg.step * sampled_grad(model, wi, fed.shards[i].train, cfg.sampling, rng);
      local[i] = std::move(wi);
    });
    Vector sum = Vector::Zero(d);
    for (std::size_t i = 0; i < n; ++i)
      sum += (cfg.weights.empty() ? 1.0 / static_cast<double>(n) : cfg.weights[i]) * local[i];
    require_finite(sum, "local sgd: averaged model (step size too large?)");
    w = cfg.domain.project(sum);
    if (observer) observer(r + 1, w);
  }
  return w;
}

DissimilarityMatrix pairwise_dissimilarity(const Federation& fed, const LossModel& model, const Vector& w) {
  fed.validate();
  if (static_cast<std::size_t>(w.size()) != fed.dim())
    throw DimensionError("dissimilarity: model dimension does not match the federation");
  const std::size_t n = fed.size();
  std::vector<Vector> grads(n);
  parallel_for(n, [&](std::size_t i) { grads[i] = grad(model, w, fed.shards[i].train); });

  DissimilarityMatrix out;
  out.ref_model = w;
  out.z = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = (grads[i] - grads[j]).squaredNorm();
      out.z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      out.z(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }

  Vector mean = Vector::Zero(w.size());
  for (const Vector& g : grads) mean += g;
  mean /= static_cast<double>(n);
  for (const Vector& g : grads) out.heterogeneity_at_ref = std::max(out.heterogeneity_at_ref, (g - mean).squaredNorm());
  return out;
}

std::vector<MixWeights> solve_all_alphas(const DissimilarityMatrix& z, std::span<const double> counts,
                                         const AlphaSolverConfig& cfg, const std::vector<MixWeights>* warm_start) {
  const std::size_t n = z.size();
  if (counts.size() != n) throw DimensionError("alpha solver: one count per client required");
  if (warm_start && warm_start->size() != n) throw DimensionError("alpha solver: one warm start per client required");
  std::vector<MixWeights> out(n);
  parallel_for(n, [&](std::size_t i) {
    const Vector row = z.z.row(static_cast<Eigen::Index>(i)).transpose();
    out[i] = solve_alpha_gd(std::span<const double>(row.data(), n), counts, cfg,
                            warm_start ? &(*warm_start)[i] : nullptr);
  });
  return out;
}

std::vector<MixWeights> estimate_all_alphas(const Federation& fed, const LossModel& model, const Vector& w,
                                            const AlphaSolverConfig& cfg) {
  const auto counts = fed.train_counts();
  return solve_all_alphas(pairwise_dissimilarity(fed, model, w), counts, cfg);
}

Matrix alpha_matrix(const std::vector<MixWeights>& alphas) {
  const auto n = static_cast<Eigen::Index>(alphas.size());
  Matrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (alphas[static_cast<std::size_t>(i)].size() != alphas.size()) throw DimensionError("alpha matrix: ragged rows");
    m.row(i) = alphas[static_cast<std::size_t>(i)].values().transpose();
  }
  return m;
}

}  // namespace perm
