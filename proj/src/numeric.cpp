#include "perm/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "perm/errors.hpp"

namespace perm {

MixWeights::MixWeights(Vector weights) : weights_(std::move(weights)) {
  if (weights_.size() == 0) throw DimensionError("mix weights: empty vector");
  require_finite(weights_, "mix weights");
  if (weights_.minCoeff() < 0.0) throw NumericError("mix weights: negative entry");
  if (std::abs(weights_.sum() - 1.0) > kSimplexTol)
    throw NumericError("mix weights: entries do not sum to one");
}

MixWeights MixWeights::uniform(std::size_t n) {
  if (n == 0) throw DimensionError("mix weights: empty vector");
  return MixWeights(Vector::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n)));
}

MixWeights MixWeights::indicator(std::size_t n, std::size_t at) {
  if (at >= n) throw DimensionError("mix weights: indicator index out of range");
  Vector v = Vector::Zero(static_cast<Eigen::Index>(n));
  v[static_cast<Eigen::Index>(at)] = 1.0;
  return MixWeights(std::move(v));
}

Vector Domain::project(const Vector& v) const {
  return project_ball(v, Vector::Zero(v.size()), radius());
}

bool Domain::contains(const Vector& v, double slack) const { return v.norm() <= radius() + slack; }

void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw NumericError(std::string(what) + ": non-finite value");
}

MixWeights project_simplex(const Vector& v) {
  if (v.size() == 0) throw DimensionError("project_simplex: empty vector");
  require_finite(v, "project_simplex");

  std::vector<double> sorted(v.data(), v.data() + v.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());

  // Largest k with sorted[k-1] - (prefix_k - 1) / k strictly positive.
  double prefix = 0.0;
  double theta = 0.0;
  for (std::size_t k = 1; k <= sorted.size(); ++k) {
    prefix += sorted[k - 1];
    const double candidate = (prefix - 1.0) / static_cast<double>(k);
    if (sorted[k - 1] - candidate > 0.0) theta = candidate;
  }

  Vector out = (v.array() - theta).max(0.0).matrix();
  // Rounding can leave the sum a few ulps away from one.
  const double s = out.sum();
  if (s > 0.0) out /= s;
  return MixWeights(std::move(out));
}

Vector project_ball(const Vector& v, const Vector& center, double radius) {
  if (!(radius > 0.0)) throw ParameterError("project_ball: radius must be positive");
  if (v.size() != center.size()) throw DimensionError("project_ball: dimension mismatch");
  const Vector offset = v - center;
  const double dist = offset.norm();
  if (dist <= radius) return v;
  return center + (radius / dist) * offset;
}

Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& w, double h) {
  if (!(h > 0.0)) throw ParameterError("finite_diff_grad: step must be positive");
  Vector g(w.size());
  Vector probe = w;
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    probe[k] = w[k] + h;
    const double up = f(probe);
    probe[k] = w[k] - h;
    const double down = f(probe);
    probe[k] = w[k];
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace perm
