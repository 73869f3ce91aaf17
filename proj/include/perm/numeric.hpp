#pragma once

#include <cstddef>
#include <functional>

#include <Eigen/Dense>

namespace perm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// A point on the probability simplex: non-negative entries summing to one.
///
/// Construction validates the invariant (within `kSimplexTol`); use
/// `project_simplex` to map an arbitrary vector onto the simplex first.
class MixWeights {
 public:
  static constexpr double kSimplexTol = 1e-9;

  MixWeights() = default;
  explicit MixWeights(Vector weights);

  static MixWeights uniform(std::size_t n);
  static MixWeights indicator(std::size_t n, std::size_t at);

  const Vector& values() const noexcept { return weights_; }
  double operator[](std::size_t j) const { return weights_[static_cast<Eigen::Index>(j)]; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(weights_.size()); }

 private:
  Vector weights_;
};

/// The parameter domain: an l2 ball around the origin with the given diameter.
struct Domain {
  double diameter = 2000.0;

  double radius() const noexcept { return diameter / 2.0; }
  Vector project(const Vector& v) const;
  bool contains(const Vector& v, double slack = 1e-9) const;
};

/// Throws NumericError if any entry is NaN or infinite.
void require_finite(const Vector& v, const char* what);

/// Euclidean projection onto the probability simplex (sort and threshold).
MixWeights project_simplex(const Vector& v);

/// Euclidean projection onto the ball of `radius` around `center`.
Vector project_ball(const Vector& v, const Vector& center, double radius);

/// Central-difference gradient (f(w + h e_k) - f(w - h e_k)) / 2h.
Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& w,
                        double h = 1e-5);

}  // namespace perm
