#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>

#include "perm/numeric.hpp"

namespace perm {

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Feature rows with aligned labels (+/-1 for classification, real for regression).
struct Dataset {
  FeatureMatrix features;
  Vector labels;

  std::size_t rows() const noexcept { return static_cast<std::size_t>(features.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(features.cols()); }
  void validate() const;
};

/// One client's data. Objectives are evaluated on `train`; `eval` is held out.
struct Shard {
  Dataset train;
  Dataset eval;

  std::size_t n() const noexcept { return train.rows(); }
  std::size_t dim() const noexcept { return train.dim(); }
};

enum class LossKind { kRidge, kLogistic };

std::string_view to_string(LossKind kind);
LossKind loss_kind_from_string(std::string_view name);

/// Per-sample loss plus an l2 penalty (reg / 2) * |w|^2.
struct LossModel {
  static constexpr double kDefaultLogisticReg = 1e-2;

  LossKind kind = LossKind::kLogistic;
  double reg = kDefaultLogisticReg;

  static LossModel ridge(double reg = 0.0) { return {LossKind::kRidge, reg}; }
  static LossModel logistic(double reg = kDefaultLogisticReg) { return {LossKind::kLogistic, reg}; }

  /// Logistic needs reg > 0 for strong convexity; reg must be finite and >= 0.
  void validate() const;
};

double loss(const LossModel& model, const Vector& w, const Dataset& data);
Vector grad(const LossModel& model, const Vector& w, const Dataset& data);

/// Gradient of the single-sample loss at `index`, including the penalty term.
Vector sample_grad(const LossModel& model, const Vector& w, const Dataset& data, std::size_t index);

/// Mean over `batch` (a multiset of row indices) of the single-sample
/// gradients, plus the penalty term. A batch of all rows in order
/// reproduces `grad` bit for bit.
Vector stoch_grad(const LossModel& model, const Vector& w, const Dataset& data,
                  std::span<const std::size_t> batch);

/// (1/n) sum_j |grad_j(w) - grad(w)|^2: the population variance of the
/// single-sample gradients.
double grad_variance_diag(const LossModel& model, const Vector& w, const Dataset& data);

class Stream;

/// How a "stochastic" gradient is drawn: one uniformly sampled row (with
/// replacement) or the exact full-batch gradient.
enum class Sampling { kSingleSample, kFullBatch };

Vector sampled_grad(const LossModel& model, const Vector& w, const Dataset& data, Sampling sampling,
                    Stream& rng);

/// Fraction of rows with sign(w.x) == label; zero margin predicts +1.
double accuracy(const Vector& w, const Dataset& data);

struct CurvatureConstants {
  double smoothness;        // L
  double strong_convexity;  // mu
};

/// Smoothness and strong-convexity constants from the spectrum of (1/n) X^T X,
/// computed by power iteration.
CurvatureConstants estimate_constants(const LossModel& model, const Dataset& data);
/// Worst case over shards: max L and min mu.
CurvatureConstants estimate_constants(const LossModel& model, std::span<const Shard> shards);

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
double power_iteration_max_eig(const Matrix& a, double rel_tol = 1e-10, int max_iter = 200000);

inline double loss(const LossModel& m, const Vector& w, const Shard& s) { return loss(m, w, s.train); }
inline Vector grad(const LossModel& m, const Vector& w, const Shard& s) { return grad(m, w, s.train); }

}  // namespace perm
