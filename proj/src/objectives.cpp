#include "perm/objectives.hpp"

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "perm/errors.hpp"
#include "perm/rng.hpp"

namespace perm {
namespace {

void check_dims(const Vector& w, const Dataset& data, const char* op) {
  if (static_cast<std::size_t>(w.size()) != data.dim())
    throw DimensionError(std::string(op) + ": model dimension " + std::to_string(w.size()) +
                         " does not match feature width " + std::to_string(data.dim()));
}

// log(1 + exp(-m)) without overflow.
double softplus_neg(double m) { return m > 0.0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m)); }

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double sample_loss(LossKind kind, double prediction, double label) {
  if (kind == LossKind::kRidge) {
    const double r = prediction - label;
    return 0.5 * r * r;
  }
  return softplus_neg(label * prediction);
}

// d loss / d prediction; the sample gradient is this times x.
double sample_slope(LossKind kind, double prediction, double label) {
  if (kind == LossKind::kRidge) return prediction - label;
  return -label * sigmoid(-label * prediction);
}

}  // namespace

void Dataset::validate() const {
  if (features.rows() != labels.size()) throw DimensionError("dataset: feature rows and labels are not aligned");
}

std::string_view to_string(LossKind kind) { return kind == LossKind::kRidge ? "ridge" : "logistic"; }

LossKind loss_kind_from_string(std::string_view name) {
  if (name == "ridge") return LossKind::kRidge;
  if (name == "logistic") return LossKind::kLogistic;
  throw ParameterError("unknown loss '" + std::string(name) + "' (expected ridge or logistic)");
}

void LossModel::validate() const {
  if (!std::isfinite(reg) || reg < 0.0) throw ParameterError("loss: reg must be finite and >= 0");
  if (kind == LossKind::kLogistic && reg <= 0.0)
    throw ParameterError("loss: logistic loss requires reg > 0 for strong convexity");
}

double loss(const LossModel& model, const Vector& w, const Dataset& data) {
  check_dims(w, data, "loss");
  const std::size_t n = data.rows();
  if (n == 0) throw DimensionError("loss: empty dataset");
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const auto row = static_cast<Eigen::Index>(j);
    total += sample_loss(model.kind, data.features.row(row).dot(w), data.labels[row]);
  }
  return total / static_cast<double>(n) + 0.5 * model.reg * w.squaredNorm();
}

Vector grad(const LossModel& model, const Vector& w, const Dataset& data) {
  std::vector<std::size_t> all(data.rows());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return stoch_grad(model, w, data, all);
}

Vector sample_grad(const LossModel& model, const Vector& w, const Dataset& data, std::size_t index) {
  const std::size_t one[] = {index};
  return stoch_grad(model, w, data, one);
}

Vector stoch_grad(const LossModel& model, const Vector& w, const Dataset& data,
                  std::span<const std::size_t> batch) {
  check_dims(w, data, "stoch_grad");
  if (batch.empty()) throw ParameterError("stoch_grad: empty batch");
  Vector acc = Vector::Zero(w.size());
  for (std::size_t j : batch) {
    if (j >= data.rows()) throw ParameterError("stoch_grad: sample index " + std::to_string(j) + " out of range");
    const auto row = static_cast<Eigen::Index>(j);
    const auto x = data.features.row(row);
    acc += sample_slope(model.kind, x.dot(w), data.labels[row]) * x.transpose();
  }
  acc /= static_cast<double>(batch.size());
  acc += model.reg * w;
  return acc;
}

Vector sampled_grad(const LossModel& model, const Vector& w, const Dataset& data, Sampling sampling,
                    Stream& rng) {
  if (sampling == Sampling::kFullBatch) return grad(model, w, data);
  return sample_grad(model, w, data, rng.index(data.rows()));
}

double grad_variance_diag(const LossModel& model, const Vector& w, const Dataset& data) {
  const Vector mean = grad(model, w, data);
  double total = 0.0;
  for (std::size_t j = 0; j < data.rows(); ++j) total += (sample_grad(model, w, data, j) - mean).squaredNorm();
  return total / static_cast<double>(data.rows());
}

double accuracy(const Vector& w, const Dataset& data) {
  check_dims(w, data, "accuracy");
  if (data.rows() == 0) throw DimensionError("accuracy: empty dataset");
  std::size_t hits = 0;
  for (std::size_t j = 0; j < data.rows(); ++j) {
    const auto row = static_cast<Eigen::Index>(j);
    const double predicted = data.features.row(row).dot(w) >= 0.0 ? 1.0 : -1.0;
    if (predicted == data.labels[row]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.rows());
}

double power_iteration_max_eig(const Matrix& a, double rel_tol, int max_iter) {
  const Eigen::Index d = a.rows();
  if (d == 0) return 0.0;
  // Deterministic start with a component along every axis.
  Vector v = Vector::LinSpaced(d, 1.0, 2.0);
  v.normalize();
  double estimate = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Vector next = a * v;
    const double norm = next.norm();
    if (norm == 0.0) return 0.0;
    next /= norm;
    const double rayleigh = next.dot(a * next);
    const bool done = std::abs(rayleigh - estimate) <= rel_tol * std::abs(rayleigh);
    estimate = rayleigh;
    v = std::move(next);
    if (done && it > 2) break;
  }
  return estimate;
}

CurvatureConstants estimate_constants(const LossModel& model, const Dataset& data) {
  model.validate();
  if (data.rows() == 0) throw DimensionError("estimate_constants: empty dataset");
  const Matrix gram =
      (data.features.transpose() * data.features) / static_cast<double>(data.rows());
  const double top = power_iteration_max_eig(gram);
  if (model.kind == LossKind::kLogistic) return {top / 4.0 + model.reg, model.reg};

  // Smallest eigenvalue via the shifted matrix top*I - gram.
  const Matrix shifted = top * Matrix::Identity(gram.rows(), gram.cols()) - gram;
  const double bottom = std::max(0.0, top - power_iteration_max_eig(shifted));
  return {top + model.reg, bottom + model.reg};
}

CurvatureConstants estimate_constants(const LossModel& model, std::span<const Shard> shards) {
  if (shards.empty()) throw DimensionError("estimate_constants: no shards");
  CurvatureConstants worst = estimate_constants(model, shards.front().train);
  for (const Shard& s : shards.subspan(1)) {
    const CurvatureConstants c = estimate_constants(model, s.train);
    worst.smoothness = std::max(worst.smoothness, c.smoothness);
    worst.strong_convexity = std::min(worst.strong_convexity, c.strong_convexity);
  }
  return worst;
}

}  // namespace perm
