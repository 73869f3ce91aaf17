#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "perm/datagen.hpp"
#include "perm/rng.hpp"

namespace testing {

using namespace perm;

// Dense Gaussian rows with a noisy linear target (ridge) or its sign (logistic).
inline Dataset random_dataset(std::size_t rows, std::size_t dim, std::uint64_t seed, std::uint64_t key,
                              bool classification = false) {
  Stream rng(seed, StreamTag::kFeatures, {key, 991});
  Dataset d;
  d.features.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
  d.labels.resize(static_cast<Eigen::Index>(rows));
  Vector truth(static_cast<Eigen::Index>(dim));
  for (auto& t : truth) t = rng.normal();
  for (Eigen::Index r = 0; r < d.features.rows(); ++r) {
    for (Eigen::Index c = 0; c < d.features.cols(); ++c) d.features(r, c) = rng.normal();
    const double y = d.features.row(r).dot(truth) + 0.3 * rng.normal();
    d.labels[r] = classification ? (y >= 0.0 ? 1.0 : -1.0) : y;
  }
  return d;
}

inline Federation random_federation(std::size_t n_clients, std::size_t rows, std::size_t dim, std::uint64_t seed,
                                    bool classification = false, bool identical = false) {
  Federation fed;
  for (std::size_t i = 0; i < n_clients; ++i) {
    const std::uint64_t key = identical ? 0 : i;
    Shard s;
    s.train = random_dataset(rows, dim, seed, key, classification);
    s.eval = random_dataset(std::max<std::size_t>(2, rows / 4), dim, seed + 7, key, classification);
    fed.shards.push_back(std::move(s));
    fed.group_of.push_back(0);
  }
  return fed;
}

// Clients whose targets scatter around a shared one; eval rows come from the same client law.
inline Federation related_federation(std::size_t n_clients, std::size_t rows, std::size_t dim, std::uint64_t seed,
                                     double spread, double noise) {
  Stream shared(seed, StreamTag::kLabeler);
  Vector base(static_cast<Eigen::Index>(dim));
  for (auto& b : base) b = shared.normal();
  Federation fed;
  for (std::size_t i = 0; i < n_clients; ++i) {
    Stream rng(seed, StreamTag::kFeatures, {i});
    Vector truth = base;
    for (auto& t : truth) t += spread * rng.normal();
    Shard s;
    for (Dataset* d : {&s.train, &s.eval}) {
      d->features.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
      d->labels.resize(static_cast<Eigen::Index>(rows));
      for (Eigen::Index r = 0; r < d->features.rows(); ++r) {
        for (Eigen::Index c = 0; c < d->features.cols(); ++c) d->features(r, c) = rng.normal();
        d->labels[r] = d->features.row(r).dot(truth) + noise * rng.normal();
      }
    }
    fed.shards.push_back(std::move(s));
    fed.group_of.push_back(0);
  }
  return fed;
}

inline double rel_err(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max(1e-12, b.norm());
}

// Minimizer of sum_j a_j z_j + lam sum_j a_j^2 / n_j over the 2-simplex by
// scanning a_1 on a grid and solving the remaining 1-D parabola exactly.
inline Vector grid_alpha3(const std::vector<double>& z, const std::vector<double>& n, double lam, double step) {
  auto g = [&](double a0, double a1, double a2) {
    return a0 * z[0] + a1 * z[1] + a2 * z[2] + lam * (a0 * a0 / n[0] + a1 * a1 / n[1] + a2 * a2 / n[2]);
  };
  double best = INFINITY;
  Vector arg(3);
  const auto steps = static_cast<long>(std::llround(1.0 / step));
  for (long k = 0; k <= steps; ++k) {
    const double a0 = std::min(1.0, static_cast<double>(k) * step);
    const double rest = 1.0 - a0;
    // a1 minimizes z1 a1 + z2 (rest - a1) + lam (a1^2/n1 + (rest - a1)^2/n2) on [0, rest]
    double a1 = (z[2] - z[1] + 2.0 * lam * rest / n[2]) / (2.0 * lam * (1.0 / n[1] + 1.0 / n[2]));
    a1 = std::clamp(a1, 0.0, rest);
    const double v = g(a0, a1, rest - a1);
    if (v < best) {
      best = v;
      arg << a0, a1, rest - a1;
    }
  }
  return arg;
}

inline Vector grid_alpha2(const std::vector<double>& z, const std::vector<double>& n, double lam, double step) {
  double best = INFINITY;
  Vector arg(2);
  const auto steps = static_cast<long>(std::llround(1.0 / step));
  for (long k = 0; k <= steps; ++k) {
    const double a = std::min(1.0, static_cast<double>(k) * step);
    const double v = a * z[0] + (1 - a) * z[1] + lam * (a * a / n[0] + (1 - a) * (1 - a) / n[1]);
    if (v < best) {
      best = v;
      arg << a, 1 - a;
    }
  }
  return arg;
}

}  // namespace testing
