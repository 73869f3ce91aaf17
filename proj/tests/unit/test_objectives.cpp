#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "helpers.hpp"
#include "perm/errors.hpp"
#include "perm/objectives.hpp"
#include "perm/rng.hpp"

using namespace perm;
using testing::random_dataset;
using testing::rel_err;

namespace {

Vector random_vector(std::size_t d, Stream& rng, double scale = 1.0) {
  Vector v(static_cast<Eigen::Index>(d));
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

}  // namespace

TEST_CASE("loss examples") {
  const Dataset d = random_dataset(30, 4, 1, 0, true);
  CHECK(loss(LossModel{LossKind::kLogistic, 0.0}, Vector::Zero(4), d) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  Dataset one;
  one.features = FeatureMatrix::Ones(1, 1);
  one.labels = Vector::Ones(1);
  CHECK(loss(LossModel::ridge(0.0), Vector::Zero(1), one) == doctest::Approx(0.5));

  CHECK_THROWS_AS(loss(LossModel::ridge(), Vector::Zero(3), d), DimensionError);
  CHECK_THROWS_AS(LossModel::logistic(0.0).validate(), ParameterError);
  CHECK_THROWS_AS(LossModel::ridge(-1.0).validate(), ParameterError);
  CHECK(loss_kind_from_string("ridge") == LossKind::kRidge);
  CHECK_THROWS_AS(loss_kind_from_string("hinge"), ParameterError);
}

TEST_CASE("logistic loss is stable for large margins") {
  Dataset d;
  d.features = FeatureMatrix::Constant(2, 1, 1.0);
  d.labels.resize(2);
  d.labels << 1.0, -1.0;
  Vector w(1);
  w << 800.0;
  const double l = loss(LossModel{LossKind::kLogistic, 0.0}, w, d);
  CHECK(std::isfinite(l));
  CHECK(l == doctest::Approx(400.0));
  CHECK(grad(LossModel{LossKind::kLogistic, 0.0}, w, d).allFinite());
}

TEST_CASE("ridge minimizer from the normal equations has zero gradient") {
  const Dataset d = random_dataset(50, 6, 2, 0);
  const double reg = 0.3;
  const double n = 50;
  const Matrix h = d.features.transpose() * d.features / n + reg * Matrix::Identity(6, 6);
  const Vector w = h.ldlt().solve(d.features.transpose() * d.labels / n);
  CHECK(grad(LossModel::ridge(reg), w, d).norm() < 1e-12);
}

TEST_CASE("symmetric data gives a zero logistic gradient at the origin") {
  Dataset d;
  d.features.resize(4, 2);
  d.features << 1, 2, -1, -2, 0.5, -3, -0.5, 3;
  d.labels.resize(4);
  d.labels << 1, 1, -1, -1;
  CHECK(grad(LossModel{LossKind::kLogistic, 0.0}, Vector::Zero(2), d).norm() < 1e-15);
}

TEST_CASE("zero features leave only the penalty gradient") {
  Dataset d;
  d.features = FeatureMatrix::Zero(5, 3);
  d.labels = Vector::Zero(5);
  Vector w(3);
  w << 1, -2, 3;
  CHECK((grad(LossModel::ridge(0.7), w, d) - 0.7 * w).norm() < 1e-15);
  d.labels = Vector::Ones(5);
  CHECK((grad(LossModel::logistic(0.7), w, d) - 0.7 * w).norm() < 1e-15);
}

TEST_CASE("ridge gradient has the closed form") {
  const Dataset d = random_dataset(20, 5, 4, 0);
  Stream rng(4, StreamTag::kFeatures, {1});
  const Vector w = random_vector(5, rng);
  const Vector expected = d.features.transpose() * (d.features * w - d.labels) / 20.0 + 0.2 * w;
  CHECK(rel_err(grad(LossModel::ridge(0.2), w, d), expected) < 1e-13);
}

TEST_CASE("analytic gradients match central differences") {
  Stream rng(77, StreamTag::kFeatures);
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = 1 + rng.index(20);
    const bool logistic = t % 2 == 0;
    const Dataset data = random_dataset(5 + rng.index(40), d, 100 + t, 0, logistic);
    const LossModel model{logistic ? LossKind::kLogistic : LossKind::kRidge, 0.01 + rng.uniform()};
    const Vector w = random_vector(d, rng, 0.5);
    const Vector fd = finite_diff_grad([&](const Vector& x) { return loss(model, x, data); }, w);
    CHECK(rel_err(grad(model, w, data), fd) <= 1e-5);
  }
}

TEST_CASE("stochastic gradients") {
  const Dataset d = random_dataset(17, 4, 8, 0, true);
  const LossModel model = LossModel::logistic(0.05);
  Vector w(4);
  w << 0.3, -0.1, 0.7, 0.2;
  std::vector<std::size_t> all(17);
  std::iota(all.begin(), all.end(), 0);
  const Vector full = grad(model, w, d);
  const Vector batch = stoch_grad(model, w, d, all);
  CHECK((full.array() == batch.array()).all());

  Vector avg = Vector::Zero(4);
  for (std::size_t j = 0; j < 17; ++j) avg += sample_grad(model, w, d, j);
  CHECK(rel_err(avg / 17.0, full) < 1e-14);

  const std::size_t bad = 17;
  CHECK_THROWS_AS(stoch_grad(model, w, d, std::span<const std::size_t>(&bad, 1)), ParameterError);
  CHECK_THROWS_AS(stoch_grad(model, w, d, {}), ParameterError);

  Stream rng(1, StreamTag::kLocalSgd);
  CHECK((sampled_grad(model, w, d, Sampling::kFullBatch, rng).array() == full.array()).all());
}

TEST_CASE("gradient variance diagnostic") {
  Dataset dup;
  dup.features = FeatureMatrix::Constant(6, 3, 0.4);
  dup.labels = Vector::Ones(6);
  CHECK(grad_variance_diag(LossModel::logistic(), Vector::Ones(3), dup) == doctest::Approx(0.0).epsilon(1e-30));

  const Dataset d = random_dataset(40, 5, 12, 0);
  const LossModel model = LossModel::ridge(0.1);
  const Vector w = Vector::LinSpaced(5, -1, 1);
  const Vector mean = grad(model, w, d);
  double direct = 0.0;
  for (std::size_t j = 0; j < 40; ++j) direct += (sample_grad(model, w, d, j) - mean).squaredNorm();
  CHECK(grad_variance_diag(model, w, d) == doctest::Approx(direct / 40.0).epsilon(1e-12));
}

TEST_CASE("curvature constants") {
  SUBCASE("identity rows") {
    Dataset d;
    d.features = FeatureMatrix::Identity(4, 4);
    d.labels = Vector::Zero(4);
    const auto c = estimate_constants(LossModel::ridge(0.0), d);
    CHECK(c.smoothness == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(c.strong_convexity == doctest::Approx(0.25).epsilon(1e-6));
  }
  SUBCASE("zero features") {
    Dataset d;
    d.features = FeatureMatrix::Zero(3, 2);
    d.labels = Vector::Zero(3);
    const auto c = estimate_constants(LossModel::ridge(0.4), d);
    CHECK(c.smoothness == doctest::Approx(0.4));
    CHECK(c.strong_convexity == doctest::Approx(0.4));
  }
  SUBCASE("dense eigensolver oracle") {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const std::size_t dim = 1 + s % 5;
      const Dataset d = random_dataset(12, dim, 30 + s, 0);
      const Matrix gram = d.features.transpose() * d.features / 12.0;
      Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
      const auto c = estimate_constants(LossModel::ridge(0.05), d);
      CHECK(c.smoothness == doctest::Approx(es.eigenvalues().maxCoeff() + 0.05).epsilon(1e-8));
      CHECK(c.strong_convexity == doctest::Approx(es.eigenvalues().minCoeff() + 0.05).epsilon(1e-5));
      const auto lc = estimate_constants(LossModel::logistic(0.05), d);
      CHECK(lc.smoothness == doctest::Approx(es.eigenvalues().maxCoeff() / 4 + 0.05).epsilon(1e-8));
      CHECK(lc.strong_convexity == 0.05);
    }
  }
}

TEST_CASE("estimated constants bound gradient differences and curvature") {
  Stream rng(21, StreamTag::kFeatures);
  for (int t = 0; t < 40; ++t) {
    const bool logistic = t % 2 == 1;
    const Dataset d = random_dataset(30, 6, 200 + t, 0, logistic);
    const LossModel model{logistic ? LossKind::kLogistic : LossKind::kRidge, 0.02};
    const auto c = estimate_constants(model, d);
    const Vector x = random_vector(6, rng), y = random_vector(6, rng);
    const double gap = (grad(model, x, d) - grad(model, y, d)).norm();
    CHECK(gap <= c.smoothness * (x - y).norm() * (1 + 1e-9));
    const double lower = loss(model, x, d) + grad(model, x, d).dot(y - x) + 0.5 * c.strong_convexity * (y - x).squaredNorm();
    CHECK(loss(model, y, d) >= lower - 1e-10);
  }
}

TEST_CASE("accuracy treats a zero margin as +1") {
  Dataset d;
  d.features.resize(3, 1);
  d.features << 1, -1, 0;
  d.labels.resize(3);
  d.labels << 1, 1, 1;
  Vector w(1);
  w << 2;
  CHECK(accuracy(w, d) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("power iteration") {
  Matrix a(2, 2);
  a << 2, 1, 1, 2;
  CHECK(power_iteration_max_eig(a) == doctest::Approx(3.0).epsilon(1e-10));
  CHECK(power_iteration_max_eig(Matrix::Zero(3, 3)) == 0.0);
}
