#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "cae/errors.hpp"
#include "cae/geometry.hpp"

using namespace cae;
using namespace cae::geometry;

namespace {

Matrix random_points(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

}  // namespace

TEST_CASE("knn on a line excludes the query and breaks ties low") {
  Matrix p(5, 1);
  p << 0, 1, 2, 3, 4;
  CHECK(knn(p, 2, 2) == std::vector<Index>{1, 3});
  CHECK(knn(p, 0, 3) == std::vector<Index>{1, 2, 3});
  CHECK_THROWS_AS(knn(p, 0, 5), ArgumentError);
  CHECK_THROWS_AS(knn(p, 7, 1), ArgumentError);
}

TEST_CASE("knn equals brute-force sorting") {
  const Matrix p = random_points(60, 3, 1);
  for (Index q : {0, 17, 59}) {
    std::vector<Index> idx;
    for (Index i = 0; i < p.rows(); ++i)
      if (i != q) idx.push_back(i);
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) {
      return (p.row(a) - p.row(q)).squaredNorm() < (p.row(b) - p.row(q)).squaredNorm();
    });
    idx.resize(8);
    CHECK(knn(p, q, 8) == idx);
  }
}

TEST_CASE("local PCA spectrum is descending and sums to the covariance trace") {
  const Matrix p = random_points(40, 4, 2);
  const auto pca = local_pca(p);
  const Matrix cov = sample_covariance(p);
  CHECK(pca.eigenvalues.sum() == doctest::Approx(cov.trace()).epsilon(1e-12));
  for (Index i = 1; i < pca.eigenvalues.size(); ++i) CHECK(pca.eigenvalues(i) <= pca.eigenvalues(i - 1));
  CHECK((pca.eigenvectors.transpose() * pca.eigenvectors - Matrix::Identity(4, 4)).norm() < 1e-12);
  for (Index c = 0; c < 4; ++c) {
    Index arg = 0;
    pca.eigenvectors.col(c).cwiseAbs().maxCoeff(&arg);
    CHECK(pca.eigenvectors(arg, c) > 0);
  }
}

TEST_CASE("local PCA of points on the x-axis") {
  Matrix p(4, 2);
  p << 0, 0, 1, 0, 2, 0, 3, 0;
  const auto pca = local_pca(p);
  CHECK(pca.eigenvalues(0) == doctest::Approx(5.0 / 3.0));
  CHECK(pca.eigenvalues(1) == doctest::Approx(0.0));
  CHECK(std::abs(pca.eigenvectors(0, 0)) == doctest::Approx(1.0));
  CHECK_THROWS_AS(local_pca(Matrix::Ones(3, 2)), DegenerateError);
}

TEST_CASE("gram_schmidt produces an orthogonal family with preserved span") {
  std::vector<Vector> v;
  const Matrix m = random_points(5, 3, 3);
  for (Index c = 0; c < 3; ++c) v.push_back(m.col(c));
  for (bool normalize : {false, true}) {
    const auto q = gram_schmidt(v, normalize);
    Matrix Q(5, 3);
    for (Index c = 0; c < 3; ++c) Q.col(c) = q[static_cast<std::size_t>(c)];
    const Matrix gram = Q.transpose() * Q;
    const double scale = gram.diagonal().maxCoeff();
    CHECK((gram - Matrix(gram.diagonal().asDiagonal())).cwiseAbs().maxCoeff() < 1e-12 * scale);
    if (normalize) CHECK((gram - Matrix::Identity(3, 3)).norm() < 1e-12);
    CHECK(q[0].isApprox(normalize ? Vector(v[0].normalized()) : v[0]));
    // Span: m = Q R for some R.
    const Matrix r = Q.colPivHouseholderQr().solve(m);
    CHECK((Q * r - m).norm() < 1e-10);
  }
}

TEST_CASE("gram_schmidt rejects dependent input") {
  const Vector a = Vector::LinSpaced(3, 1, 3);
  CHECK_THROWS_AS(gram_schmidt({a, 2 * a}), RankError);
  CHECK(gram_schmidt({}).empty());
}

TEST_CASE("projection is idempotent and contracting") {
  const Matrix p = random_points(30, 5, 4);
  const auto pca = local_pca(p);
  const Matrix basis = pca.eigenvectors.leftCols(2);
  for (int t = 0; t < 10; ++t) {
    const Vector v = random_points(5, 1, 100 + t).col(0);
    const Vector pv = project_to_tangent(v, basis);
    CHECK((project_to_tangent(pv, basis) - pv).norm() < 1e-12);
    CHECK(pv.norm() <= v.norm() + 1e-12);
    CHECK((basis.transpose() * (v - pv)).norm() < 1e-12);
  }
  CHECK_THROWS_AS(project_to_tangent(Vector::Zero(4), basis), ShapeError);
}

TEST_CASE("pairwise_orthogonality sums pair penalties") {
  Vector a(2), b(2), c(2);
  a << 1, 0;
  b << 0, 1;
  c << 1, 1;
  CHECK(pairwise_orthogonality({a, b}, OrthoNorm::L2) == 0.0);
  CHECK(pairwise_orthogonality({a, c}, OrthoNorm::L2) == doctest::Approx(1.0));
  CHECK(pairwise_orthogonality({a, -2 * c, b}, OrthoNorm::L1) == doctest::Approx(2 + 0 + 2));
  CHECK(pairwise_orthogonality({a, -2 * c, b}, OrthoNorm::L2) == doctest::Approx(4 + 0 + 4));
  CHECK(pairwise_orthogonality({a}, OrthoNorm::L2) == 0.0);
}

TEST_CASE("tangent frames of a plane in R^3 span the plane") {
  Matrix p = random_points(80, 3, 5);
  p.col(2).setZero();
  for (const NeighborhoodSpec& spec : {NeighborhoodSpec{KNearest{8}}, NeighborhoodSpec{RadiusScale{1.5}},
                                       NeighborhoodSpec{KMeansClusters{6, 1, 100}}}) {
    const auto set = tangent_frames(p, spec, 2);
    REQUIRE(set.size() == 80);
    CHECK(set.tangent_dimension == 2);
    for (const auto& f : set.frames) {
      CHECK(f.basis.rows() == 3);
      CHECK(std::abs(f.basis(2, 0)) < 1e-10);
      CHECK(std::abs(f.basis(2, 1)) < 1e-10);
      CHECK((f.basis.transpose() * f.basis - Matrix::Identity(2, 2)).norm() < 1e-12);
    }
  }
  CHECK_THROWS_AS(tangent_frames(p, KNearest{2}, 2), ArgumentError);
}

TEST_CASE("kmeans labels every point with a valid cluster and is seeded") {
  const Matrix p = random_points(50, 2, 6);
  const auto a = kmeans(p, 5, 3);
  CHECK(a == kmeans(p, 5, 3));
  CHECK(a.size() == 50);
  for (Index l : a) CHECK((l >= 0 && l < 5));
  CHECK_THROWS(kmeans(p, 0, 1));
}

TEST_CASE("tangent frames survive a JSON round-trip") {
  const Matrix p = random_points(20, 3, 7);
  const auto set = tangent_frames(p, KNearest{5}, 2);
  const auto back = frames_from_json(nlohmann::json::parse(to_json(set).dump()));
  REQUIRE(back.size() == set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    CHECK(back.frames[i].basis == set.frames[i].basis);
    CHECK(back.frames[i].neighbors == set.frames[i].neighbors);
  }
}
