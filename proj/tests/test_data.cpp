#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cae/data.hpp"
#include "cae/errors.hpp"

using namespace cae;
using namespace cae::data;

namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "cae_unit";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("toy surface formula") {
  const Vector v = toy_surface(1.5, 2.0);
  CHECK(v(0) == doctest::Approx(4 * 1.5 * std::sin(2.0)));
  CHECK(v(1) == doctest::Approx(1.5 * 4.0));
  CHECK(v(2) == doctest::Approx(20 * std::cos(1.5) / 5.0));
}

TEST_CASE("noiseless toy data fills the unit cube exactly") {
  ToyOptions o;
  o.count = 500;
  o.noise_sigma = 0.0;
  const auto d = gen_toy(o);
  CHECK(d.size() == 500);
  CHECK(d.points.minCoeff() == 0.0);
  CHECK(d.points.maxCoeff() == 1.0);
  REQUIRE(d.metadata.normalization);
  const Matrix raw = invert_normalization(d.points, *d.metadata.normalization);
  for (Index i = 0; i < 5; ++i) {
    CHECK((raw.row(i).transpose() - toy_surface(d.labels(i, 0), d.labels(i, 1))).norm() < 1e-10);
  }
  CHECK(d.label_column("y") == 1);
  CHECK_THROWS(d.label_column("z"));
}

TEST_CASE("generators are seeded") {
  CHECK(gen_circle(10, 3).points == gen_circle(10, 3).points);
  CHECK(gen_circle(10, 3).points != gen_circle(10, 4).points);
  CHECK(gen_s_curve(10, 1).points == gen_s_curve(10, 1).points);
}

TEST_CASE("circle points lie on the unit circle") {
  const auto d = gen_circle(100, 0);
  CHECK((d.points.rowwise().norm().array() - 1.0).abs().maxCoeff() < 1e-12);
  const auto dense = gen_circle_dense(8);
  CHECK(dense.points(2, 0) == doctest::Approx(0.0));
  CHECK(dense.points(2, 1) == doctest::Approx(1.0));
}

TEST_CASE("s-curve is rescaled onto [-4, 4] through analytic bounds") {
  const auto d = gen_s_curve(2000, 2);
  CHECK(d.points.minCoeff() >= -4.0);
  CHECK(d.points.maxCoeff() <= 4.0);
  const Vector p = s_curve_point(0.0, 1.0);
  CHECK(p(0) == doctest::Approx(0.0));
  CHECK(p(2) == doctest::Approx(0.0));
}

TEST_CASE("warped cube is a 3-parameter manifold in R^5") {
  const auto d = gen_warped_cube(200, 1);
  CHECK(d.ambient_dimension() == 5);
  CHECK(d.labels.cols() == 3);
  CHECK((d.points.leftCols(3) - d.labels).norm() < 1e-12);
}

TEST_CASE("unitary embedding preserves pairwise distances") {
  const auto d = gen_circle(20, 1);
  const auto e = embed_unitary(d, 6, 9);
  CHECK(e.ambient_dimension() == 6);
  for (Index i = 1; i < 20; ++i) {
    CHECK((e.points.row(i) - e.points.row(0)).norm() == doctest::Approx((d.points.row(i) - d.points.row(0)).norm()));
  }
  const Matrix q = random_truncated_unitary(6, 2, 9);
  CHECK((q.transpose() * q - Matrix::Identity(2, 2)).norm() < 1e-12);
  CHECK_THROWS(embed_unitary(d, 1, 0));
}

TEST_CASE("gaussian noise has the requested scale") {
  Dataset d;
  d.points = Matrix::Zero(20000, 2);
  const auto n = add_gaussian_noise(d, 0.5, 3);
  const double var = n.points.squaredNorm() / static_cast<double>(n.points.size());
  CHECK(var == doctest::Approx(0.25).epsilon(0.03));
  CHECK(add_gaussian_noise(d, 0.0, 3).points == d.points);
  CHECK_THROWS(add_gaussian_noise(d, -1.0, 3));
}

TEST_CASE("normalization round-trips and names a constant column") {
  Dataset d;
  d.points.resize(3, 2);
  d.points << 1, 5, 2, 7, 4, 6;
  const auto [norm, rec] = normalize_unit_cube(d);
  CHECK(norm.points.col(0).minCoeff() == 0.0);
  CHECK(norm.points.col(1).maxCoeff() == 1.0);
  CHECK(invert_normalization(norm.points, rec).isApprox(d.points));
  d.points.col(1).setConstant(3.0);
  try {
    (void)normalize_unit_cube(d);
    FAIL("expected a DegenerateError");
  } catch (const DegenerateError& e) {
    CHECK(std::string(e.what()).find('2') != std::string::npos);
  }
}

TEST_CASE("split is seeded and partitions the rows") {
  const auto d = gen_circle(11, 0);
  const auto [a, b] = split(d, 0.5, 4);
  CHECK(a.size() + b.size() == 11);
  CHECK(a.size() == 6);
  CHECK(split(d, 0.5, 4).first.points == a.points);
}

TEST_CASE("CSV round-trip is bit exact") {
  ToyOptions o;
  o.count = 50;
  const auto d = gen_toy(o);
  const auto path = temp_file("toy.csv");
  save_csv(d, path);
  const auto back = load_csv(path);
  CHECK(back.points == d.points);
  CHECK(back.labels == d.labels);
  CHECK(back.label_names == d.label_names);
}

TEST_CASE("CSV parse errors carry the line number") {
  const auto path = temp_file("bad.csv");
  {
    std::ofstream out(path);
    out << "x_1,x_2\n1,2\n3,oops\n";
  }
  try {
    (void)load_csv(path);
    FAIL("expected a ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  {
    std::ofstream out(path);
    out << "x_1,x_2\n1,2\n3\n";
  }
  CHECK_THROWS_AS(load_csv(path), ParseError);
  CHECK_THROWS(load_csv(temp_file("missing.csv")));
}

TEST_CASE("metadata JSON round-trip") {
  auto d = embed_unitary(gen_circle(5, 0), 4, 2);
  d.metadata.normalization = NormalizationRecord{Vector::Zero(4), Vector::Ones(4)};
  const auto back = metadata_from_json(nlohmann::json::parse(metadata_json(d.metadata).dump()));
  CHECK(back.generator == d.metadata.generator);
  REQUIRE(back.embedding);
  CHECK(*back.embedding == *d.metadata.embedding);
  REQUIRE(back.normalization);
  CHECK(back.normalization->max == Vector::Ones(4));
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345.678}) CHECK(std::stod(format_double(v)) == v);
}

TEST_CASE("validate rejects non-finite data") {
  Dataset d;
  d.points = Matrix::Zero(2, 2);
  CHECK_NOTHROW(validate(d));
  d.points(1, 1) = std::nan("");
  CHECK_THROWS(validate(d));
  CHECK_THROWS(validate(Dataset{}));
}
