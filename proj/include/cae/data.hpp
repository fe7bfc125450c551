#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cae/nn.hpp"

namespace cae::data {

struct NormalizationRecord {
  Vector min;
  Vector max;
};

struct DatasetMetadata {
  std::string generator;
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;
  std::optional<NormalizationRecord> normalization;
  std::optional<Matrix> embedding;  // n x k, orthonormal columns
};

/// N points in R^n (rows of `points`) with optional per-point label columns.
struct Dataset {
  Matrix points;
  Matrix labels;
  std::vector<std::string> label_names;
  DatasetMetadata metadata;

  Index size() const { return points.rows(); }
  Index ambient_dimension() const { return points.cols(); }
  Index label_column(const std::string& name) const;
  Dataset subset(const std::vector<Index>& rows) const;
};

/// Throws unless N >= 1, labels align with points and every entry is finite.
void validate(const Dataset& data);

/// Phi(x, y) = (4 x sin y, x y^2, 20 cos x / (y^2 + 1)).
Vector toy_surface(double x, double y);

struct ToyOptions {
  Index count = 2500;
  std::uint64_t seed = 0;
  /// Standard deviation of Gaussian noise added in surface coordinates, before scaling.
  double noise_sigma = 0.1;
  /// Scaling to reuse (e.g. a test sample in the training scale); otherwise fitted to the noiseless sample.
  std::optional<NormalizationRecord> normalization;
};

/// Uniform (x, y) on [1,2]^2 mapped through the toy surface and min-max scaled into [0,1]^3.
/// Labels: x, y.
Dataset gen_toy(const ToyOptions& options);

/// Uniform angle on [0, 2 pi); label theta.
Dataset gen_circle(Index count, std::uint64_t seed);
/// Evenly spaced angles, for dense validation.
Dataset gen_circle_dense(Index count);

/// Unrescaled S-curve point at arc parameter t and height y.
Vector s_curve_point(double t, double y);
/// S-curve with t ~ U[-3pi/2, 3pi/2], y ~ U[0, 2], each axis rescaled onto [-4, 4]. Labels: t, y.
Dataset gen_s_curve(Index count, std::uint64_t seed);
/// Swiss roll (t cos t, h, t sin t) with t ~ U[1.5pi, 4.5pi], h ~ U[0, 21]. Labels: t, h.
Dataset gen_swiss_roll(Index count, std::uint64_t seed);

/// Smooth 3-D manifold in R^5: (u, v, w, sin(pi u) v / 2 + w^2 / 2, cos(pi w / 2) u) on [0,1]^3.
/// Used as a synthetic stand-in for the PDE data. Labels: u, v, w.
Dataset gen_warped_cube(Index count, std::uint64_t seed);

/// Thin Q factor of a seeded Gaussian matrix: n_target x k with orthonormal columns.
Matrix random_truncated_unitary(Index n_target, Index k, std::uint64_t seed);
Dataset embed_unitary(const Dataset& data, Index n_target, std::uint64_t seed);

Dataset add_gaussian_noise(const Dataset& data, double sigma, std::uint64_t seed);

std::pair<Dataset, NormalizationRecord> normalize_unit_cube(const Dataset& data);
Matrix apply_normalization(const Matrix& points, const NormalizationRecord& record);
Matrix invert_normalization(const Matrix& points, const NormalizationRecord& record);

/// Seeded shuffle; the first round(fraction * N) rows go to the training part.
std::pair<Dataset, Dataset> split(const Dataset& data, double fraction, std::uint64_t seed);

/// Header `x_1..x_n[,label_*]`, values printed with 17 significant digits.
void save_csv(const Dataset& data, const std::filesystem::path& path);
Dataset load_csv(const std::filesystem::path& path);

nlohmann::json metadata_json(const DatasetMetadata& meta);
DatasetMetadata metadata_from_json(const nlohmann::json& doc);

/// Formats a double so that parsing it back yields the same bits.
std::string format_double(double v);

}  // namespace cae::data
