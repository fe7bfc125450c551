#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "cae/nn.hpp"

namespace cae::geometry {

enum class OrthoNorm { L1, L2 };

/// k nearest rows of `points` (N x n) to row `query`, excluding the query itself.
/// Sorted by distance; equal distances go to the lower index.
std::vector<Index> knn(const Matrix& points, Index query, Index k);

struct PcaResult {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // columns, largest-magnitude entry positive
};

/// PCA of the rows of `neighborhood` (sample covariance, divisor m - 1).
PcaResult local_pca(const Matrix& neighborhood);

/// Sample covariance of the rows, divisor m - 1.
Matrix sample_covariance(const Matrix& rows);

struct KNearest {
  Index k = 10;
};
struct RadiusScale {
  double tau = 0.1;
};
struct KMeansClusters {
  Index clusters = 10;
  std::uint64_t seed = 0;
  int max_iterations = 100;
};
using NeighborhoodSpec = std::variant<KNearest, RadiusScale, KMeansClusters>;

struct TangentFrame {
  Vector base_point;
  Matrix basis;  // n x d, orthonormal columns
  Vector eigenvalues;
  std::vector<Index> neighbors;
};

struct TangentFrameSet {
  Index ambient_dimension = 0;
  Index tangent_dimension = 0;
  std::vector<TangentFrame> frames;

  std::size_t size() const { return frames.size(); }
};

/// Lloyd iterations from a seeded farthest-point start. Returns the cluster label of every row.
std::vector<Index> kmeans(const Matrix& points, Index clusters, std::uint64_t seed, int max_iterations = 100);

TangentFrameSet tangent_frames(const Matrix& points, const NeighborhoodSpec& nbhd, Index d);

Vector project_to_tangent(const Vector& v, const Matrix& basis);

/// Classic Gram-Schmidt with one re-orthogonalization pass; order and span are preserved.
std::vector<Vector> gram_schmidt(const std::vector<Vector>& vectors, bool normalize = false);

double pairwise_orthogonality(const std::vector<Vector>& vectors, OrthoNorm mode);

nlohmann::json to_json(const TangentFrameSet& frames);
TangentFrameSet frames_from_json(const nlohmann::json& doc);

}  // namespace cae::geometry
