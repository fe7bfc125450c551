#include "cae/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "cae/errors.hpp"

namespace cae::geometry {

namespace {

constexpr double kRankThreshold = 1e-12;

std::vector<Index> nearest_by_distance(const Matrix& points, const Vector& target, Index k, Index exclude) {
  const Index n = points.rows();
  std::vector<std::pair<double, Index>> dist;
  dist.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    if (i == exclude) continue;
    dist.emplace_back((points.row(i).transpose() - target).squaredNorm(), i);
  }
  const auto mid = dist.begin() + std::min<std::ptrdiff_t>(k, static_cast<std::ptrdiff_t>(dist.size()));
  std::partial_sort(dist.begin(), mid, dist.end());
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(k));
  for (auto it = dist.begin(); it != mid; ++it) out.push_back(it->second);
  return out;
}

void fix_sign(Eigen::Ref<Vector> v) {
  Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  if (v(arg) < 0) v = -v;
}

Matrix gather_rows(const Matrix& points, const std::vector<Index>& idx) {
  Matrix out(static_cast<Index>(idx.size()), points.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = points.row(idx[i]);
  return out;
}

TangentFrame frame_from(const Matrix& points, Index point, std::vector<Index> members, Index d) {
  const Matrix nb = gather_rows(points, members);
  PcaResult pca;
  try {
    pca = local_pca(nb);
  } catch (const DegenerateError&) {
    throw DegenerateError("neighborhood of point " + std::to_string(point) + " has zero covariance", point);
  }
  const Index n = points.cols();
  if (pca.eigenvalues(d - 1) <= kRankThreshold * pca.eigenvalues(0)) {
    throw DegenerateError("neighborhood of point " + std::to_string(point) + " has rank below tangent dimension " +
                              std::to_string(d),
                          point);
  }
  TangentFrame f;
  f.base_point = points.row(point).transpose();
  f.basis = pca.eigenvectors.leftCols(d);
  f.eigenvalues = pca.eigenvalues.head(std::min<Index>(static_cast<Index>(members.size()), n));
  f.neighbors = std::move(members);
  return f;
}

}  // namespace

std::vector<Index> knn(const Matrix& points, Index query, Index k) {
  const Index n = points.rows();
  if (query < 0 || query >= n) throw ArgumentError("query index out of range");
  if (k < 1 || k >= n) throw ArgumentError("k must satisfy 1 <= k < N (k=" + std::to_string(k) + ", N=" +
                                           std::to_string(n) + ")");
  return nearest_by_distance(points, points.row(query).transpose(), k, query);
}

Matrix sample_covariance(const Matrix& rows) {
  const Index m = rows.rows();
  if (m < 2) throw ArgumentError("covariance needs at least two points");
  const Eigen::RowVectorXd mean = rows.colwise().mean();
  const Matrix centered = rows.rowwise() - mean;
  return (centered.transpose() * centered) / static_cast<double>(m - 1);
}

PcaResult local_pca(const Matrix& neighborhood) {
  const Matrix cov = sample_covariance(neighborhood);
  if (cov.cwiseAbs().maxCoeff() == 0.0) throw DegenerateError("all points identical (zero covariance)");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericalError("eigen-decomposition failed");
  const Index n = cov.rows();
  PcaResult out{Vector(n), Matrix(n, n)};
  for (Index i = 0; i < n; ++i) {
    // Eigen returns ascending order.
    out.eigenvalues(i) = std::max(0.0, solver.eigenvalues()(n - 1 - i));
    out.eigenvectors.col(i) = solver.eigenvectors().col(n - 1 - i);
    fix_sign(out.eigenvectors.col(i));
  }
  return out;
}

std::vector<Index> kmeans(const Matrix& points, Index clusters, std::uint64_t seed, int max_iterations) {
  const Index n = points.rows();
  if (clusters < 1 || clusters > n) throw ArgumentError("cluster count must lie in [1, N]");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> pick(0, n - 1);

  Matrix centers(clusters, points.cols());
  centers.row(0) = points.row(pick(rng));
  Vector nearest = (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (Index c = 1; c < clusters; ++c) {
    Index far = 0;
    nearest.maxCoeff(&far);
    centers.row(c) = points.row(far);
    nearest = nearest.cwiseMin((points.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  std::vector<Index> label(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      (centers.rowwise() - points.row(i)).rowwise().squaredNorm().minCoeff(&best);
      if (label[static_cast<std::size_t>(i)] != best) {
        label[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    if (!changed) break;
    Matrix sums = Matrix::Zero(clusters, points.cols());
    Vector counts = Vector::Zero(clusters);
    for (Index i = 0; i < n; ++i) {
      sums.row(label[static_cast<std::size_t>(i)]) += points.row(i);
      counts(label[static_cast<std::size_t>(i)]) += 1.0;
    }
    for (Index c = 0; c < clusters; ++c) {
      if (counts(c) > 0) centers.row(c) = sums.row(c) / counts(c);
    }
  }
  return label;
}

TangentFrameSet tangent_frames(const Matrix& points, const NeighborhoodSpec& nbhd, Index d) {
  const Index n_points = points.rows();
  const Index n = points.cols();
  if (d < 1 || d > n) throw ArgumentError("tangent dimension must lie in [1, n]");
  TangentFrameSet set;
  set.ambient_dimension = n;
  set.tangent_dimension = d;
  set.frames.reserve(static_cast<std::size_t>(n_points));

  if (const auto* kn = std::get_if<KNearest>(&nbhd)) {
    if (kn->k < d + 1) throw ArgumentError("k_NN must be at least d + 1");
    for (Index i = 0; i < n_points; ++i) {
      auto members = knn(points, i, kn->k);
      members.insert(members.begin(), i);
      set.frames.push_back(frame_from(points, i, std::move(members), d));
    }
  } else if (const auto* rs = std::get_if<RadiusScale>(&nbhd)) {
    if (!(rs->tau > 0)) throw ArgumentError("radius scale must be positive");
    const double tau2 = rs->tau * rs->tau;
    for (Index i = 0; i < n_points; ++i) {
      std::vector<Index> members;
      for (Index j = 0; j < n_points; ++j) {
        if ((points.row(j) - points.row(i)).squaredNorm() <= tau2) members.push_back(j);
      }
      if (members.size() < 2) {
        throw DegenerateError("radius neighborhood of point " + std::to_string(i) + " is empty", i);
      }
      set.frames.push_back(frame_from(points, i, std::move(members), d));
    }
  } else {
    const auto& km = std::get<KMeansClusters>(nbhd);
    const auto label = kmeans(points, km.clusters, km.seed, km.max_iterations);
    std::vector<std::vector<Index>> members(static_cast<std::size_t>(km.clusters));
    for (Index i = 0; i < n_points; ++i) members[static_cast<std::size_t>(label[static_cast<std::size_t>(i)])].push_back(i);
    std::vector<TangentFrame> shared(members.size());
    for (std::size_t c = 0; c < members.size(); ++c) {
      if (members[c].empty()) continue;
      if (members[c].size() < 2) {
        throw DegenerateError("cluster " + std::to_string(c) + " has a single point", members[c].front());
      }
      shared[c] = frame_from(points, members[c].front(), members[c], d);
    }
    for (Index i = 0; i < n_points; ++i) {
      TangentFrame f = shared[static_cast<std::size_t>(label[static_cast<std::size_t>(i)])];
      f.base_point = points.row(i).transpose();
      set.frames.push_back(std::move(f));
    }
  }
  return set;
}

Vector project_to_tangent(const Vector& v, const Matrix& basis) {
  if (v.size() != basis.rows()) throw ShapeError("vector and frame dimensions differ");
  return basis * (basis.transpose() * v);
}

std::vector<Vector> gram_schmidt(const std::vector<Vector>& vectors, bool normalize) {
  std::vector<Vector> out;
  std::vector<Vector> unit;
  out.reserve(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const Vector& v = vectors[i];
    if (!out.empty() && v.size() != out.front().size()) throw ShapeError("vectors differ in dimension");
    Vector r = v;
    for (int pass = 0; pass < 2; ++pass) {
      Vector coeff(static_cast<Index>(unit.size()));
      for (std::size_t j = 0; j < unit.size(); ++j) coeff(static_cast<Index>(j)) = unit[j].dot(r);
      for (std::size_t j = 0; j < unit.size(); ++j) r -= coeff(static_cast<Index>(j)) * unit[j];
    }
    const double norm = r.norm();
    if (norm < 1e-12 * std::max(1.0, v.norm())) {
      throw RankError("vector is linearly dependent on its predecessors (residual " + std::to_string(norm) + ")", i);
    }
    unit.push_back(r / norm);
    out.push_back(normalize ? unit.back() : r);
  }
  return out;
}

double pairwise_orthogonality(const std::vector<Vector>& vectors, OrthoNorm mode) {
  double total = 0.0;
  for (std::size_t j = 0; j < vectors.size(); ++j) {
    for (std::size_t k = j + 1; k < vectors.size(); ++k) {
      if (vectors[j].size() != vectors[k].size()) throw ShapeError("vectors differ in dimension");
      const double ip = vectors[j].dot(vectors[k]);
      total += mode == OrthoNorm::L2 ? ip * ip : std::abs(ip);
    }
  }
  return total;
}

nlohmann::json to_json(const TangentFrameSet& set) {
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t i = 0; i < set.frames.size(); ++i) {
    const auto& f = set.frames[i];
    nlohmann::json basis = nlohmann::json::array();
    for (Index c = 0; c < f.basis.cols(); ++c) {
      basis.push_back(std::vector<double>(f.basis.col(c).data(), f.basis.col(c).data() + f.basis.rows()));
    }
    frames.push_back({{"index", i},
                      {"base_point", std::vector<double>(f.base_point.data(), f.base_point.data() + f.base_point.size())},
                      {"basis", basis},
                      {"eigenvalues", std::vector<double>(f.eigenvalues.data(), f.eigenvalues.data() + f.eigenvalues.size())},
                      {"neighbors", f.neighbors}});
  }
  return {{"ambient_dimension", set.ambient_dimension}, {"tangent_dimension", set.tangent_dimension}, {"frames", frames}};
}

TangentFrameSet frames_from_json(const nlohmann::json& doc) {
  try {
    TangentFrameSet set;
    set.ambient_dimension = doc.at("ambient_dimension").get<Index>();
    set.tangent_dimension = doc.at("tangent_dimension").get<Index>();
    for (const auto& jf : doc.at("frames")) {
      TangentFrame f;
      const auto bp = jf.at("base_point").get<std::vector<double>>();
      f.base_point = Eigen::Map<const Vector>(bp.data(), static_cast<Index>(bp.size()));
      const auto rows = jf.at("basis").get<std::vector<std::vector<double>>>();
      f.basis.resize(set.ambient_dimension, static_cast<Index>(rows.size()));
      for (std::size_t c = 0; c < rows.size(); ++c) {
        if (static_cast<Index>(rows[c].size()) != set.ambient_dimension) throw ShapeError("frame basis row length");
        f.basis.col(static_cast<Index>(c)) = Eigen::Map<const Vector>(rows[c].data(), set.ambient_dimension);
      }
      const auto ev = jf.at("eigenvalues").get<std::vector<double>>();
      f.eigenvalues = Eigen::Map<const Vector>(ev.data(), static_cast<Index>(ev.size()));
      f.neighbors = jf.at("neighbors").get<std::vector<Index>>();
      set.frames.push_back(std::move(f));
    }
    return set;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed frame file: ") + e.what());
  }
}

}  // namespace cae::geometry
