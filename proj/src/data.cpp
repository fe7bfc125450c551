#include "cae/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "cae/errors.hpp"

namespace cae::data {

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_vec(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())); }

nlohmann::json matrix_rows(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) rows.push_back(to_vec(m.row(r).transpose()));
  return rows;
}

Matrix matrix_from_rows(const nlohmann::json& rows) {
  const auto vv = rows.get<std::vector<std::vector<double>>>();
  if (vv.empty()) return {};
  Matrix m(static_cast<Index>(vv.size()), static_cast<Index>(vv.front().size()));
  for (std::size_t r = 0; r < vv.size(); ++r) {
    if (vv[r].size() != vv.front().size()) throw ShapeError("ragged matrix in metadata");
    m.row(static_cast<Index>(r)) = from_vec(vv[r]).transpose();
  }
  return m;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, e - b + 1);
}

}  // namespace

Index Dataset::label_column(const std::string& name) const {
  for (std::size_t i = 0; i < label_names.size(); ++i) {
    if (label_names[i] == name) return static_cast<Index>(i);
  }
  throw ArgumentError("dataset has no label column '" + name + "'");
}

Dataset Dataset::subset(const std::vector<Index>& rows) const {
  Dataset out;
  out.points.resize(static_cast<Index>(rows.size()), points.cols());
  out.labels.resize(static_cast<Index>(rows.size()), labels.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.points.row(static_cast<Index>(i)) = points.row(rows[i]);
    if (labels.cols() > 0) out.labels.row(static_cast<Index>(i)) = labels.row(rows[i]);
  }
  out.label_names = label_names;
  out.metadata = metadata;
  return out;
}

void validate(const Dataset& data) {
  if (data.points.rows() < 1 || data.points.cols() < 1) throw ArgumentError("dataset is empty");
  if (data.labels.cols() > 0 && data.labels.rows() != data.points.rows()) {
    throw ShapeError("label rows do not match point rows");
  }
  if (static_cast<Index>(data.label_names.size()) != data.labels.cols()) {
    throw ShapeError("label names do not match label columns");
  }
  if (!data.points.allFinite() || !data.labels.allFinite()) throw NumericalError("dataset contains non-finite entries");
}

Vector toy_surface(double x, double y) {
  Vector p(3);
  p << 4.0 * x * std::sin(y), x * y * y, 20.0 * std::cos(x) / (y * y + 1.0);
  return p;
}

Dataset gen_toy(const ToyOptions& options) {
  if (options.count < 1) throw ArgumentError("toy sample size must be positive");
  if (options.noise_sigma < 0) throw ArgumentError("noise sigma must be non-negative");
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(1.0, 2.0);
  const Index n = options.count;
  Matrix clean(n, 3);
  Matrix labels(n, 2);
  for (Index i = 0; i < n; ++i) {
    const double x = unit(rng);
    const double y = unit(rng);
    clean.row(i) = toy_surface(x, y).transpose();
    labels(i, 0) = x;
    labels(i, 1) = y;
  }
  NormalizationRecord record;
  if (options.normalization) {
    record = *options.normalization;
  } else {
    record.min = clean.colwise().minCoeff().transpose();
    record.max = clean.colwise().maxCoeff().transpose();
  }
  Matrix noisy = clean;
  if (options.noise_sigma > 0) {
    std::mt19937_64 noise_rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> gauss(0.0, options.noise_sigma);
    for (Index i = 0; i < n; ++i)
      for (Index c = 0; c < 3; ++c) noisy(i, c) += gauss(noise_rng);
  }
  Dataset out;
  out.points = apply_normalization(noisy, record);
  out.labels = std::move(labels);
  out.label_names = {"x", "y"};
  out.metadata.generator = "toy";
  out.metadata.seed = options.seed;
  out.metadata.noise_sigma = options.noise_sigma;
  out.metadata.normalization = record;
  return out;
}

Dataset gen_circle(Index count, std::uint64_t seed) {
  if (count < 1) throw ArgumentError("circle sample size must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * kPi);
  Dataset out;
  out.points.resize(count, 2);
  out.labels.resize(count, 1);
  for (Index i = 0; i < count; ++i) {
    const double theta = angle(rng);
    out.points(i, 0) = std::cos(theta);
    out.points(i, 1) = std::sin(theta);
    out.labels(i, 0) = theta;
  }
  out.label_names = {"theta"};
  out.metadata.generator = "circle";
  out.metadata.seed = seed;
  return out;
}

Dataset gen_circle_dense(Index count) {
  if (count < 1) throw ArgumentError("circle sample size must be positive");
  Dataset out;
  out.points.resize(count, 2);
  out.labels.resize(count, 1);
  for (Index i = 0; i < count; ++i) {
    const double theta = 2.0 * kPi * static_cast<double>(i) / static_cast<double>(count);
    out.points(i, 0) = std::cos(theta);
    out.points(i, 1) = std::sin(theta);
    out.labels(i, 0) = theta;
  }
  out.label_names = {"theta"};
  out.metadata.generator = "circle_dense";
  return out;
}

Vector s_curve_point(double t, double y) {
  Vector p(3);
  const double sign = t > 0 ? 1.0 : (t < 0 ? -1.0 : 0.0);
  p << std::sin(t), y, sign * (std::cos(t) - 1.0);
  return p;
}

Dataset gen_s_curve(Index count, std::uint64_t seed) {
  if (count < 1) throw ArgumentError("S-curve sample size must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> arc(-1.5 * kPi, 1.5 * kPi);
  std::uniform_real_distribution<double> height(0.0, 2.0);
  // Analytic extent of the curve per axis, mapped onto [-4, 4].
  const Eigen::Array3d lo(-1.0, 0.0, -2.0);
  const Eigen::Array3d hi(1.0, 2.0, 2.0);
  Dataset out;
  out.points.resize(count, 3);
  out.labels.resize(count, 2);
  for (Index i = 0; i < count; ++i) {
    const double t = arc(rng);
    const double y = height(rng);
    const Eigen::Array3d p = s_curve_point(t, y).array();
    out.points.row(i) = (-4.0 + 8.0 * (p - lo) / (hi - lo)).matrix().transpose();
    out.labels(i, 0) = t;
    out.labels(i, 1) = y;
  }
  out.label_names = {"t", "y"};
  out.metadata.generator = "s_curve";
  out.metadata.seed = seed;
  return out;
}

Dataset gen_swiss_roll(Index count, std::uint64_t seed) {
  if (count < 1) throw ArgumentError("swiss roll sample size must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Dataset out;
  out.points.resize(count, 3);
  out.labels.resize(count, 2);
  for (Index i = 0; i < count; ++i) {
    const double t = 1.5 * kPi * (1.0 + 2.0 * unit(rng));
    const double h = 21.0 * unit(rng);
    out.points.row(i) << t * std::cos(t), h, t * std::sin(t);
    out.labels(i, 0) = t;
    out.labels(i, 1) = h;
  }
  out.label_names = {"t", "h"};
  out.metadata.generator = "swiss_roll";
  out.metadata.seed = seed;
  return out;
}

Dataset gen_warped_cube(Index count, std::uint64_t seed) {
  if (count < 1) throw ArgumentError("sample size must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Dataset out;
  out.points.resize(count, 5);
  out.labels.resize(count, 3);
  for (Index i = 0; i < count; ++i) {
    const double u = unit(rng);
    const double v = unit(rng);
    const double w = unit(rng);
    out.points.row(i) << u, v, w, 0.5 * std::sin(kPi * u) * v + 0.5 * w * w, std::cos(0.5 * kPi * w) * u;
    out.labels.row(i) << u, v, w;
  }
  out.label_names = {"u", "v", "w"};
  out.metadata.generator = "warped_cube";
  out.metadata.seed = seed;
  return out;
}

Matrix random_truncated_unitary(Index n_target, Index k, std::uint64_t seed) {
  if (k < 1 || n_target < k) throw ArgumentError("embedding needs n_target >= k >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix g(n_target, k);
  for (Index c = 0; c < k; ++c)
    for (Index r = 0; r < n_target; ++r) g(r, c) = gauss(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(n_target, k);
  // Make the factorization unique: positive diagonal of R.
  const Matrix r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  for (Index c = 0; c < k; ++c) {
    if (r(c, c) < 0) q.col(c) = -q.col(c);
  }
  return q;
}

Dataset embed_unitary(const Dataset& data, Index n_target, std::uint64_t seed) {
  const Index k = data.ambient_dimension();
  if (n_target < k) {
    throw ArgumentError("cannot embed dimension " + std::to_string(k) + " into " + std::to_string(n_target));
  }
  const Matrix q = random_truncated_unitary(n_target, k, seed);
  Dataset out = data;
  out.points = data.points * q.transpose();
  out.metadata.embedding = q;
  return out;
}

Dataset add_gaussian_noise(const Dataset& data, double sigma, std::uint64_t seed) {
  if (sigma < 0) throw ArgumentError("noise sigma must be non-negative");
  Dataset out = data;
  out.metadata.noise_sigma = sigma;
  if (sigma == 0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, sigma);
  for (Index i = 0; i < out.points.rows(); ++i)
    for (Index c = 0; c < out.points.cols(); ++c) out.points(i, c) += gauss(rng);
  return out;
}

Matrix apply_normalization(const Matrix& points, const NormalizationRecord& record) {
  if (record.min.size() != points.cols() || record.max.size() != points.cols()) {
    throw ShapeError("normalization record does not match feature count");
  }
  const Eigen::RowVectorXd span = (record.max - record.min).transpose();
  return (points.rowwise() - record.min.transpose()).array().rowwise() / span.array();
}

Matrix invert_normalization(const Matrix& points, const NormalizationRecord& record) {
  if (record.min.size() != points.cols()) throw ShapeError("normalization record does not match feature count");
  const Eigen::RowVectorXd span = (record.max - record.min).transpose();
  Matrix out = points.array().rowwise() * span.array();
  out.rowwise() += record.min.transpose();
  return out;
}

std::pair<Dataset, NormalizationRecord> normalize_unit_cube(const Dataset& data) {
  NormalizationRecord record{data.points.colwise().minCoeff().transpose(), data.points.colwise().maxCoeff().transpose()};
  for (Index c = 0; c < data.points.cols(); ++c) {
    if (!(record.max(c) > record.min(c))) {
      throw DegenerateError("feature x_" + std::to_string(c + 1) + " is constant", c);
    }
  }
  Dataset out = data;
  out.points = apply_normalization(data.points, record);
  // Pin the extremes so they land on exactly 0 and 1.
  for (Index c = 0; c < out.points.cols(); ++c) {
    for (Index r = 0; r < out.points.rows(); ++r) {
      if (data.points(r, c) == record.min(c)) out.points(r, c) = 0.0;
      if (data.points(r, c) == record.max(c)) out.points(r, c) = 1.0;
    }
  }
  out.metadata.normalization = record;
  return {std::move(out), record};
}

std::pair<Dataset, Dataset> split(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ArgumentError("split fraction must lie in (0, 1)");
  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  std::vector<Index> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<Index> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return {data.subset(train), data.subset(test)};
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void save_csv(const Dataset& data, const std::filesystem::path& path) {
  validate(data);
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot open '" + path.string() + "' for writing");
  for (Index c = 0; c < data.points.cols(); ++c) out << (c ? "," : "") << "x_" << (c + 1);
  for (const auto& name : data.label_names) out << ",label_" << name;
  out << '\n';
  for (Index r = 0; r < data.points.rows(); ++r) {
    for (Index c = 0; c < data.points.cols(); ++c) out << (c ? "," : "") << format_double(data.points(r, c));
    for (Index c = 0; c < data.labels.cols(); ++c) out << ',' << format_double(data.labels(r, c));
    out << '\n';
  }
  if (!out) throw ArgumentError("write to '" + path.string() + "' failed");
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw ParseError("missing header row", 1);
  const auto header = split_fields(trim(line));
  Index n_points_cols = 0;
  std::vector<std::string> label_names;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string h = trim(header[i]);
    if (h.rfind("label_", 0) == 0) {
      label_names.push_back(h.substr(6));
    } else if (h == "x_" + std::to_string(n_points_cols + 1) && label_names.empty()) {
      ++n_points_cols;
    } else {
      throw ParseError("unexpected header field '" + h + "'", 1);
    }
  }
  if (n_points_cols == 0) throw ParseError("header declares no x_ columns", 1);
  const std::size_t width = header.size();

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto fields = split_fields(t);
    if (fields.size() != width) {
      throw ParseError("expected " + std::to_string(width) + " fields, found " + std::to_string(fields.size()), line_no);
    }
    std::vector<double> row(width);
    for (std::size_t i = 0; i < width; ++i) {
      const std::string f = trim(fields[i]);
      const char* first = f.data();
      const char* last = f.data() + f.size();
      auto [ptr, ec] = std::from_chars(first, last, row[i]);
      if (f.empty() || ec != std::errc() || ptr != last) {
        throw ParseError("non-numeric value '" + f + "' in column " + std::to_string(i + 1), line_no);
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("no data rows", line_no);

  Dataset out;
  const auto n = static_cast<Index>(rows.size());
  const auto n_labels = static_cast<Index>(label_names.size());
  out.points.resize(n, n_points_cols);
  out.labels.resize(n, n_labels);
  for (Index r = 0; r < n; ++r) {
    for (Index c = 0; c < n_points_cols; ++c) out.points(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    for (Index c = 0; c < n_labels; ++c)
      out.labels(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(n_points_cols + c)];
  }
  out.label_names = std::move(label_names);
  out.metadata.generator = "file:" + path.filename().string();
  validate(out);
  return out;
}

nlohmann::json metadata_json(const DatasetMetadata& meta) {
  nlohmann::json doc{{"generator", meta.generator}, {"seed", meta.seed}, {"noise_sigma", meta.noise_sigma}};
  if (meta.normalization) {
    doc["normalization"] = {{"min", to_vec(meta.normalization->min)}, {"max", to_vec(meta.normalization->max)}};
  }
  if (meta.embedding) doc["embedding"] = matrix_rows(*meta.embedding);
  return doc;
}

DatasetMetadata metadata_from_json(const nlohmann::json& doc) {
  try {
    DatasetMetadata meta;
    meta.generator = doc.at("generator").get<std::string>();
    meta.seed = doc.at("seed").get<std::uint64_t>();
    meta.noise_sigma = doc.at("noise_sigma").get<double>();
    if (doc.contains("normalization")) {
      meta.normalization = NormalizationRecord{from_vec(doc["normalization"].at("min").get<std::vector<double>>()),
                                               from_vec(doc["normalization"].at("max").get<std::vector<double>>())};
    }
    if (doc.contains("embedding")) meta.embedding = matrix_from_rows(doc["embedding"]);
    return meta;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed dataset metadata: ") + e.what());
  }
}

}  // namespace cae::data
