#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cae/training.hpp"

namespace cae::diagnostics {

struct DimensionReport {
  Vector final_grad_norm;
  std::vector<Index> active;     // zero-based, ascending
  std::vector<Index> collapsed;  // zero-based, ascending
  Index inferred_dimension = 0;
  double collapse_threshold = 0.05;  // relative to the largest component norm
  Vector latent_mean;                // training-set means
  Vector latent_min;
  Vector latent_max;
};

/// Component i collapses when its final mean gradient norm is below rel_threshold * max_j norm_j.
DimensionReport classify_components(const training::TrainingTrace& trace, double rel_threshold = 0.05);
DimensionReport classify_norms(const Vector& final_norms, double rel_threshold = 0.05);

nlohmann::json to_json(const DimensionReport& report);

/// Encode, pin the masked components to `means`, decode. Returns N x n reconstructions.
Matrix reconstruct_frozen(const training::CaeModel& model, const Matrix& points, const std::vector<Index>& frozen,
                          const Vector& means);

/// Mean squared l2 error over rows.
double mean_squared_error(const Matrix& a, const Matrix& b);

/// Test error with the report's collapsed components replaced by their training means.
double freeze_and_reconstruct(const training::CaeModel& model, const Matrix& test_points, const DimensionReport& report);

/// Mean ambient |grad nu_i| over the rows of `points`.
Vector component_gradient_norms(const training::CaeModel& model, const Matrix& points);

struct TopKComparison {
  double full_error = 0.0;
  double topk_error = 0.0;
  std::vector<Index> ranking;  // components by decreasing mean gradient norm, ties to lower index
};

/// Full-latent error against the error with every component outside the top k frozen at its mean over `points`.
TopKComparison topk_comparison(const training::CaeModel& model, const Matrix& points, Index k);

/// 10 * ceil(sqrt(n)).
Index hidden_width(Index ambient);

struct RobustnessOptions {
  std::vector<Index> dims{3, 5, 10, 20, 40, 100};
  std::vector<double> levels{0.01, 0.02, 0.04, 0.08, 0.16, 0.32};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  Index intrinsic_latent = 3;
  double diameter = 1.7320508075688772;  // sqrt(3), the unit-cube diagonal
  double alpha = 1.0;
  geometry::OrthoNorm norm = geometry::OrthoNorm::L2;
  long epochs_max = 20000;
  long plateau_patience = 1500;
  double learning_rate = 1e-3;
  Index batch_size = 0;
  double collapse_threshold = 0.05;
  double init_scale = 1.0;
  int jobs = 1;
};

struct RobustnessCell {
  Index ambient = 0;
  double level = 0.0;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  Index width = 0;
  double full_error = 0.0;
  double top2_error = 0.0;
  Index inferred_dimension = 0;
  std::string stop_reason;
  long epochs = 0;
  bool failed = false;
  std::string message;
};

/// One (n, l, seed) cell: embed `base` into R^n, add noise sigma = l * diameter, train a
/// 3-latent CAE with robustness-mode stopping and compare full vs top-2 reconstruction.
RobustnessCell robustness_cell(const data::Dataset& base, Index ambient, double level, std::uint64_t seed,
                               const RobustnessOptions& options);

/// Every (n, l, seed) combination; cells ordered by (n, l, seed). Duplicate keys are rejected.
std::vector<RobustnessCell> robustness_sweep(const data::Dataset& base, const RobustnessOptions& options);

/// n, l, sigma, seed, w, full_err, top2_err, inferred_dim, stop_reason, epochs
void save_sweep_csv(const std::vector<RobustnessCell>& cells, const std::filesystem::path& path);

}  // namespace cae::diagnostics
