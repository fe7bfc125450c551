#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cae/diagnostics.hpp"
#include "cae/training.hpp"

namespace cae::experiment {

/// Flat `section.key = value` document. Later layers override earlier ones:
/// built-in defaults, then a preset, then a config file, then command-line overrides.
using KeyValues = std::map<std::string, std::string>;

const KeyValues& default_values();
std::vector<std::string> preset_names();
/// Preset layered over the defaults. Throws ConfigError for unknown names.
KeyValues preset(const std::string& name);

/// Parses `key = value` lines; `#` starts a comment. Errors carry the line number.
KeyValues parse_key_values(const std::string& text);
KeyValues load_key_values(const std::filesystem::path& path);
/// Applies `key=value` overrides; unknown keys are rejected.
void apply_overrides(KeyValues& kv, const std::vector<std::string>& assignments);
/// Every key, sorted, one per line. Re-reading it reproduces the run.
std::string echo(const KeyValues& kv);

struct DatasetBlock {
  std::string generator;  // toy | circle | s_curve | swiss_roll | warped_cube | file
  std::string path;
  Index points = 0;
  Index test_points = 0;
  double noise = 0.0;
  std::uint64_t seed = 0;
  Index embed_dim = 0;  // 0: no unitary embedding
  bool normalize = false;
  double train_fraction = 0.0;  // file datasets: share kept for training
};

struct ArchitectureBlock {
  Index depth = 0;
  Index width = 0;
  Index latent = 0;  // 0: ambient dimension
  std::vector<nn::ActivationKind> activations;
  double init_scale = 1.0;
  std::uint64_t seed = 0;
};

struct LossBlock {
  training::LossSpec spec;  // frames are attached at run time
  Index tangent_dim = 0;
  std::string neighborhood;  // knn | radius | kmeans
  Index knn = 0;
  double radius = 0.0;
  Index clusters = 0;
  std::string supervised_label;
};

struct DiagnosticsBlock {
  double collapse_threshold = 0.05;
  Index level_set_resolution = 50;
  Index level_set_levels = 7;
  long posthoc_epochs = 0;
  double posthoc_alpha = 1.0;
  Index dense_points = 1000;
};

struct OutputsBlock {
  std::filesystem::path dir;
  bool level_sets = false;
  bool circle_validation = false;
  bool frames = false;
  bool dataset = true;
};

struct SweepBlock {
  diagnostics::RobustnessOptions options;
  Index points = 2500;
  std::uint64_t data_seed = 0;
};

struct ExperimentConfig {
  std::string name;
  DatasetBlock dataset;
  ArchitectureBlock architecture;
  LossBlock loss;
  training::TrainConfig training;
  DiagnosticsBlock diagnostics;
  OutputsBlock outputs;
  SweepBlock sweep;
};

/// Validates every key and value; errors name the offending key.
ExperimentConfig resolve(const KeyValues& kv);

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "CAE_OUTPUT_ROOT";
std::filesystem::path output_root();

struct Datasets {
  data::Dataset train;
  data::Dataset test;
};
Datasets build_datasets(const ExperimentConfig& cfg);

struct LevelSetCurves {
  /// One row per decoded point: varied component, level index, level value, point index, latent, decoded.
  struct Row {
    Index varied = 0;
    Index level = 0;
    double level_value = 0.0;
    Index step = 0;
    Vector latent;
    Vector decoded;
  };
  std::vector<Row> rows;
};

/// For each of the two active components, sweep it across its training range at `resolution`
/// points while the other active component sits at `levels` quantiles of its training values
/// and collapsed components stay at their training means.
LevelSetCurves level_set_export(const training::CaeModel& model, const diagnostics::DimensionReport& report,
                                const Matrix& train_latents, Index resolution, Index levels);
void save_level_sets_csv(const LevelSetCurves& curves, const std::filesystem::path& path);

struct CircleValidation {
  Matrix dense_points;
  Matrix dense_latents;
  Matrix dense_decoded;
  Matrix manual_latents;
  Matrix manual_decoded;
  double max_error = 0.0;   // max |x - x_hat| over the dense circle
  double mean_squared = 0.0;
};
CircleValidation circle_validation(const training::CaeModel& model, const diagnostics::DimensionReport& report,
                                   Index dense_points);

struct RunSummary {
  std::filesystem::path dir;
  training::TrainingTrace trace;
  diagnostics::DimensionReport report;
  double train_error = 0.0;
  double test_error = 0.0;       // frozen-latent
  double test_error_full = 0.0;  // no freezing
  training::CaeModel model;
};

/// generate -> (frames) -> train -> diagnose -> evaluate, writing every artifact into the run directory.
/// On failure an error.json is written and the exception is rethrown.
RunSummary run(const ExperimentConfig& cfg, const KeyValues& echo_values);

/// Robustness grid from the sweep block; writes sweep.csv into the output directory.
std::vector<diagnostics::RobustnessCell> sweep(const ExperimentConfig& cfg, const KeyValues& echo_values);

}  // namespace cae::experiment
