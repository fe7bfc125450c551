#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cae/data.hpp"
#include "cae/errors.hpp"
#include "cae/geometry.hpp"
#include "cae/nn.hpp"

namespace cae::training {

using geometry::OrthoNorm;

/// Encoder n -> ... -> l and decoder l -> ... -> n.
struct CaeModel {
  nn::MlpNetwork encoder;
  nn::MlpNetwork decoder;
  std::uint64_t seed = 0;

  Index ambient_dimension() const { return encoder.input_width(); }
  Index latent_width() const { return encoder.output_width(); }
  void validate() const;
};

/// Mirror-image encoder/decoder: `depth` layers each, hidden layers `width` wide,
/// activation i applying to layer i of both networks.
CaeModel make_model(Index ambient, Index latent, Index width, const std::vector<nn::ActivationKind>& activations,
                    std::uint64_t seed, double init_scale = 1.0);

nlohmann::json to_json(const CaeModel& model);
CaeModel model_from_json(const nlohmann::json& doc);
void save_model(const CaeModel& model, const std::filesystem::path& path);
CaeModel load_model(const std::filesystem::path& path);

enum class GradientSpace { Ambient, TangentProjected, DecoderJacobian };

struct SupervisedTerm {
  Index latent_index = 0;  // zero-based
  Index label_column = 0;
  double weight = 1.0;
};

struct LossSpec {
  double alpha = 1.0;
  OrthoNorm norm = OrthoNorm::L2;
  GradientSpace space = GradientSpace::Ambient;
  /// One frame per training point; required for TangentProjected.
  std::shared_ptr<const geometry::TangentFrameSet> frames;
  std::optional<SupervisedTerm> supervised;
  /// Latent pairs entering the orthogonality sum; nullopt means every pair j > k.
  std::optional<std::vector<std::pair<Index, Index>>> pairs;
  bool reconstruction = true;
};

/// Batch loss decomposition. `orthogonality` and `supervised` are unweighted means;
/// total = reconstruction + alpha * orthogonality + weight * supervised.
struct LossParts {
  double reconstruction = 0.0;
  double orthogonality = 0.0;
  double supervised = 0.0;
  double total = 0.0;
};

struct CaeGradients {
  nn::NetworkGradients encoder;
  nn::NetworkGradients decoder;
  Vector flatten() const;
};

struct LossEvaluation {
  LossParts parts;
  CaeGradients grads;          // filled only when gradients were requested
  Vector grad_norm_mean;       // per latent component, mean |grad nu_i| (projected in projected mode)
  Vector latent_mean;          // per latent component
};

/// Rows of `data` to use; empty means all of them.
using Batch = std::vector<Index>;

LossParts cae_loss(const CaeModel& model, const data::Dataset& data, const Batch& batch, const LossSpec& spec);
LossEvaluation loss_gradients(const CaeModel& model, const data::Dataset& data, const Batch& batch,
                              const LossSpec& spec);
/// Forward-only evaluation including gradient norms and latent means.
LossEvaluation evaluate(const CaeModel& model, const data::Dataset& data, const Batch& batch, const LossSpec& spec);

void validate_spec(const LossSpec& spec, const CaeModel& model, const data::Dataset& data);

enum class StopMode { TotalLoss, Robustness };
enum class StopReason { None, Tolerance, Threshold, Plateau, MaxEpochs, Numerical };
std::string_view stop_reason_name(StopReason reason);

struct TrainConfig {
  long epochs_max = 10000;
  double tolerance = 1e-4;
  long plateau_patience = 1500;
  double plateau_rel_improvement = 1e-6;
  double learning_rate = 1e-3;
  Index batch_size = 0;  // 0: full batch
  std::uint64_t seed = 0;
  StopMode stop_mode = StopMode::TotalLoss;
  /// Noise level and ambient dimension for the robustness-mode threshold.
  double noise_sigma = 0.0;
  nn::AdamHyper adam{};
  void validate() const;
};

struct TraceRow {
  long epoch = 0;
  LossParts parts;
  double best_total = 0.0;
  Vector grad_norm_mean;
};

struct TrainingTrace {
  std::vector<TraceRow> rows;
  StopReason stop_reason = StopReason::None;
  std::string failure;
  /// Full-data evaluation of the returned model.
  LossParts final_parts;
  Vector final_grad_norm_mean;
  Vector latent_mean;
  Vector latent_min;
  Vector latent_max;

  bool empty() const { return rows.empty(); }
  Index latent_width() const { return rows.empty() ? 0 : rows.front().grad_norm_mean.size(); }
};

/// Raised when a loss or gradient goes non-finite mid-training; carries the trace so far.
class TrainingAborted : public NumericalError {
 public:
  TrainingAborted(const NumericalError& cause, TrainingTrace trace)
      : NumericalError(cause), trace_(std::move(trace)) {}
  const TrainingTrace& trace() const { return trace_; }

 private:
  TrainingTrace trace_;
};

/// max{5e-4, sigma^2 sqrt(n/3) / 10}.
double robustness_threshold(double sigma, Index ambient);

/// Which stopping rule (if any) fires after the last trace row.
StopReason stop_check(const TrainingTrace& trace, const TrainConfig& cfg, double sigma, Index ambient);
bool stop(const TrainingTrace& trace, const TrainConfig& cfg, double sigma, Index ambient);

struct TrainResult {
  CaeModel model;
  TrainingTrace trace;
};

/// Shared Adam loop; the loss spec selects ambient, projected or decoder-Jacobian orthogonality.
TrainResult train(const data::Dataset& data, CaeModel model, const LossSpec& spec, const TrainConfig& cfg);

TrainResult train_cae(const data::Dataset& data, CaeModel model, const LossSpec& spec, const TrainConfig& cfg);
TrainResult train_cae_projected(const data::Dataset& data, CaeModel model,
                                std::shared_ptr<const geometry::TangentFrameSet> frames, LossSpec spec,
                                const TrainConfig& cfg);
TrainResult orthogonalize_posthoc(const data::Dataset& data, CaeModel model, const TrainConfig& cfg, double alpha,
                                  OrthoNorm norm = OrthoNorm::L2);

/// epoch, recon, ortho, supervised, total, grad_norm_nu_1..l, stop_reason (final row only).
void save_trace_csv(const TrainingTrace& trace, const std::filesystem::path& path);

Matrix encode(const CaeModel& model, const Matrix& points);   // N x n -> N x l
Matrix decode(const CaeModel& model, const Matrix& latents);  // N x l -> N x n

}  // namespace cae::training
