#include "cae/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

namespace cae::training {

namespace {

constexpr std::uint64_t kDecoderSeedSalt = 0x5851f42d4c957f2dULL;

std::vector<Index> resolve_batch(const data::Dataset& data, const Batch& batch) {
  if (!batch.empty()) return batch;
  std::vector<Index> all(static_cast<std::size_t>(data.size()));
  std::iota(all.begin(), all.end(), Index{0});
  return all;
}

std::vector<std::pair<Index, Index>> resolve_pairs(const LossSpec& spec, Index width) {
  if (spec.pairs) {
    for (const auto& [j, k] : *spec.pairs) {
      if (j < 0 || k < 0 || j >= width || k >= width || j == k) {
        throw ConfigError("orthogonality pair (" + std::to_string(j) + "," + std::to_string(k) + ") is invalid");
      }
    }
    return *spec.pairs;
  }
  std::vector<std::pair<Index, Index>> all;
  for (Index j = 0; j < width; ++j)
    for (Index k = 0; k < j; ++k) all.emplace_back(j, k);
  return all;
}

struct PairPenalty {
  double value = 0.0;
  Matrix weights;  // symmetric dLoss/dGram, zero diagonal
};

// Sum over pairs of f(gram(j,k)) with f = x^2 or |x|, plus the symmetric derivative matrix.
PairPenalty pair_penalty(const Matrix& gram, const std::vector<std::pair<Index, Index>>& pairs, OrthoNorm norm) {
  PairPenalty out{0.0, Matrix::Zero(gram.rows(), gram.cols())};
  for (const auto& [j, k] : pairs) {
    const double ip = gram(j, k);
    double d;
    if (norm == OrthoNorm::L2) {
      out.value += ip * ip;
      d = 2.0 * ip;
    } else {
      out.value += std::abs(ip);
      d = ip > 0 ? 1.0 : (ip < 0 ? -1.0 : 0.0);
    }
    out.weights(j, k) += d;
    out.weights(k, j) += d;
  }
  return out;
}

LossEvaluation run(const CaeModel& model, const data::Dataset& data, const Batch& batch_in, const LossSpec& spec,
                   bool want_grads) {
  const std::vector<Index> batch = resolve_batch(data, batch_in);
  const auto b = static_cast<Index>(batch.size());
  if (b == 0) throw ArgumentError("empty batch");
  const Index n = model.ambient_dimension();
  const Index l = model.latent_width();
  if (data.ambient_dimension() != n) {
    throw ShapeError("data dimension " + std::to_string(data.ambient_dimension()) + " does not match model input " +
                     std::to_string(n));
  }

  Matrix x(n, b);
  for (Index p = 0; p < b; ++p) x.col(p) = data.points.row(batch[static_cast<std::size_t>(p)]).transpose();

  const bool decoder_jac = spec.space == GradientSpace::DecoderJacobian;
  const auto enc = nn::forward_batch(model.encoder, x, true);
  const auto dec = nn::forward_batch(model.decoder, enc.output, decoder_jac);

  const double inv_b = 1.0 / static_cast<double>(b);
  const Matrix residual = dec.output - x;

  LossEvaluation ev;
  ev.grad_norm_mean = Vector::Zero(l);
  ev.latent_mean = enc.output.rowwise().mean();

  for (Index p = 0; p < b; ++p) {
    const double r = residual.col(p).squaredNorm();
    if (!std::isfinite(r)) throw NumericalError("non-finite reconstruction", batch[static_cast<std::size_t>(p)]);
    ev.parts.reconstruction += r;
  }
  ev.parts.reconstruction *= inv_b;

  const auto pairs = resolve_pairs(spec, l);
  const bool ortho_active = !pairs.empty();
  Matrix jac_grad_enc;
  Matrix jac_grad_dec;
  if (want_grads && ortho_active && spec.alpha != 0.0) {
    if (decoder_jac) {
      jac_grad_dec = Matrix::Zero(dec.jacobian.rows(), dec.jacobian.cols());
    } else {
      jac_grad_enc = Matrix::Zero(enc.jacobian.rows(), enc.jacobian.cols());
    }
  }
  const double ortho_scale = spec.alpha * inv_b;

  for (Index p = 0; p < b; ++p) {
    const auto point = batch[static_cast<std::size_t>(p)];
    const auto jp = enc.jacobian.middleCols(p * n, n);  // rows: grad nu_j
    Matrix gram;
    Matrix coords;  // projected gradients in frame coordinates (l x d)
    const Matrix* frame = nullptr;
    switch (spec.space) {
      case GradientSpace::Ambient:
        gram = jp * jp.transpose();
        ev.grad_norm_mean += jp.rowwise().norm();
        break;
      case GradientSpace::TangentProjected:
        frame = &spec.frames->frames[static_cast<std::size_t>(point)].basis;
        coords = jp * *frame;
        gram = coords * coords.transpose();
        ev.grad_norm_mean += coords.rowwise().norm();
        break;
      case GradientSpace::DecoderJacobian: {
        const auto dp = dec.jacobian.middleCols(p * l, l);  // columns: D x_hat_j
        gram = dp.transpose() * dp;
        ev.grad_norm_mean += jp.rowwise().norm();
        break;
      }
    }
    if (!ortho_active) continue;
    const PairPenalty pen = pair_penalty(gram, pairs, spec.norm);
    if (!std::isfinite(pen.value)) throw NumericalError("non-finite orthogonality term", point);
    ev.parts.orthogonality += pen.value;
    if (jac_grad_enc.size() > 0) {
      if (spec.space == GradientSpace::Ambient) {
        jac_grad_enc.middleCols(p * n, n).noalias() = ortho_scale * (pen.weights * jp);
      } else {
        jac_grad_enc.middleCols(p * n, n).noalias() = ortho_scale * (pen.weights * coords) * frame->transpose();
      }
    } else if (jac_grad_dec.size() > 0) {
      jac_grad_dec.middleCols(p * l, l).noalias() = ortho_scale * (dec.jacobian.middleCols(p * l, l) * pen.weights);
    }
  }
  ev.parts.orthogonality *= inv_b;
  ev.grad_norm_mean *= inv_b;

  Matrix latent_grad_extra = Matrix::Zero(l, b);
  double sup_weight = 0.0;
  if (spec.supervised) {
    const auto& s = *spec.supervised;
    sup_weight = s.weight;
    for (Index p = 0; p < b; ++p) {
      const double diff = enc.output(s.latent_index, p) - data.labels(batch[static_cast<std::size_t>(p)], s.label_column);
      ev.parts.supervised += diff * diff;
      latent_grad_extra(s.latent_index, p) = s.weight * 2.0 * diff * inv_b;
    }
    ev.parts.supervised *= inv_b;
  }

  ev.parts.total = (spec.reconstruction ? ev.parts.reconstruction : 0.0) + spec.alpha * ev.parts.orthogonality +
                   sup_weight * ev.parts.supervised;
  if (!std::isfinite(ev.parts.total)) throw NumericalError("non-finite loss");

  if (!want_grads) return ev;

  ev.grads.encoder = nn::NetworkGradients::zeros_like(model.encoder);
  ev.grads.decoder = nn::NetworkGradients::zeros_like(model.decoder);
  const Matrix out_grad = spec.reconstruction ? Matrix(2.0 * inv_b * residual) : Matrix(Matrix::Zero(n, b));
  Matrix latent_grad = nn::backward_batch(model.decoder, dec, out_grad, jac_grad_dec, ev.grads.decoder);
  latent_grad += latent_grad_extra;
  nn::backward_batch(model.encoder, enc, latent_grad, jac_grad_enc, ev.grads.encoder);
  if (!ev.grads.encoder.all_finite() || !ev.grads.decoder.all_finite()) {
    throw NumericalError("non-finite parameter gradient");
  }
  return ev;
}

}  // namespace

void CaeModel::validate() const {
  if (encoder.depth() == 0 || decoder.depth() == 0) throw ShapeError("model has an empty network");
  if (decoder.input_width() != encoder.output_width()) throw ShapeError("decoder input width must equal latent width");
  if (decoder.output_width() != encoder.input_width()) throw ShapeError("decoder output width must equal ambient width");
}

CaeModel make_model(Index ambient, Index latent, Index width, const std::vector<nn::ActivationKind>& activations,
                    std::uint64_t seed, double init_scale) {
  if (activations.empty()) throw ShapeError("architecture needs at least one layer");
  const auto depth = static_cast<Index>(activations.size());
  auto build = [&](Index in, Index out) {
    std::vector<nn::LayerSpec> specs;
    for (Index i = 0; i < depth; ++i) {
      const Index a = i == 0 ? in : width;
      const Index z = i == depth - 1 ? out : width;
      specs.push_back({a, z, activations[static_cast<std::size_t>(i)]});
    }
    return specs;
  };
  CaeModel model{nn::init_params(build(ambient, latent), seed, init_scale),
                 nn::init_params(build(latent, ambient), seed ^ kDecoderSeedSalt, init_scale), seed};
  model.validate();
  return model;
}

nlohmann::json to_json(const CaeModel& model) {
  return {{"seed", model.seed}, {"latent_width", model.latent_width()},
          {"encoder", nn::to_json(model.encoder)}, {"decoder", nn::to_json(model.decoder)}};
}

CaeModel model_from_json(const nlohmann::json& doc) {
  try {
    CaeModel model{nn::network_from_json(doc.at("encoder")), nn::network_from_json(doc.at("decoder")),
                   doc.value("seed", std::uint64_t{0})};
    model.validate();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model checkpoint: ") + e.what());
  }
}

void save_model(const CaeModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write '" + path.string() + "'");
  out << to_json(model).dump(1) << '\n';
}

CaeModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open '" + path.string() + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return model_from_json(doc);
}

Vector CaeGradients::flatten() const {
  const Vector e = encoder.flatten();
  const Vector d = decoder.flatten();
  Vector out(e.size() + d.size());
  out << e, d;
  return out;
}

void validate_spec(const LossSpec& spec, const CaeModel& model, const data::Dataset& data) {
  model.validate();
  if (!(spec.alpha >= 0)) throw ConfigError("alpha must be non-negative");
  if (spec.space == GradientSpace::TangentProjected) {
    if (!spec.frames) throw ConfigError("tangent-projected orthogonality needs tangent frames");
    if (static_cast<Index>(spec.frames->size()) != data.size()) {
      throw ConfigError("tangent frames cover " + std::to_string(spec.frames->size()) + " points, data has " +
                        std::to_string(data.size()));
    }
    if (spec.frames->tangent_dimension < 1) throw ConfigError("tangent frames must be at least one-dimensional");
    if (spec.frames->ambient_dimension != model.ambient_dimension()) {
      throw ConfigError("tangent frames live in the wrong ambient dimension");
    }
  }
  if (spec.supervised) {
    const auto& s = *spec.supervised;
    if (s.latent_index < 0 || s.latent_index >= model.latent_width()) throw ConfigError("supervised latent index out of range");
    if (s.label_column < 0 || s.label_column >= data.labels.cols()) throw ConfigError("supervised label column out of range");
    if (!(s.weight >= 0)) throw ConfigError("supervised weight must be non-negative");
  }
  resolve_pairs(spec, model.latent_width());
}

LossParts cae_loss(const CaeModel& model, const data::Dataset& data, const Batch& batch, const LossSpec& spec) {
  validate_spec(spec, model, data);
  return run(model, data, batch, spec, false).parts;
}

LossEvaluation loss_gradients(const CaeModel& model, const data::Dataset& data, const Batch& batch,
                              const LossSpec& spec) {
  validate_spec(spec, model, data);
  return run(model, data, batch, spec, true);
}

LossEvaluation evaluate(const CaeModel& model, const data::Dataset& data, const Batch& batch, const LossSpec& spec) {
  validate_spec(spec, model, data);
  return run(model, data, batch, spec, false);
}

std::string_view stop_reason_name(StopReason reason) {
  switch (reason) {
    case StopReason::None: return "none";
    case StopReason::Tolerance: return "tolerance";
    case StopReason::Threshold: return "threshold";
    case StopReason::Plateau: return "plateau";
    case StopReason::MaxEpochs: return "max_epochs";
    case StopReason::Numerical: return "numerical_failure";
  }
  return "none";
}

void TrainConfig::validate() const {
  if (!(tolerance > 0)) throw ConfigError("training.tolerance must be positive");
  if (!(learning_rate > 0)) throw ConfigError("training.learning_rate must be positive");
  if (epochs_max < 1) throw ConfigError("training.epochs_max must be positive");
  if (plateau_patience < 1) throw ConfigError("training.plateau_patience must be positive");
  if (batch_size < 0) throw ConfigError("training.batch_size must be non-negative");
  if (!(noise_sigma >= 0)) throw ConfigError("training.noise_sigma must be non-negative");
}

double robustness_threshold(double sigma, Index ambient) {
  return std::max(5e-4, sigma * sigma * std::sqrt(static_cast<double>(ambient) / 3.0) / 10.0);
}

StopReason stop_check(const TrainingTrace& trace, const TrainConfig& cfg, double sigma, Index ambient) {
  if (trace.rows.empty()) throw ArgumentError("stop rule needs a nonempty trace");
  const TraceRow& last = trace.rows.back();
  if (cfg.stop_mode == StopMode::Robustness) {
    if (last.parts.reconstruction <= robustness_threshold(sigma, ambient)) return StopReason::Threshold;
  } else if (last.parts.total < cfg.tolerance) {
    return StopReason::Tolerance;
  }
  // Plateau: the best total has not improved by more than the relative margin for `patience` epochs.
  double best = trace.rows.front().parts.total;
  long last_improvement = trace.rows.front().epoch;
  for (std::size_t i = 1; i < trace.rows.size(); ++i) {
    const double v = trace.rows[i].parts.total;
    if (v < best * (1.0 - cfg.plateau_rel_improvement)) {
      best = v;
      last_improvement = trace.rows[i].epoch;
    } else if (v < best) {
      best = v;
    }
  }
  if (last.epoch - last_improvement >= cfg.plateau_patience) return StopReason::Plateau;
  if (last.epoch >= cfg.epochs_max) return StopReason::MaxEpochs;
  return StopReason::None;
}

bool stop(const TrainingTrace& trace, const TrainConfig& cfg, double sigma, Index ambient) {
  return stop_check(trace, cfg, sigma, ambient) != StopReason::None;
}

namespace {

// Incremental form of the plateau rule used inside the loop; stop_check recomputes it from scratch.
struct PlateauTracker {
  double best = 0.0;
  long last_improvement = 0;
  bool started = false;

  void observe(long epoch, double total, double rel) {
    if (!started) {
      best = total;
      last_improvement = epoch;
      started = true;
    } else if (total < best * (1.0 - rel)) {
      best = total;
      last_improvement = epoch;
    } else if (total < best) {
      best = total;
    }
  }
};

}  // namespace

TrainResult train(const data::Dataset& data, CaeModel model, const LossSpec& spec, const TrainConfig& cfg) {
  cfg.validate();
  data::validate(data);
  validate_spec(spec, model, data);

  const Index n_points = data.size();
  const Index batch_size = (cfg.batch_size == 0 || cfg.batch_size >= n_points) ? n_points : cfg.batch_size;
  std::vector<Index> order(static_cast<std::size_t>(n_points));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 shuffle_rng(cfg.seed);

  nn::AdamHyper hyper = cfg.adam;
  hyper.learning_rate = cfg.learning_rate;
  auto enc_state = nn::AdamState::for_network(model.encoder, hyper);
  auto dec_state = nn::AdamState::for_network(model.decoder, hyper);

  TrainingTrace trace;
  PlateauTracker plateau;
  const Index l = model.latent_width();
  double best_total = std::numeric_limits<double>::infinity();

  for (long epoch = 1;; ++epoch) {
    if (batch_size < n_points) std::shuffle(order.begin(), order.end(), shuffle_rng);
    TraceRow row;
    row.epoch = epoch;
    row.grad_norm_mean = Vector::Zero(l);
    try {
      for (Index start = 0; start < n_points; start += batch_size) {
        const Index stop_at = std::min(n_points, start + batch_size);
        Batch batch(order.begin() + start, order.begin() + stop_at);
        const auto ev = run(model, data, batch, spec, true);
        const double w = static_cast<double>(stop_at - start) / static_cast<double>(n_points);
        row.parts.reconstruction += w * ev.parts.reconstruction;
        row.parts.orthogonality += w * ev.parts.orthogonality;
        row.parts.supervised += w * ev.parts.supervised;
        row.parts.total += w * ev.parts.total;
        row.grad_norm_mean += w * ev.grad_norm_mean;
        nn::adam_step(model.encoder, ev.grads.encoder, enc_state);
        nn::adam_step(model.decoder, ev.grads.decoder, dec_state);
      }
    } catch (const NumericalError& e) {
      trace.stop_reason = StopReason::Numerical;
      trace.failure = e.what();
      throw TrainingAborted(NumericalError(e.what(), e.point(), epoch), std::move(trace));
    }
    best_total = std::min(best_total, row.parts.total);
    row.best_total = best_total;
    plateau.observe(epoch, row.parts.total, cfg.plateau_rel_improvement);
    trace.rows.push_back(std::move(row));

    const TraceRow& last = trace.rows.back();
    StopReason reason = StopReason::None;
    if (cfg.stop_mode == StopMode::Robustness) {
      if (last.parts.reconstruction <= robustness_threshold(cfg.noise_sigma, model.ambient_dimension())) {
        reason = StopReason::Threshold;
      }
    } else if (last.parts.total < cfg.tolerance) {
      reason = StopReason::Tolerance;
    }
    if (reason == StopReason::None && epoch - plateau.last_improvement >= cfg.plateau_patience) reason = StopReason::Plateau;
    if (reason == StopReason::None && epoch >= cfg.epochs_max) reason = StopReason::MaxEpochs;
    if (reason != StopReason::None) {
      trace.stop_reason = reason;
      break;
    }
  }

  LossEvaluation final_eval;
  try {
    final_eval = run(model, data, {}, spec, false);
  } catch (const NumericalError& e) {
    trace.stop_reason = StopReason::Numerical;
    trace.failure = e.what();
    throw TrainingAborted(e, std::move(trace));
  }
  trace.final_parts = final_eval.parts;
  trace.final_grad_norm_mean = final_eval.grad_norm_mean;
  const Matrix latents = encode(model, data.points);
  trace.latent_mean = latents.colwise().mean().transpose();
  trace.latent_min = latents.colwise().minCoeff().transpose();
  trace.latent_max = latents.colwise().maxCoeff().transpose();
  return {std::move(model), std::move(trace)};
}

TrainResult train_cae(const data::Dataset& data, CaeModel model, const LossSpec& spec, const TrainConfig& cfg) {
  if (spec.space != GradientSpace::Ambient) throw ConfigError("train_cae expects ambient orthogonality");
  if (model.latent_width() != data.ambient_dimension()) {
    throw ConfigError("latent width must equal the ambient dimension (" + std::to_string(data.ambient_dimension()) + ")");
  }
  return train(data, std::move(model), spec, cfg);
}

TrainResult train_cae_projected(const data::Dataset& data, CaeModel model,
                                std::shared_ptr<const geometry::TangentFrameSet> frames, LossSpec spec,
                                const TrainConfig& cfg) {
  if (!frames) throw ConfigError("projected training needs tangent frames");
  if (frames->tangent_dimension < 1) throw ConfigError("zero-dimensional tangent frames");
  const Index l = model.latent_width();
  if (l != data.ambient_dimension() && l != frames->tangent_dimension) {
    throw ConfigError("latent width must equal the ambient or the tangent dimension");
  }
  spec.space = GradientSpace::TangentProjected;
  spec.frames = std::move(frames);
  return train(data, std::move(model), spec, cfg);
}

TrainResult orthogonalize_posthoc(const data::Dataset& data, CaeModel model, const TrainConfig& cfg, double alpha,
                                  OrthoNorm norm) {
  LossSpec spec;
  spec.alpha = alpha;
  spec.norm = norm;
  spec.space = GradientSpace::DecoderJacobian;
  return train(data, std::move(model), spec, cfg);
}

void save_trace_csv(const TrainingTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write '" + path.string() + "'");
  const Index l = trace.latent_width();
  out << "epoch,recon,ortho,supervised,total";
  for (Index i = 0; i < l; ++i) out << ",grad_norm_nu_" << (i + 1);
  out << ",stop_reason\n";
  for (std::size_t r = 0; r < trace.rows.size(); ++r) {
    const auto& row = trace.rows[r];
    out << row.epoch << ',' << data::format_double(row.parts.reconstruction) << ','
        << data::format_double(row.parts.orthogonality) << ',' << data::format_double(row.parts.supervised) << ','
        << data::format_double(row.parts.total);
    for (Index i = 0; i < l; ++i) out << ',' << data::format_double(row.grad_norm_mean(i));
    out << ',';
    if (r + 1 == trace.rows.size()) out << stop_reason_name(trace.stop_reason);
    out << '\n';
  }
}

Matrix encode(const CaeModel& model, const Matrix& points) {
  return nn::forward_batch(model.encoder, points.transpose(), false).output.transpose();
}

Matrix decode(const CaeModel& model, const Matrix& latents) {
  return nn::forward_batch(model.decoder, latents.transpose(), false).output.transpose();
}

}  // namespace cae::training
