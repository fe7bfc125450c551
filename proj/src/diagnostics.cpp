#include "cae/diagnostics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <thread>
#include <tuple>

namespace cae::diagnostics {

using training::CaeModel;

DimensionReport classify_norms(const Vector& final_norms, double rel_threshold) {
  if (final_norms.size() == 0) throw ArgumentError("no gradient norms to classify");
  if (!(rel_threshold > 0 && rel_threshold < 1)) throw ArgumentError("collapse threshold must lie in (0, 1)");
  const double peak = final_norms.maxCoeff();
  if (!(peak > 0)) throw DegenerateError("every latent component has zero gradient");
  DimensionReport r;
  r.final_grad_norm = final_norms;
  r.collapse_threshold = rel_threshold;
  for (Index i = 0; i < final_norms.size(); ++i) {
    (final_norms(i) < rel_threshold * peak ? r.collapsed : r.active).push_back(i);
  }
  r.inferred_dimension = static_cast<Index>(r.active.size());
  return r;
}

DimensionReport classify_components(const training::TrainingTrace& trace, double rel_threshold) {
  if (trace.empty()) throw ArgumentError("cannot classify an empty trace");
  const Vector& norms = trace.final_grad_norm_mean.size() > 0 ? trace.final_grad_norm_mean : trace.rows.back().grad_norm_mean;
  DimensionReport r = classify_norms(norms, rel_threshold);
  r.latent_mean = trace.latent_mean;
  r.latent_min = trace.latent_min;
  r.latent_max = trace.latent_max;
  return r;
}

nlohmann::json to_json(const DimensionReport& r) {
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  auto one_based = [](const std::vector<Index>& idx) {
    std::vector<Index> out;
    for (Index i : idx) out.push_back(i + 1);
    return out;
  };
  return {{"inferred_dimension", r.inferred_dimension},
          {"active_components", one_based(r.active)},
          {"collapsed_components", one_based(r.collapsed)},
          {"collapse_threshold", r.collapse_threshold},
          {"final_grad_norm", vec(r.final_grad_norm)},
          {"latent_mean", vec(r.latent_mean)},
          {"latent_min", vec(r.latent_min)},
          {"latent_max", vec(r.latent_max)}};
}

Matrix reconstruct_frozen(const CaeModel& model, const Matrix& points, const std::vector<Index>& frozen,
                          const Vector& means) {
  if (points.cols() != model.ambient_dimension()) {
    throw ShapeError("points have dimension " + std::to_string(points.cols()) + ", model expects " +
                     std::to_string(model.ambient_dimension()));
  }
  Matrix latents = training::encode(model, points);
  for (Index c : frozen) {
    if (c < 0 || c >= latents.cols() || c >= means.size()) throw ArgumentError("frozen component out of range");
    latents.col(c).setConstant(means(c));
  }
  return training::decode(model, latents);
}

double mean_squared_error(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("reconstruction shape mismatch");
  return (a - b).rowwise().squaredNorm().mean();
}

double freeze_and_reconstruct(const CaeModel& model, const Matrix& test_points, const DimensionReport& report) {
  if (!report.collapsed.empty() && report.latent_mean.size() != model.latent_width()) {
    throw ArgumentError("report carries no training means for this model");
  }
  return mean_squared_error(test_points, reconstruct_frozen(model, test_points, report.collapsed, report.latent_mean));
}

Vector component_gradient_norms(const CaeModel& model, const Matrix& points) {
  data::Dataset d;
  d.points = points;
  training::LossSpec spec;
  spec.alpha = 0.0;
  return training::evaluate(model, d, {}, spec).grad_norm_mean;
}

TopKComparison topk_comparison(const CaeModel& model, const Matrix& points, Index k) {
  const Index l = model.latent_width();
  if (k < 0 || k > l) throw ArgumentError("k must lie in [0, latent width]");
  const Vector norms = component_gradient_norms(model, points);
  TopKComparison out;
  out.ranking.resize(static_cast<std::size_t>(l));
  std::iota(out.ranking.begin(), out.ranking.end(), Index{0});
  std::stable_sort(out.ranking.begin(), out.ranking.end(), [&](Index a, Index b) { return norms(a) > norms(b); });
  const Vector means = training::encode(model, points).colwise().mean().transpose();
  std::vector<Index> frozen(out.ranking.begin() + k, out.ranking.end());
  std::sort(frozen.begin(), frozen.end());
  out.full_error = mean_squared_error(points, reconstruct_frozen(model, points, {}, means));
  out.topk_error = mean_squared_error(points, reconstruct_frozen(model, points, frozen, means));
  return out;
}

Index hidden_width(Index ambient) {
  if (ambient < 1) throw ArgumentError("ambient dimension must be positive");
  Index root = static_cast<Index>(std::sqrt(static_cast<double>(ambient)));
  while (root * root < ambient) ++root;
  while (root > 1 && (root - 1) * (root - 1) >= ambient) --root;
  return 10 * root;
}

RobustnessCell robustness_cell(const data::Dataset& base, Index ambient, double level, std::uint64_t seed,
                               const RobustnessOptions& options) {
  RobustnessCell cell;
  cell.ambient = ambient;
  cell.level = level;
  cell.sigma = level * options.diameter;
  cell.seed = seed;
  cell.width = hidden_width(ambient);
  try {
    data::Dataset d = ambient > base.ambient_dimension() ? data::embed_unitary(base, ambient, seed * 7919 + 17) : base;
    if (d.ambient_dimension() != ambient) throw ArgumentError("base data has higher dimension than the target");
    d = data::add_gaussian_noise(d, cell.sigma, seed * 104729 + 3);

    std::vector<nn::ActivationKind> acts(5, nn::ActivationKind::Tanh);
    acts.push_back(nn::ActivationKind::Identity);
    acts.push_back(nn::ActivationKind::Identity);
    auto model = training::make_model(ambient, options.intrinsic_latent, cell.width, acts, seed, options.init_scale);

    training::LossSpec spec;
    spec.alpha = options.alpha;
    spec.norm = options.norm;
    training::TrainConfig cfg;
    cfg.epochs_max = options.epochs_max;
    cfg.plateau_patience = options.plateau_patience;
    cfg.learning_rate = options.learning_rate;
    cfg.batch_size = options.batch_size;
    cfg.seed = seed;
    cfg.stop_mode = training::StopMode::Robustness;
    cfg.noise_sigma = cell.sigma;

    auto result = training::train(d, std::move(model), spec, cfg);
    cell.stop_reason = std::string(training::stop_reason_name(result.trace.stop_reason));
    cell.epochs = result.trace.rows.empty() ? 0 : result.trace.rows.back().epoch;
    const auto cmp = topk_comparison(result.model, d.points, 2);
    cell.full_error = cmp.full_error;
    cell.top2_error = cmp.topk_error;
    cell.inferred_dimension = classify_components(result.trace, options.collapse_threshold).inferred_dimension;
  } catch (const training::TrainingAborted& e) {
    cell.failed = true;
    cell.message = e.what();
    cell.stop_reason = "numerical_failure";
    cell.epochs = e.trace().rows.empty() ? 0 : e.trace().rows.back().epoch;
  } catch (const Error& e) {
    cell.failed = true;
    cell.message = e.what();
    cell.stop_reason = "failed";
  }
  return cell;
}

std::vector<RobustnessCell> robustness_sweep(const data::Dataset& base, const RobustnessOptions& options) {
  using Key = std::tuple<Index, double, std::uint64_t>;
  std::vector<Key> keys;
  std::set<Key> seen;
  for (Index n : options.dims)
    for (double l : options.levels)
      for (std::uint64_t s : options.seeds) {
        if (!seen.insert({n, l, s}).second) {
          throw ConfigError("duplicate sweep cell (n=" + std::to_string(n) + ", l=" + std::to_string(l) +
                            ", seed=" + std::to_string(s) + ")");
        }
        keys.emplace_back(n, l, s);
      }
  if (keys.empty()) throw ConfigError("sweep grid is empty");
  std::sort(keys.begin(), keys.end());

  std::vector<RobustnessCell> cells(keys.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < keys.size(); i = next++) {
      const auto& [n, l, s] = keys[i];
      cells[i] = robustness_cell(base, n, l, s, options);
    }
  };
  const int jobs = std::max(1, std::min<int>(options.jobs, static_cast<int>(keys.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return cells;
}

void save_sweep_csv(const std::vector<RobustnessCell>& cells, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write '" + path.string() + "'");
  out << "n,l,sigma,seed,w,full_err,top2_err,inferred_dim,stop_reason,epochs\n";
  for (const auto& c : cells) {
    out << c.ambient << ',' << data::format_double(c.level) << ',' << data::format_double(c.sigma) << ',' << c.seed
        << ',' << c.width << ',' << data::format_double(c.full_error) << ',' << data::format_double(c.top2_error) << ','
        << c.inferred_dimension << ',' << c.stop_reason << ',' << c.epochs << '\n';
  }
}

}  // namespace cae::diagnostics
