#include "cae/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace cae::gradcheck {

using training::CaeModel;
using training::GradientSpace;
using training::LossSpec;

namespace {

double pair_sum(const std::vector<Vector>& vecs, const LossSpec& spec) {
  if (!spec.pairs) return geometry::pairwise_orthogonality(vecs, spec.norm);
  double total = 0.0;
  for (const auto& [j, k] : *spec.pairs) {
    const double ip = vecs[static_cast<std::size_t>(j)].dot(vecs[static_cast<std::size_t>(k)]);
    total += spec.norm == geometry::OrthoNorm::L2 ? ip * ip : std::abs(ip);
  }
  return total;
}

}  // namespace

double reference_loss(const CaeModel& model, const data::Dataset& data, const LossSpec& spec) {
  const Index n_points = data.size();
  double recon = 0.0;
  double ortho = 0.0;
  double sup = 0.0;
  for (Index i = 0; i < n_points; ++i) {
    const Vector x = data.points.row(i).transpose();
    const auto enc = nn::forward_jacobian(model.encoder, x);
    const Vector x_hat = nn::forward(model.decoder, enc.value);
    recon += (x - x_hat).squaredNorm();

    std::vector<Vector> vecs;
    if (spec.space == GradientSpace::DecoderJacobian) {
      const auto dec = nn::forward_jacobian(model.decoder, enc.value);
      for (Index c = 0; c < dec.jacobian.cols(); ++c) vecs.push_back(dec.jacobian.col(c));
    } else {
      for (Index r = 0; r < enc.jacobian.rows(); ++r) {
        Vector g = enc.jacobian.row(r).transpose();
        if (spec.space == GradientSpace::TangentProjected) {
          g = geometry::project_to_tangent(g, spec.frames->frames[static_cast<std::size_t>(i)].basis);
        }
        vecs.push_back(std::move(g));
      }
    }
    ortho += pair_sum(vecs, spec);

    if (spec.supervised) {
      const double d = enc.value(spec.supervised->latent_index) - data.labels(i, spec.supervised->label_column);
      sup += d * d;
    }
  }
  const double inv = 1.0 / static_cast<double>(n_points);
  double total = (spec.reconstruction ? recon * inv : 0.0) + spec.alpha * ortho * inv;
  if (spec.supervised) total += spec.supervised->weight * sup * inv;
  return total;
}

Vector finite_difference_gradient(const CaeModel& model, const data::Dataset& data, const LossSpec& spec,
                                  double step) {
  const Vector enc0 = nn::flatten_params(model.encoder);
  const Vector dec0 = nn::flatten_params(model.decoder);
  Vector grad(enc0.size() + dec0.size());
  CaeModel probe = model;
  auto eval_at = [&](Index k, double delta) {
    if (k < enc0.size()) {
      Vector p = enc0;
      p(k) += delta;
      nn::assign_params(probe.encoder, p);
      nn::assign_params(probe.decoder, dec0);
    } else {
      Vector p = dec0;
      p(k - enc0.size()) += delta;
      nn::assign_params(probe.encoder, enc0);
      nn::assign_params(probe.decoder, p);
    }
    return reference_loss(probe, data, spec);
  };
  for (Index k = 0; k < grad.size(); ++k) {
    const double f2p = eval_at(k, 2 * step);
    const double f1p = eval_at(k, step);
    const double f1m = eval_at(k, -step);
    const double f2m = eval_at(k, -2 * step);
    grad(k) = (-f2p + 8.0 * f1p - 8.0 * f1m + f2m) / (12.0 * step);
  }
  return grad;
}

Comparison compare(const Vector& analytic, const Vector& numeric, double rel_tol, double abs_floor) {
  Comparison c;
  c.parameters = analytic.size();
  if (analytic.size() != numeric.size()) {
    c.failures = std::max(analytic.size(), numeric.size());
    return c;
  }
  for (Index k = 0; k < analytic.size(); ++k) {
    const double err = std::abs(analytic(k) - numeric(k));
    const double scale = std::max(std::abs(analytic(k)), std::abs(numeric(k)));
    c.max_abs_error = std::max(c.max_abs_error, err);
    if (scale > abs_floor) c.max_rel_error = std::max(c.max_rel_error, err / scale);
    if (!(err <= abs_floor + rel_tol * scale)) ++c.failures;
  }
  return c;
}

std::vector<SuiteCase> run_suite(const SuiteOptions& options) {
  std::vector<SuiteCase> cases;
  std::mt19937_64 rng(options.seed);
  auto uniform_int = [&](Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); };
  std::uniform_real_distribution<double> coord(-1.0, 1.0);

  for (int m = 0; m < options.models; ++m) {
    const Index n = uniform_int(2, std::min<Index>(4, options.max_width));
    auto random_specs = [&](Index in, Index out) {
      const Index depth = uniform_int(1, options.max_depth);
      std::vector<nn::LayerSpec> specs;
      Index prev = in;
      for (Index i = 0; i < depth; ++i) {
        const Index next = i == depth - 1 ? out : uniform_int(2, options.max_width);
        specs.push_back({prev, next, nn::ActivationKind::Tanh});
        prev = next;
      }
      return specs;
    };
    const std::uint64_t model_seed = rng();
    CaeModel model{nn::init_params(random_specs(n, n), model_seed, 1.5),
                   nn::init_params(random_specs(n, n), model_seed + 1, 1.5), model_seed};

    data::Dataset pts;
    pts.points.resize(options.points, n);
    for (Index i = 0; i < options.points; ++i)
      for (Index c = 0; c < n; ++c) pts.points(i, c) = coord(rng);

    for (double alpha : options.alphas) {
      LossSpec spec;
      spec.alpha = alpha;
      spec.norm = geometry::OrthoNorm::L2;
      const Vector analytic = training::loss_gradients(model, pts, {}, spec).grads.flatten();
      const Vector numeric = finite_difference_gradient(model, pts, spec);
      SuiteCase sc;
      sc.seed = model_seed;
      sc.description = "model " + std::to_string(m) + " n=" + std::to_string(n) + " enc_depth=" +
                       std::to_string(model.encoder.depth()) + " dec_depth=" + std::to_string(model.decoder.depth()) +
                       " alpha=" + std::to_string(alpha);
      sc.result = compare(analytic, numeric, options.rel_tol, options.abs_floor);
      cases.push_back(std::move(sc));
    }
  }
  return cases;
}

}  // namespace cae::gradcheck
