#include "cae/nn.hpp"

#include <cmath>
#include <random>

#include "cae/errors.hpp"

namespace cae::nn {

std::string_view activation_name(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::Tanh: return "tanh";
    case ActivationKind::HardTanh: return "hardtanh";
    case ActivationKind::Identity: return "none";
  }
  return "none";
}

ActivationKind parse_activation(std::string_view name) {
  if (name == "tanh") return ActivationKind::Tanh;
  if (name == "hardtanh") return ActivationKind::HardTanh;
  if (name == "none" || name == "identity" || name == "linear") return ActivationKind::Identity;
  throw ArgumentError("unknown activation '" + std::string(name) + "'");
}

double activate(ActivationKind kind, double z) {
  switch (kind) {
    case ActivationKind::Tanh: return std::tanh(z);
    case ActivationKind::HardTanh: return z < -1.0 ? -1.0 : (z > 1.0 ? 1.0 : z);
    case ActivationKind::Identity: return z;
  }
  return z;
}

double activate_derivative(ActivationKind kind, double z) {
  switch (kind) {
    case ActivationKind::Tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case ActivationKind::HardTanh: return (z < -1.0 || z > 1.0) ? 0.0 : 1.0;
    case ActivationKind::Identity: return 1.0;
  }
  return 1.0;
}

double activate_second_derivative(ActivationKind kind, double z) {
  if (kind == ActivationKind::Tanh) {
    const double t = std::tanh(z);
    return -2.0 * t * (1.0 - t * t);
  }
  return 0.0;
}

MlpNetwork::MlpNetwork(std::vector<Layer> layers) : layers_(std::move(layers)) {
  validate_specs(specs());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.weight.rows() != l.spec.out_width || l.weight.cols() != l.spec.in_width ||
        l.bias.size() != l.spec.out_width) {
      throw ShapeError("layer " + std::to_string(i + 1) + " parameters do not match its spec");
    }
  }
}

Index MlpNetwork::input_width() const { return layers_.empty() ? 0 : layers_.front().spec.in_width; }
Index MlpNetwork::output_width() const { return layers_.empty() ? 0 : layers_.back().spec.out_width; }

Index MlpNetwork::parameter_count() const {
  Index count = 0;
  for (const auto& l : layers_) count += l.weight.size() + l.bias.size();
  return count;
}

std::vector<LayerSpec> MlpNetwork::specs() const {
  std::vector<LayerSpec> out;
  out.reserve(layers_.size());
  for (const auto& l : layers_) out.push_back(l.spec);
  return out;
}

void validate_specs(const std::vector<LayerSpec>& specs) {
  if (specs.empty()) throw ShapeError("network needs at least one layer");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].in_width <= 0 || specs[i].out_width <= 0) {
      throw ShapeError("layer " + std::to_string(i + 1) + " has a non-positive width");
    }
    if (i > 0 && specs[i].in_width != specs[i - 1].out_width) {
      throw ShapeError("layer " + std::to_string(i + 1) + " expects width " + std::to_string(specs[i].in_width) +
                       " but layer " + std::to_string(i) + " produces " + std::to_string(specs[i - 1].out_width));
    }
  }
}

MlpNetwork init_params(const std::vector<LayerSpec>& specs, std::uint64_t seed, double scale) {
  validate_specs(specs);
  std::mt19937_64 rng(seed);
  std::vector<Layer> layers;
  layers.reserve(specs.size());
  for (const auto& spec : specs) {
    const double bound = scale / std::sqrt(static_cast<double>(spec.in_width));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Layer layer{spec, Matrix(spec.out_width, spec.in_width), Vector(spec.out_width)};
    for (Index r = 0; r < spec.out_width; ++r)
      for (Index c = 0; c < spec.in_width; ++c) layer.weight(r, c) = dist(rng);
    for (Index r = 0; r < spec.out_width; ++r) layer.bias(r) = dist(rng);
    layers.push_back(std::move(layer));
  }
  return MlpNetwork(std::move(layers));
}

namespace {

void check_input(const MlpNetwork& net, Index rows) {
  if (net.depth() == 0) throw ShapeError("empty network");
  if (rows != net.input_width()) {
    throw ShapeError("input has length " + std::to_string(rows) + ", network expects " +
                     std::to_string(net.input_width()));
  }
}

template <class F>
Matrix apply(const Matrix& z, F f) {
  return z.unaryExpr(f);
}

Matrix activate_all(ActivationKind kind, const Matrix& z) {
  return apply(z, [kind](double v) { return activate(kind, v); });
}

Matrix slope_all(ActivationKind kind, const Matrix& z) {
  return apply(z, [kind](double v) { return activate_derivative(kind, v); });
}

// Scales each c-column block p of `m` row-wise by `scale.col(p)`.
void scale_blocks(Matrix& m, const Matrix& scale, Index c) {
  const Index batch = scale.cols();
  for (Index p = 0; p < batch; ++p) {
    m.middleCols(p * c, c).array().colwise() *= scale.col(p).array();
  }
}

}  // namespace

Vector forward(const MlpNetwork& net, const Vector& x) {
  check_input(net, x.size());
  Vector a = x;
  for (const auto& l : net.layers()) {
    Vector z = l.weight * a + l.bias;
    for (Index r = 0; r < z.size(); ++r) z(r) = activate(l.spec.activation, z(r));
    a = std::move(z);
  }
  return a;
}

JacobianBundle forward_jacobian(const MlpNetwork& net, const Vector& x) {
  check_input(net, x.size());
  Vector a = x;
  Matrix jac = Matrix::Identity(x.size(), x.size());
  for (const auto& l : net.layers()) {
    Vector z = l.weight * a + l.bias;
    Matrix jz = l.weight * jac;
    for (Index r = 0; r < z.size(); ++r) {
      jz.row(r) *= activate_derivative(l.spec.activation, z(r));
      z(r) = activate(l.spec.activation, z(r));
    }
    a = std::move(z);
    jac = std::move(jz);
  }
  return {std::move(a), std::move(jac)};
}

BatchPass forward_batch(const MlpNetwork& net, const Matrix& inputs, bool track_jacobian) {
  check_input(net, inputs.rows());
  const Index batch = inputs.cols();
  const Index c = net.input_width();

  BatchPass pass;
  pass.layers.reserve(net.layers().size());
  pass.jacobian_columns = track_jacobian ? c : 0;

  Matrix a = inputs;
  Matrix jac;
  if (track_jacobian) {
    jac = Matrix::Zero(c, batch * c);
    for (Index p = 0; p < batch; ++p) jac.middleCols(p * c, c).setIdentity();
  }

  for (const auto& l : net.layers()) {
    LayerCache cache;
    cache.pre = l.weight * a;
    cache.pre.colwise() += l.bias;
    cache.slope = slope_all(l.spec.activation, cache.pre);
    Matrix next = activate_all(l.spec.activation, cache.pre);
    if (track_jacobian) {
      cache.jac_pre = l.weight * jac;
      Matrix jac_next = cache.jac_pre;
      scale_blocks(jac_next, cache.slope, c);
      cache.jac_input = std::move(jac);
      jac = std::move(jac_next);
    }
    cache.input = std::move(a);
    a = std::move(next);
    pass.layers.push_back(std::move(cache));
  }
  pass.output = std::move(a);
  if (track_jacobian) pass.jacobian = std::move(jac);
  return pass;
}

NetworkGradients NetworkGradients::zeros_like(const MlpNetwork& net) {
  NetworkGradients g;
  for (const auto& l : net.layers()) {
    g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Vector::Zero(l.bias.size()));
  }
  return g;
}

NetworkGradients& NetworkGradients::operator+=(const NetworkGradients& other) {
  if (other.weight.size() != weight.size()) throw ShapeError("gradient sets differ in depth");
  for (std::size_t i = 0; i < weight.size(); ++i) {
    weight[i] += other.weight[i];
    bias[i] += other.bias[i];
  }
  return *this;
}

NetworkGradients& NetworkGradients::operator*=(double s) {
  for (std::size_t i = 0; i < weight.size(); ++i) {
    weight[i] *= s;
    bias[i] *= s;
  }
  return *this;
}

bool NetworkGradients::all_finite() const {
  for (std::size_t i = 0; i < weight.size(); ++i) {
    if (!weight[i].allFinite() || !bias[i].allFinite()) return false;
  }
  return true;
}

Vector NetworkGradients::flatten() const {
  Index total = 0;
  for (std::size_t i = 0; i < weight.size(); ++i) total += weight[i].size() + bias[i].size();
  Vector out(total);
  Index k = 0;
  for (std::size_t i = 0; i < weight.size(); ++i) {
    for (Index r = 0; r < weight[i].rows(); ++r)
      for (Index c = 0; c < weight[i].cols(); ++c) out(k++) = weight[i](r, c);
    for (Index r = 0; r < bias[i].size(); ++r) out(k++) = bias[i](r);
  }
  return out;
}

Matrix backward_batch(const MlpNetwork& net, const BatchPass& pass, const Matrix& output_grad,
                      const Matrix& jacobian_grad, NetworkGradients& grads) {
  const auto& layers = net.layers();
  if (pass.layers.size() != layers.size()) throw ShapeError("pass does not belong to this network");
  if (grads.weight.size() != layers.size()) throw ShapeError("gradient set does not match network depth");
  const Index batch = pass.output.cols();
  if (output_grad.rows() != pass.output.rows() || output_grad.cols() != batch) {
    throw ShapeError("output gradient shape mismatch");
  }
  const bool with_jac = jacobian_grad.size() > 0;
  const Index c = pass.jacobian_columns;
  if (with_jac && (!pass.tracks_jacobian() || jacobian_grad.rows() != pass.jacobian.rows() ||
                   jacobian_grad.cols() != pass.jacobian.cols())) {
    throw ShapeError("jacobian gradient supplied for a pass without matching jacobian");
  }

  Matrix g_out = output_grad;
  Matrix g_jac = jacobian_grad;
  Matrix input_grad;
  for (std::size_t idx = layers.size(); idx-- > 0;) {
    const Layer& layer = layers[idx];
    const LayerCache& cache = pass.layers[idx];

    Matrix g_pre = cache.slope.cwiseProduct(g_out);
    Matrix g_jac_pre;
    if (with_jac) {
      g_jac_pre = g_jac;
      scale_blocks(g_jac_pre, cache.slope, c);
      if (layer.spec.activation == ActivationKind::Tanh) {
        // d(slope)/dz feeds the Jacobian dependence back into the pre-activations.
        for (Index p = 0; p < batch; ++p) {
          const auto block = (g_jac.middleCols(p * c, c).array() * cache.jac_pre.middleCols(p * c, c).array())
                                 .rowwise()
                                 .sum();
          for (Index r = 0; r < g_pre.rows(); ++r) {
            g_pre(r, p) += activate_second_derivative(layer.spec.activation, cache.pre(r, p)) * block(r);
          }
        }
      }
      grads.weight[idx].noalias() += g_jac_pre * cache.jac_input.transpose();
    }
    grads.weight[idx].noalias() += g_pre * cache.input.transpose();
    grads.bias[idx] += g_pre.rowwise().sum();

    if (idx > 0) {
      g_out.noalias() = layer.weight.transpose() * g_pre;
      if (with_jac) g_jac.noalias() = layer.weight.transpose() * g_jac_pre;
    } else {
      input_grad.noalias() = layer.weight.transpose() * g_pre;
    }
  }
  return input_grad;
}

AdamState AdamState::for_network(const MlpNetwork& net, const AdamHyper& hyper) {
  AdamState s;
  s.first_moment = NetworkGradients::zeros_like(net);
  s.second_moment = NetworkGradients::zeros_like(net);
  s.hyper = hyper;
  return s;
}

void adam_step(MlpNetwork& net, const NetworkGradients& grads, AdamState& state) {
  auto& layers = net.layers();
  if (grads.weight.size() != layers.size() || state.first_moment.weight.size() != layers.size()) {
    throw ShapeError("adam: gradient/state depth does not match network");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (grads.weight[i].rows() != layers[i].weight.rows() || grads.weight[i].cols() != layers[i].weight.cols() ||
        grads.bias[i].size() != layers[i].bias.size()) {
      throw ShapeError("adam: gradient shape mismatch at layer " + std::to_string(i + 1));
    }
  }
  const auto& h = state.hyper;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);

  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = h.beta1 * m + (1.0 - h.beta1) * g;
    v = h.beta2 * v + (1.0 - h.beta2) * g.cwiseProduct(g);
    param.array() -= h.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + h.epsilon);
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    update(layers[i].weight, grads.weight[i], state.first_moment.weight[i], state.second_moment.weight[i]);
    update(layers[i].bias, grads.bias[i], state.first_moment.bias[i], state.second_moment.bias[i]);
  }
}

Vector flatten_params(const MlpNetwork& net) {
  NetworkGradients view;
  for (const auto& l : net.layers()) {
    view.weight.push_back(l.weight);
    view.bias.push_back(l.bias);
  }
  return view.flatten();
}

void assign_params(MlpNetwork& net, const Vector& flat) {
  if (flat.size() != net.parameter_count()) throw ShapeError("flat parameter vector has wrong length");
  Index k = 0;
  for (auto& l : net.layers()) {
    for (Index r = 0; r < l.weight.rows(); ++r)
      for (Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat(k++);
    for (Index r = 0; r < l.bias.size(); ++r) l.bias(r) = flat(k++);
  }
}

nlohmann::json to_json(const MlpNetwork& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l.weight.size()));
    for (Index r = 0; r < l.weight.rows(); ++r)
      for (Index c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
    std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back({{"in_width", l.spec.in_width},
                      {"out_width", l.spec.out_width},
                      {"activation", std::string(activation_name(l.spec.activation))},
                      {"weight", w},
                      {"bias", b}});
  }
  return {{"layers", layers}};
}

MlpNetwork network_from_json(const nlohmann::json& doc) {
  try {
    std::vector<Layer> layers;
    for (const auto& jl : doc.at("layers")) {
      LayerSpec spec{jl.at("in_width").get<Index>(), jl.at("out_width").get<Index>(),
                     parse_activation(jl.at("activation").get<std::string>())};
      const auto w = jl.at("weight").get<std::vector<double>>();
      const auto b = jl.at("bias").get<std::vector<double>>();
      if (static_cast<Index>(w.size()) != spec.in_width * spec.out_width ||
          static_cast<Index>(b.size()) != spec.out_width) {
        throw ShapeError("checkpoint layer arrays do not match declared widths");
      }
      Layer layer{spec, Matrix(spec.out_width, spec.in_width), Vector(spec.out_width)};
      std::size_t k = 0;
      for (Index r = 0; r < spec.out_width; ++r)
        for (Index c = 0; c < spec.in_width; ++c) layer.weight(r, c) = w[k++];
      for (Index r = 0; r < spec.out_width; ++r) layer.bias(r) = b[static_cast<std::size_t>(r)];
      layers.push_back(std::move(layer));
    }
    return MlpNetwork(std::move(layers));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed network checkpoint: ") + e.what());
  }
}

}  // namespace cae::nn
