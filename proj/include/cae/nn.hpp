#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace cae {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

namespace nn {

enum class ActivationKind { Tanh, HardTanh, Identity };

/// Checkpoint names: "tanh", "hardtanh", "none".
std::string_view activation_name(ActivationKind kind);
ActivationKind parse_activation(std::string_view name);

// HardTanh uses derivative 1 on the closed interval [-1, 1], so the kinks count as interior.
double activate(ActivationKind kind, double z);
double activate_derivative(ActivationKind kind, double z);
double activate_second_derivative(ActivationKind kind, double z);

struct LayerSpec {
  Index in_width = 0;
  Index out_width = 0;
  ActivationKind activation = ActivationKind::Identity;
};

struct Layer {
  LayerSpec spec;
  Matrix weight;  // out x in
  Vector bias;    // out
};

class MlpNetwork {
 public:
  MlpNetwork() = default;
  explicit MlpNetwork(std::vector<Layer> layers);

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  Index depth() const { return static_cast<Index>(layers_.size()); }
  Index input_width() const;
  Index output_width() const;
  Index parameter_count() const;
  std::vector<LayerSpec> specs() const;

 private:
  std::vector<Layer> layers_;
};

/// Throws ShapeError unless the list is nonempty, widths are positive and consecutive widths chain.
void validate_specs(const std::vector<LayerSpec>& specs);

/// Uniform on [-s/sqrt(fan_in), s/sqrt(fan_in)] for every weight and bias, s = scale.
MlpNetwork init_params(const std::vector<LayerSpec>& specs, std::uint64_t seed, double scale = 1.0);

Vector forward(const MlpNetwork& net, const Vector& x);

struct JacobianBundle {
  Vector value;
  Matrix jacobian;  // out x in
};

/// Value and input-Jacobian in one pass: J_i = diag(rho'(z_i)) W_i J_{i-1}, J_0 = I.
JacobianBundle forward_jacobian(const MlpNetwork& net, const Vector& x);

/// Per-layer record of a batched forward pass, kept for the backward sweep.
struct LayerCache {
  Matrix input;        // in x B
  Matrix pre;          // z = W a + b, out x B
  Matrix slope;        // rho'(z), out x B
  Matrix jac_input;    // in x (B*c), Jacobian entering the layer
  Matrix jac_pre;      // W * jac_input, out x (B*c)
};

/// Batched pass over B column-stacked inputs. When Jacobians are tracked, the Jacobian of
/// point p occupies columns [p*c, (p+1)*c) of `jacobian`, with c the network input width.
struct BatchPass {
  std::vector<LayerCache> layers;
  Matrix output;    // out x B
  Matrix jacobian;  // out x (B*c), empty when not tracked
  Index jacobian_columns = 0;
  bool tracks_jacobian() const { return jacobian_columns > 0; }
};

BatchPass forward_batch(const MlpNetwork& net, const Matrix& inputs, bool track_jacobian);

struct NetworkGradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;

  static NetworkGradients zeros_like(const MlpNetwork& net);
  NetworkGradients& operator+=(const NetworkGradients& other);
  NetworkGradients& operator*=(double s);
  bool all_finite() const;
  /// Flattened in layer order, weights (row-major) before biases within a layer.
  Vector flatten() const;
};

/// Reverse sweep through a BatchPass. `output_grad` is dLoss/d(output) (out x B) and
/// `jacobian_grad` is dLoss/d(jacobian) (same layout as BatchPass::jacobian, or empty).
/// Parameter gradients are accumulated into `grads`; the return value is dLoss/d(inputs).
Matrix backward_batch(const MlpNetwork& net, const BatchPass& pass, const Matrix& output_grad,
                      const Matrix& jacobian_grad, NetworkGradients& grads);

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  NetworkGradients first_moment;
  NetworkGradients second_moment;
  std::uint64_t step_count = 0;
  AdamHyper hyper;

  static AdamState for_network(const MlpNetwork& net, const AdamHyper& hyper = {});
};

void adam_step(MlpNetwork& net, const NetworkGradients& grads, AdamState& state);

/// Parameter vector in the same order as NetworkGradients::flatten.
Vector flatten_params(const MlpNetwork& net);
void assign_params(MlpNetwork& net, const Vector& flat);

nlohmann::json to_json(const MlpNetwork& net);
MlpNetwork network_from_json(const nlohmann::json& doc);

}  // namespace nn
}  // namespace cae
