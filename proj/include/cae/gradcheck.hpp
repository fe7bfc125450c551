#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cae/training.hpp"

namespace cae::gradcheck {

/// Loss evaluated point by point through nn::forward_jacobian and geometry::pairwise_orthogonality.
/// Shares no code with the batched forward/backward path, so it can serve as the oracle.
double reference_loss(const training::CaeModel& model, const data::Dataset& data, const training::LossSpec& spec);

/// Fourth-order central differences of reference_loss with respect to every parameter,
/// flattened encoder-then-decoder in NetworkGradients::flatten order.
Vector finite_difference_gradient(const training::CaeModel& model, const data::Dataset& data,
                                  const training::LossSpec& spec, double step = 1e-4);

struct Comparison {
  Index parameters = 0;
  Index failures = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;  // over entries above the absolute floor
};

/// Entry passes when |analytic - fd| <= abs_floor + rel_tol * max(|analytic|, |fd|).
Comparison compare(const Vector& analytic, const Vector& numeric, double rel_tol = 1e-5, double abs_floor = 1e-8);

struct SuiteCase {
  std::uint64_t seed = 0;
  std::string description;
  Comparison result;
};

struct SuiteOptions {
  int models = 50;
  std::uint64_t seed = 2024;
  Index max_width = 6;
  Index max_depth = 4;
  Index points = 5;
  std::vector<double> alphas{0.0, 1.0};
  double rel_tol = 1e-5;
  double abs_floor = 1e-8;
};

/// Random small tanh CAEs checked under the full L2 loss for each alpha.
std::vector<SuiteCase> run_suite(const SuiteOptions& options);

}  // namespace cae::gradcheck
