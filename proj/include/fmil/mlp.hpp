#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "fmil/errors.hpp"

namespace fmil {

enum class Activation { Tanh, ReLU };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

/**
 * Fully connected network with a linear output layer and a flat parameter
 * vector (per layer: row-major weight block, then bias). Weights are
 * initialized uniformly in +-sqrt(6/(fan_in+fan_out)) from the given seed;
 * biases start at zero.
 */
class Mlp {
 public:
  Mlp(std::vector<int> layer_sizes, Activation activation, std::uint64_t seed);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  Activation activation() const { return activation_; }
  std::uint64_t seed() const { return seed_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }

  static Eigen::Index param_count(const std::vector<int>& sizes);
  const Eigen::VectorXd& params() const { return params_; }
  Eigen::VectorXd& params() { return params_; }

  /// Batched forward pass; rows are samples.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;

  struct Trace {
    Eigen::MatrixXd input;
    std::vector<Eigen::MatrixXd> pre;   // pre-activations per layer
    std::vector<Eigen::MatrixXd> post;  // activations (last layer is linear)
  };

  Eigen::MatrixXd forward_traced(const Eigen::MatrixXd& x, Trace* trace) const;

  /// Parameter gradient of sum_rows dot(out_grad_row, output_row); fills
  /// input_grad with the matching input gradient when requested.
  Eigen::VectorXd backward(const Trace& trace, const Eigen::MatrixXd& out_grad,
                           Eigen::MatrixXd* input_grad = nullptr) const;

  /// Gradient of the scalar output with respect to one input sample.
  Eigen::VectorXd input_gradient(const Eigen::VectorXd& x) const;

  /// d/dparams of dot(w, grad_x f(x)) for a scalar-output network with w
  /// held constant, via reverse accumulation over the tangent pass.
  Eigen::VectorXd param_grad_of_input_gradient(const Eigen::VectorXd& x,
                                               const Eigen::VectorXd& w) const;

 private:
  std::vector<int> sizes_;
  Activation activation_;
  std::uint64_t seed_;
  Eigen::VectorXd params_;
  std::vector<Eigen::Index> weight_offsets_;
  std::vector<Eigen::Index> bias_offsets_;

  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
  weight(int layer) const;
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const;
};

/// Adam-style adaptive-moment optimizer over a flat parameter vector.
struct AdamOptimizer {
  double step_size = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step_count = 0;
  Eigen::VectorXd m;
  Eigen::VectorXd v;

  explicit AdamOptimizer(double step = 1e-3) : step_size(step) {}

  /// One update in place; throws DivergedParameters when the gradient or the
  /// updated parameters are not finite.
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
};

struct GradientPenalty {
  double value = 0.0;
  Eigen::VectorXd param_grad;
};

/**
 * Two-sided unit-norm gradient penalty on interpolated inputs:
 * weight * mean_j (|grad_x f(xhat_j)| - 1)^2, with one uniform epsilon per
 * pair and pairs formed by index alignment after a seeded shuffle of the
 * policy batch. Returns the penalty and its exact parameter gradient.
 */
GradientPenalty gradient_penalty(const Mlp& net, const Eigen::MatrixXd& expert_batch,
                                 const Eigen::MatrixXd& policy_batch, double weight,
                                 std::uint64_t seed);

}  // namespace fmil
