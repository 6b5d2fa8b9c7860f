#include "fmil/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace fmil {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::ArrayXXd act_value(Activation act, const Eigen::MatrixXd& z) {
  if (act == Activation::Tanh) return z.array().tanh();
  return z.array().max(0.0);
}

// Derivative expressed through the activation value a = act(z).
Eigen::ArrayXXd act_deriv_from_value(Activation act, const Eigen::MatrixXd& a) {
  if (act == Activation::Tanh) return 1.0 - a.array().square();
  return (a.array() > 0.0).cast<double>();
}

Eigen::ArrayXXd act_second_deriv_from_value(Activation act, const Eigen::MatrixXd& a) {
  if (act == Activation::Tanh) return -2.0 * a.array() * (1.0 - a.array().square());
  return Eigen::ArrayXXd::Zero(a.rows(), a.cols());
}

}  // namespace

const char* activation_name(Activation a) {
  return a == Activation::Tanh ? "tanh" : "relu";
}

Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::ReLU;
  throw DomainViolation("unknown activation: " + name);
}

Eigen::Index Mlp::param_count(const std::vector<int>& sizes) {
  Eigen::Index total = 0;
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    total += static_cast<Eigen::Index>(sizes[l - 1] + 1) * sizes[l];
  }
  return total;
}

Mlp::Mlp(std::vector<int> layer_sizes, Activation activation, std::uint64_t seed)
    : sizes_(std::move(layer_sizes)), activation_(activation), seed_(seed) {
  if (sizes_.size() < 2) throw ShapeMismatch("mlp needs at least input and output sizes");
  for (int s : sizes_) {
    if (s <= 0) throw ShapeMismatch("mlp layer sizes must be positive");
  }
  params_.setZero(param_count(sizes_));
  Eigen::Index offset = 0;
  std::mt19937_64 rng(seed_);
  for (std::size_t l = 1; l < sizes_.size(); ++l) {
    const int fan_in = sizes_[l - 1];
    const int fan_out = sizes_[l];
    weight_offsets_.push_back(offset);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> unif(-bound, bound);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(fan_in) * fan_out; ++i) {
      params_[offset + i] = unif(rng);
    }
    offset += static_cast<Eigen::Index>(fan_in) * fan_out;
    bias_offsets_.push_back(offset);
    offset += fan_out;
  }
}

Eigen::Map<const RowMajor> Mlp::weight(int layer) const {
  return {params_.data() + weight_offsets_[layer], sizes_[layer + 1], sizes_[layer]};
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(int layer) const {
  return {params_.data() + bias_offsets_[layer], sizes_[layer + 1]};
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const {
  return forward_traced(x, nullptr);
}

Eigen::MatrixXd Mlp::forward_traced(const Eigen::MatrixXd& x, Trace* trace) const {
  if (x.cols() != input_dim()) throw ShapeMismatch("mlp forward: input width mismatch");
  const int layers = static_cast<int>(sizes_.size()) - 1;
  if (trace != nullptr) {
    trace->input = x;
    trace->pre.assign(layers, {});
    trace->post.assign(layers, {});
  }
  Eigen::MatrixXd a = x;
  for (int l = 0; l < layers; ++l) {
    Eigen::MatrixXd z = (a * weight(l).transpose()).rowwise() + bias(l).transpose();
    if (l + 1 < layers) {
      a = act_value(activation_, z).matrix();
    } else {
      a = z;
    }
    if (trace != nullptr) {
      trace->pre[l] = std::move(z);
      trace->post[l] = a;
    }
  }
  return a;
}

Eigen::VectorXd Mlp::backward(const Trace& trace, const Eigen::MatrixXd& out_grad,
                              Eigen::MatrixXd* input_grad) const {
  const int layers = static_cast<int>(sizes_.size()) - 1;
  if (trace.post.size() != static_cast<std::size_t>(layers)) {
    throw ShapeMismatch("mlp backward: trace does not match network depth");
  }
  if (out_grad.rows() != trace.input.rows() || out_grad.cols() != output_dim()) {
    throw ShapeMismatch("mlp backward: output gradient shape mismatch");
  }
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());
  Eigen::MatrixXd gz = out_grad;
  for (int l = layers - 1; l >= 0; --l) {
    const Eigen::MatrixXd& below = l == 0 ? trace.input : trace.post[l - 1];
    Eigen::Map<RowMajor> wgrad(grad.data() + weight_offsets_[l], sizes_[l + 1], sizes_[l]);
    wgrad = gz.transpose() * below;
    Eigen::Map<Eigen::VectorXd> bgrad(grad.data() + bias_offsets_[l], sizes_[l + 1]);
    bgrad = gz.colwise().sum().transpose();
    if (l == 0 && input_grad == nullptr) break;
    Eigen::MatrixXd ga = gz * weight(l);
    if (l == 0) {
      *input_grad = std::move(ga);
    } else {
      gz = (ga.array() * act_deriv_from_value(activation_, trace.post[l - 1])).matrix();
    }
  }
  return grad;
}

Eigen::VectorXd Mlp::input_gradient(const Eigen::VectorXd& x) const {
  if (output_dim() != 1) throw ShapeMismatch("input_gradient needs a scalar output");
  Trace trace;
  forward_traced(x.transpose(), &trace);
  Eigen::MatrixXd input_grad;
  backward(trace, Eigen::MatrixXd::Ones(1, 1), &input_grad);
  return input_grad.row(0).transpose();
}

Eigen::VectorXd Mlp::param_grad_of_input_gradient(const Eigen::VectorXd& x,
                                                  const Eigen::VectorXd& w) const {
  if (output_dim() != 1) throw ShapeMismatch("param_grad_of_input_gradient needs a scalar output");
  if (x.size() != input_dim() || w.size() != input_dim()) {
    throw ShapeMismatch("param_grad_of_input_gradient: input size mismatch");
  }
  const int layers = static_cast<int>(sizes_.size()) - 1;

  // Forward pass carrying the tangent t = d(output)/d(input) applied to w,
  // so the final tangent equals dot(w, grad_x f(x)).
  std::vector<Eigen::VectorXd> a(layers + 1), t(layers + 1), tz(layers + 1);
  a[0] = x;
  t[0] = w;
  for (int l = 0; l < layers; ++l) {
    Eigen::VectorXd z = weight(l) * a[l] + bias(l);
    tz[l + 1] = weight(l) * t[l];
    if (l + 1 < layers) {
      a[l + 1] = act_value(activation_, z).matrix();
      t[l + 1] = (act_deriv_from_value(activation_, a[l + 1]).array() * tz[l + 1].array()).matrix();
    } else {
      a[l + 1] = z;
      t[l + 1] = tz[l + 1];
    }
  }

  // Reverse accumulation through both the primal and tangent recursions.
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());
  Eigen::VectorXd abar = Eigen::VectorXd::Zero(sizes_[layers - 1]);
  Eigen::VectorXd tbar;
  {
    const int l = layers - 1;
    Eigen::Map<RowMajor> wgrad(grad.data() + weight_offsets_[l], sizes_[l + 1], sizes_[l]);
    wgrad = t[l].transpose();
    tbar = weight(l).transpose() * Eigen::VectorXd::Ones(1);
  }
  for (int l = layers - 2; l >= 0; --l) {
    const Eigen::ArrayXd d1 = act_deriv_from_value(activation_, a[l + 1]).col(0);
    const Eigen::ArrayXd d2 = act_second_deriv_from_value(activation_, a[l + 1]).col(0);
    Eigen::VectorXd zbar = (d1 * abar.array() + d2 * tz[l + 1].array() * tbar.array()).matrix();
    Eigen::VectorXd tzbar = (d1 * tbar.array()).matrix();
    Eigen::Map<RowMajor> wgrad(grad.data() + weight_offsets_[l], sizes_[l + 1], sizes_[l]);
    wgrad = zbar * a[l].transpose() + tzbar * t[l].transpose();
    Eigen::Map<Eigen::VectorXd> bgrad(grad.data() + bias_offsets_[l], sizes_[l + 1]);
    bgrad = zbar;
    abar = weight(l).transpose() * zbar;
    tbar = weight(l).transpose() * tzbar;
  }
  return grad;
}

void AdamOptimizer::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (grad.size() != params.size()) throw ShapeMismatch("optimizer: gradient size mismatch");
  if (!grad.allFinite()) throw DivergedParameters("optimizer: non-finite gradient");
  if (m.size() != params.size()) {
    m.setZero(params.size());
    v.setZero(params.size());
    step_count = 0;
  }
  ++step_count;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.array().square().matrix();
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  params.array() -=
      step_size * (m.array() / bc1) / ((v.array() / bc2).sqrt() + epsilon);
  if (!params.allFinite()) throw DivergedParameters("optimizer: parameters diverged");
}

GradientPenalty gradient_penalty(const Mlp& net, const Eigen::MatrixXd& expert_batch,
                                 const Eigen::MatrixXd& policy_batch, double weight,
                                 std::uint64_t seed) {
  if (net.output_dim() != 1) throw ShapeMismatch("gradient penalty needs a scalar output");
  if (expert_batch.cols() != net.input_dim() || policy_batch.cols() != net.input_dim()) {
    throw ShapeMismatch("gradient penalty: batch width mismatch");
  }
  if (expert_batch.rows() == 0 || policy_batch.rows() == 0) {
    throw ShapeMismatch("gradient penalty: empty batch");
  }
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> perm(policy_batch.rows());
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  const Eigen::Index n = std::min(expert_batch.rows(), policy_batch.rows());
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  GradientPenalty result;
  result.param_grad.setZero(net.params().size());
  for (Eigen::Index j = 0; j < n; ++j) {
    const double eps = unif(rng);
    const Eigen::VectorXd xhat =
        eps * expert_batch.row(j).transpose() + (1.0 - eps) * policy_batch.row(perm[j]).transpose();
    const Eigen::VectorXd v = net.input_gradient(xhat);
    const double norm = v.norm();
    result.value += (norm - 1.0) * (norm - 1.0);
    if (norm > 1e-12) {
      result.param_grad +=
          2.0 * (norm - 1.0) * net.param_grad_of_input_gradient(xhat, v / norm);
    }
  }
  result.value *= weight / static_cast<double>(n);
  result.param_grad *= weight / static_cast<double>(n);
  return result;
}

}  // namespace fmil
