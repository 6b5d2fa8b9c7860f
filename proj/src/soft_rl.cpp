#include "fmil/soft_rl.hpp"

#include <cmath>
#include <utility>

namespace fmil {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5*log(2*pi)

double row_logsumexp(const Eigen::RowVectorXd& row) {
  const double m = row.maxCoeff();
  return m + std::log((row.array() - m).exp().sum());
}

}  // namespace

SoftViResult soft_value_iteration(const TabularMdp& mdp, const Eigen::MatrixXd& reward,
                                  const SoftViConfig& cfg, const Eigen::VectorXd* warm_start) {
  mdp.validate();
  if (mdp.finite_horizon()) {
    throw DomainViolation("soft value iteration handles discounted MDPs only");
  }
  if (reward.rows() != mdp.n_states || reward.cols() != mdp.n_actions) {
    throw ShapeMismatch("soft value iteration: reward table shape mismatch");
  }
  if (!(cfg.temperature > 0.0)) throw DomainViolation("temperature must be positive");

  const int S = mdp.n_states;
  const int A = mdp.n_actions;
  const double tau = cfg.temperature;

  Eigen::VectorXd value;
  if (warm_start != nullptr) {
    if (warm_start->size() != S) throw ShapeMismatch("warm start size mismatch");
    value = *warm_start;
  } else {
    value.setZero(S);
  }

  SoftViResult out;
  out.q_values.resize(S, A);
  bool converged = false;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    for (int s = 0; s < S; ++s) {
      out.q_values.row(s) =
          reward.row(s) + mdp.gamma * (mdp.transition[s] * value).transpose();
    }
    Eigen::VectorXd next(S);
    for (int s = 0; s < S; ++s) {
      next[s] = tau * row_logsumexp(out.q_values.row(s) / tau);
    }
    out.residual = (next - value).lpNorm<Eigen::Infinity>();
    value = std::move(next);
    out.iterations = it + 1;
    if (out.residual < cfg.tolerance) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw NonConvergence("soft value iteration: residual " + std::to_string(out.residual) +
                         " after " + std::to_string(out.iterations) + " sweeps");
  }

  for (int s = 0; s < S; ++s) {
    out.q_values.row(s) =
        reward.row(s) + mdp.gamma * (mdp.transition[s] * value).transpose();
  }
  Eigen::MatrixXd probs(S, A);
  for (int s = 0; s < S; ++s) {
    const Eigen::RowVectorXd scaled = out.q_values.row(s) / tau;
    const Eigen::RowVectorXd shifted =
        (scaled.array() - scaled.maxCoeff()).exp().matrix();
    probs.row(s) = shifted / shifted.sum();
  }
  out.values = std::move(value);
  out.policy = TabularPolicy(std::move(probs));
  return out;
}

double soft_objective(const TabularMdp& mdp, const Eigen::MatrixXd& reward,
                      const TabularPolicy& pi, double temperature) {
  const OccupancyMeasure occ = occupancy_measure(mdp, pi);
  return mdp.normalizer() *
         (occupancy_expectation(occ, reward) + temperature * causal_entropy(occ, pi));
}

GaussianPolicy::GaussianPolicy(std::vector<int> layer_sizes, Activation activation,
                               std::uint64_t seed, double initial_log_std)
    : mean_net_(std::move(layer_sizes), activation, seed) {
  log_std_ = Eigen::VectorXd::Constant(mean_net_.output_dim(), initial_log_std);
}

Eigen::Index GaussianPolicy::param_count() const {
  return mean_net_.params().size() + log_std_.size();
}

Eigen::VectorXd GaussianPolicy::flat_params() const {
  Eigen::VectorXd flat(param_count());
  flat.head(mean_net_.params().size()) = mean_net_.params();
  flat.tail(log_std_.size()) = log_std_;
  return flat;
}

void GaussianPolicy::set_flat_params(const Eigen::VectorXd& flat) {
  if (flat.size() != param_count()) throw ShapeMismatch("policy: flat parameter size mismatch");
  mean_net_.params() = flat.head(mean_net_.params().size());
  log_std_ = flat.tail(log_std_.size());
}

Eigen::VectorXd GaussianPolicy::mean(const Eigen::VectorXd& state) const {
  return mean_net_.forward(state.transpose()).row(0).transpose();
}

Eigen::MatrixXd GaussianPolicy::mean_batch(const Eigen::MatrixXd& states) const {
  return mean_net_.forward(states);
}

Eigen::VectorXd GaussianPolicy::sample(const Eigen::VectorXd& state,
                                       std::mt19937_64& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd a = mean(state);
  for (Eigen::Index d = 0; d < a.size(); ++d) {
    a[d] += std::exp(log_std_[d]) * normal(rng);
  }
  return a;
}

double GaussianPolicy::log_prob(const Eigen::VectorXd& state,
                                const Eigen::VectorXd& action) const {
  if (action.size() != action_dim()) throw ShapeMismatch("policy: action size mismatch");
  const Eigen::VectorXd mu = mean(state);
  double lp = 0.0;
  for (Eigen::Index d = 0; d < action.size(); ++d) {
    const double z = (action[d] - mu[d]) / std::exp(log_std_[d]);
    lp += -kHalfLog2Pi - log_std_[d] - 0.5 * z * z;
  }
  return lp;
}

double GaussianPolicy::entropy() const {
  return log_std_.sum() + log_std_.size() * (kHalfLog2Pi + 0.5);
}

namespace {

Eigen::Index checked_total_rows(const GaussianPolicy& policy,
                                const std::vector<ContinuousTrajectory>& batch) {
  if (batch.empty()) throw ShapeMismatch("policy update: empty batch");
  Eigen::Index total_rows = 0;
  for (const auto& traj : batch) {
    if (traj.states.rows() != traj.actions.rows() || traj.states.rows() == 0) {
      throw ShapeMismatch("policy update: trajectory shape mismatch");
    }
    if (traj.states.cols() != policy.state_dim() || traj.actions.cols() != policy.action_dim()) {
      throw ShapeMismatch("policy update: trajectory width mismatch");
    }
    total_rows += traj.states.rows();
  }
  return total_rows;
}

double surrogate_with_coeffs(const GaussianPolicy& policy,
                             const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions,
                             const Eigen::VectorXd& coeff, double entropy_weight,
                             Eigen::VectorXd* grad);

}  // namespace

double policy_loss_and_grad(const GaussianPolicy& policy,
                            const std::vector<ContinuousTrajectory>& batch,
                            const Eigen::VectorXd& advantages, double entropy_weight,
                            Eigen::VectorXd* grad) {
  const int B = static_cast<int>(batch.size());
  const Eigen::Index total_rows = checked_total_rows(policy, batch);
  if (advantages.size() != B) throw ShapeMismatch("policy update: advantage count mismatch");

  Eigen::MatrixXd states(total_rows, policy.state_dim());
  Eigen::MatrixXd actions(total_rows, policy.action_dim());
  Eigen::VectorXd coeff(total_rows);
  Eigen::Index row = 0;
  for (int i = 0; i < B; ++i) {
    const Eigen::Index t = batch[i].states.rows();
    states.middleRows(row, t) = batch[i].states;
    actions.middleRows(row, t) = batch[i].actions;
    coeff.segment(row, t).setConstant(-advantages[i] / B);
    row += t;
  }
  return surrogate_with_coeffs(policy, states, actions, coeff, entropy_weight, grad);
}

double policy_loss_and_grad(const GaussianPolicy& policy,
                            const std::vector<ContinuousTrajectory>& batch,
                            const std::vector<Eigen::VectorXd>& step_advantages,
                            double entropy_weight, Eigen::VectorXd* grad) {
  const int B = static_cast<int>(batch.size());
  const Eigen::Index total_rows = checked_total_rows(policy, batch);
  if (static_cast<int>(step_advantages.size()) != B) {
    throw ShapeMismatch("policy update: advantage count mismatch");
  }

  Eigen::MatrixXd states(total_rows, policy.state_dim());
  Eigen::MatrixXd actions(total_rows, policy.action_dim());
  Eigen::VectorXd coeff(total_rows);
  Eigen::Index row = 0;
  for (int i = 0; i < B; ++i) {
    const Eigen::Index t = batch[i].states.rows();
    if (step_advantages[std::size_t(i)].size() != t) {
      throw ShapeMismatch("policy update: step advantage length mismatch");
    }
    states.middleRows(row, t) = batch[i].states;
    actions.middleRows(row, t) = batch[i].actions;
    coeff.segment(row, t) = -step_advantages[std::size_t(i)] / B;
    row += t;
  }
  return surrogate_with_coeffs(policy, states, actions, coeff, entropy_weight, grad);
}

namespace {

double surrogate_with_coeffs(const GaussianPolicy& policy,
                             const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions,
                             const Eigen::VectorXd& coeff, double entropy_weight,
                             Eigen::VectorXd* grad) {
  const Eigen::Index total_rows = states.rows();
  const Mlp& net = policy.mean_net();
  Mlp::Trace trace;
  const Eigen::MatrixXd mu = net.forward_traced(states, &trace);
  const Eigen::ArrayXd inv_var = (-2.0 * policy.log_std().array()).exp();
  const Eigen::MatrixXd delta = actions - mu;

  double loss = 0.0;
  for (Eigen::Index r = 0; r < total_rows; ++r) {
    double lp = 0.0;
    for (Eigen::Index d = 0; d < delta.cols(); ++d) {
      lp += -kHalfLog2Pi - policy.log_std()[d] - 0.5 * delta(r, d) * delta(r, d) * inv_var[d];
    }
    loss += coeff[r] * lp;
  }
  loss -= entropy_weight * policy.entropy();

  if (grad != nullptr) {
    // d loss / d mu = coeff * d logprob / d mu = coeff * delta / sigma^2.
    Eigen::MatrixXd mu_grad =
        (delta.array().rowwise() * inv_var.transpose()).colwise() * coeff.array();
    const Eigen::VectorXd net_grad = net.backward(trace, mu_grad);
    Eigen::VectorXd logstd_grad = Eigen::VectorXd::Zero(policy.log_std().size());
    for (Eigen::Index d = 0; d < logstd_grad.size(); ++d) {
      for (Eigen::Index r = 0; r < total_rows; ++r) {
        logstd_grad[d] +=
            coeff[r] * (delta(r, d) * delta(r, d) * inv_var[d] - 1.0);
      }
      logstd_grad[d] -= entropy_weight;
    }
    grad->resize(policy.param_count());
    grad->head(net_grad.size()) = net_grad;
    grad->tail(logstd_grad.size()) = logstd_grad;
  }
  return loss;
}

}  // namespace

PolicyUpdateStats continuous_policy_update(GaussianPolicy& policy, AdamOptimizer& opt,
                                           const std::vector<ContinuousTrajectory>& batch,
                                           const PolicyUpdateConfig& cfg) {
  const int B = static_cast<int>(batch.size());
  if (B == 0) throw ShapeMismatch("policy update: empty batch");
  Eigen::VectorXd returns(B);
  for (int i = 0; i < B; ++i) {
    if (batch[i].rewards.size() != batch[i].states.rows()) {
      throw ShapeMismatch("policy update: reward length mismatch");
    }
    returns[i] = batch[i].rewards.sum();
  }

  Eigen::VectorXd grad;
  PolicyUpdateStats stats;
  stats.mean_return = returns.mean();

  if (cfg.reward_to_go) {
    // Suffix returns G_t with a per-timestep batch baseline.
    std::vector<Eigen::VectorXd> advantages(batch.size());
    Eigen::Index max_len = 0;
    for (const auto& traj : batch) max_len = std::max(max_len, traj.rewards.size());
    Eigen::VectorXd baseline = Eigen::VectorXd::Zero(max_len);
    Eigen::VectorXd count = Eigen::VectorXd::Zero(max_len);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Eigen::VectorXd& r = batch[i].rewards;
      Eigen::VectorXd g(r.size());
      double acc = 0.0;
      for (Eigen::Index t = r.size() - 1; t >= 0; --t) {
        acc += r[t];
        g[t] = acc;
      }
      baseline.head(r.size()) += g;
      count.head(r.size()).array() += 1.0;
      advantages[i] = g;
    }
    baseline.array() /= count.array().max(1.0);
    double sq_sum = 0.0;
    Eigen::Index n = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      advantages[i] -= baseline.head(advantages[i].size());
      sq_sum += advantages[i].squaredNorm();
      n += advantages[i].size();
    }
    if (cfg.normalize_advantages) {
      const double sd = std::sqrt(sq_sum / n);
      if (sd > 1e-12) {
        for (auto& a : advantages) a /= sd;
      }
    }
    stats.surrogate_loss =
        policy_loss_and_grad(policy, batch, advantages, cfg.entropy_weight, &grad);
  } else {
    Eigen::VectorXd advantages = returns.array() - returns.mean();
    if (cfg.normalize_advantages) {
      const double sd = std::sqrt(advantages.squaredNorm() / B);
      if (sd > 1e-12) advantages /= sd;
    }
    stats.surrogate_loss =
        policy_loss_and_grad(policy, batch, advantages, cfg.entropy_weight, &grad);
  }
  stats.grad_norm = grad.norm();

  Eigen::VectorXd flat = policy.flat_params();
  opt.step(flat, grad);
  const Eigen::Index d = policy.log_std().size();
  flat.tail(d) = flat.tail(d).cwiseMax(cfg.log_std_min).cwiseMin(cfg.log_std_max);
  policy.set_flat_params(flat);
  return stats;
}

}  // namespace fmil
