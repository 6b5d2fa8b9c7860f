#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "fmil/errors.hpp"
#include "fmil/mlp.hpp"
#include "fmil/tabular.hpp"

namespace fmil {

struct SoftViConfig {
  double temperature = 1.0;
  double tolerance = 1e-10;
  int max_iterations = 200000;
};

struct SoftViResult {
  TabularPolicy policy;
  Eigen::VectorXd values;
  Eigen::MatrixXd q_values;
  int iterations = 0;
  double residual = 0.0;
};

/**
 * Entropy-regularized value iteration on a discounted MDP with the given
 * reward table: Q = r + gamma*P*V, V(s) = tau*logsumexp(Q(s,.)/tau), policy
 * pi(a|s) = exp((Q(s,a)-V(s))/tau). The optional warm start resumes from a
 * previous value vector. Throws NonConvergence when the sup-norm residual
 * stays above tolerance for max_iterations sweeps.
 */
SoftViResult soft_value_iteration(const TabularMdp& mdp, const Eigen::MatrixXd& reward,
                                  const SoftViConfig& cfg = {},
                                  const Eigen::VectorXd* warm_start = nullptr);

/// Discounted-sum objective Gamma * (E_rho[r] + tau * H^causal) that the
/// soft solver maximizes over policies.
double soft_objective(const TabularMdp& mdp, const Eigen::MatrixXd& reward,
                      const TabularPolicy& pi, double temperature);

/**
 * Diagonal Gaussian policy: an Mlp produces the mean, a free per-dimension
 * log standard deviation is shared across states. Flat parameters are the
 * network parameters followed by log_std.
 */
class GaussianPolicy {
 public:
  GaussianPolicy(std::vector<int> layer_sizes, Activation activation, std::uint64_t seed,
                 double initial_log_std = 0.0);

  int state_dim() const { return mean_net_.input_dim(); }
  int action_dim() const { return mean_net_.output_dim(); }
  const Mlp& mean_net() const { return mean_net_; }
  const Eigen::VectorXd& log_std() const { return log_std_; }

  Eigen::Index param_count() const;
  Eigen::VectorXd flat_params() const;
  void set_flat_params(const Eigen::VectorXd& flat);

  Eigen::VectorXd mean(const Eigen::VectorXd& state) const;
  Eigen::MatrixXd mean_batch(const Eigen::MatrixXd& states) const;
  Eigen::VectorXd sample(const Eigen::VectorXd& state, std::mt19937_64& rng) const;
  double log_prob(const Eigen::VectorXd& state, const Eigen::VectorXd& action) const;

  /// Differential entropy of the action distribution (state independent).
  double entropy() const;

 private:
  friend struct PolicyBatchGradient;
  Mlp mean_net_;
  Eigen::VectorXd log_std_;
};

struct ContinuousTrajectory {
  Eigen::MatrixXd states;
  Eigen::MatrixXd actions;
  Eigen::VectorXd rewards;
};

struct PolicyUpdateConfig {
  double entropy_weight = 0.0;
  bool reward_to_go = false;       // per-step suffix returns instead of totals
  bool normalize_advantages = false;
  // Post-step projection bounds for the global log-std entries.
  double log_std_min = -std::numeric_limits<double>::infinity();
  double log_std_max = std::numeric_limits<double>::infinity();
};

struct PolicyUpdateStats {
  double mean_return = 0.0;
  double surrogate_loss = 0.0;
  double grad_norm = 0.0;
};

/**
 * Score-function surrogate with frozen per-trajectory advantages:
 * loss = -(1/B) sum_i A_i * sum_t log pi(a_t|s_t) - entropy_weight * H(pi).
 * Returns the loss and its gradient in the policy's flat parameter layout.
 */
double policy_loss_and_grad(const GaussianPolicy& policy,
                            const std::vector<ContinuousTrajectory>& batch,
                            const Eigen::VectorXd& advantages, double entropy_weight,
                            Eigen::VectorXd* grad);

/// Same surrogate with one frozen advantage per step instead of per
/// trajectory; step_advantages[i] must match trajectory i's length.
double policy_loss_and_grad(const GaussianPolicy& policy,
                            const std::vector<ContinuousTrajectory>& batch,
                            const std::vector<Eigen::VectorXd>& step_advantages,
                            double entropy_weight, Eigen::VectorXd* grad);

/**
 * One policy-gradient step. Advantages are either total trajectory returns
 * minus the batch mean or, with reward_to_go, per-step suffix returns minus
 * a per-timestep batch baseline; normalize_advantages rescales them to unit
 * standard deviation. The surrogate above is differentiated exactly and the
 * optimizer updates the flat parameters in place.
 */
PolicyUpdateStats continuous_policy_update(GaussianPolicy& policy, AdamOptimizer& opt,
                                           const std::vector<ContinuousTrajectory>& batch,
                                           const PolicyUpdateConfig& cfg = {});

}  // namespace fmil
