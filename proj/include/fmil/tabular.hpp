#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fmil/divergence.hpp"
#include "fmil/errors.hpp"

namespace fmil {

/**
 * Finite MDP. transition[s] is an (n_actions x n_states) matrix whose rows
 * are next-state distributions. Discounted mode uses gamma in (0,1);
 * finite-horizon mode sets horizon and ignores gamma.
 */
struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  std::vector<Eigen::MatrixXd> transition;
  Eigen::MatrixXd reward;   // n_states x n_actions
  Eigen::VectorXd initial;  // start-state distribution
  double gamma = 0.99;
  std::optional<int> horizon;

  bool finite_horizon() const { return horizon.has_value(); }
  /// Gamma = 1/(1-gamma), or the horizon length in finite mode.
  double normalizer() const;
  void validate() const;
};

/// Stationary stochastic policy; row s is the action distribution at s.
class TabularPolicy {
 public:
  TabularPolicy() = default;
  explicit TabularPolicy(Eigen::MatrixXd probs);
  static TabularPolicy uniform(int n_states, int n_actions);
  static TabularPolicy random(int n_states, int n_actions, std::uint64_t seed);

  const Eigen::MatrixXd& probs() const { return probs_; }
  int n_states() const { return int(probs_.rows()); }
  int n_actions() const { return int(probs_.cols()); }
  /// Ties break toward the lowest action index.
  int argmax_action(int s) const;

 private:
  Eigen::MatrixXd probs_;
};

/**
 * Normalized discounted (or horizon-averaged) state-action visitation.
 * joint sums to 1; the physical scale is carried by normalizer.
 */
struct OccupancyMeasure {
  Eigen::MatrixXd joint;           // n_states x n_actions
  Eigen::VectorXd state_marginal;  // n_states
  double normalizer = 1.0;

  /// Row-major flatten (index s * n_actions + a) as a FiniteDistribution.
  FiniteDistribution flattened() const;
};

/// Solves the occupancy flow equations. Uses a dense LU solve for small
/// problems and falls back to damped fixed-point iteration for large ones or
/// when the linear solve degrades.
OccupancyMeasure occupancy_measure(const TabularMdp& mdp, const TabularPolicy& pi);

/// Conditional policy of a joint visitation table; states with no mass fall
/// back to uniform.
TabularPolicy policy_from_occupancy(const Eigen::MatrixXd& joint);

/// Max-norm residual of the stationarity equations, for diagnostics.
double flow_residual(const TabularMdp& mdp, const TabularPolicy& pi,
                     const OccupancyMeasure& occ);

/// H^causal = E_rho[-log pi(a|s)] with 0 log 0 = 0.
double causal_entropy(const OccupancyMeasure& occ, const TabularPolicy& pi);
double causal_entropy(const TabularMdp& mdp, const TabularPolicy& pi);

/// E_rho[h] for a per-(s,a) function given as a matrix.
double occupancy_expectation(const OccupancyMeasure& occ, const Eigen::MatrixXd& h);

struct Trajectory {
  std::vector<int> states;
  std::vector<int> actions;
  std::string policy_id;

  int length() const { return int(states.size()); }
};

/// Finite-horizon mode rolls exactly `horizon` steps; discounted mode
/// terminates each step with probability 1-gamma, so undiscounted sums over
/// sampled trajectories estimate discounted expectations.
std::vector<Trajectory> sample_trajectories(const TabularMdp& mdp, const TabularPolicy& pi,
                                            int n_trajectories, std::uint64_t seed,
                                            const std::string& policy_id = "");

struct IdentityCheckResult {
  double mc_value = 0.0;
  double exact_value = 0.0;
  double std_error = 0.0;
};

/// Monte-Carlo check of sum-over-time expectations against
/// normalizer * E_rho[h], with the standard error of the MC mean.
IdentityCheckResult trajectory_occupancy_identity_check(const TabularMdp& mdp,
                                                        const TabularPolicy& pi,
                                                        const Eigen::MatrixXd& h,
                                                        int n_trajectories,
                                                        std::uint64_t seed);

/// Deterministic-move gridworld: side*side cells, 4 actions (up, down,
/// left, right), edge moves stay in place, the last cell is an absorbing
/// goal paying reward 1, start fixed at cell 0.
TabularMdp make_gridworld(int side, double gamma);
TabularMdp make_gridworld_finite(int side, int horizon);

std::string mdp_to_json(const TabularMdp& mdp);
TabularMdp mdp_from_json(const std::string& text);
void save_mdp(const TabularMdp& mdp, const std::string& path);
TabularMdp load_mdp(const std::string& path);

/// JSON-lines, one trajectory per line.
std::string trajectories_to_jsonl(const std::vector<Trajectory>& trajectories);
std::vector<Trajectory> trajectories_from_jsonl(const std::string& text);
void save_trajectories(const std::vector<Trajectory>& trajectories, const std::string& path);
std::vector<Trajectory> load_trajectories(const std::string& path);

}  // namespace fmil
