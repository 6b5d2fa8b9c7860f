#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "fmil/discrim.hpp"
#include "fmil/divergence.hpp"
#include "fmil/errors.hpp"
#include "fmil/soft_rl.hpp"
#include "fmil/tabular.hpp"

namespace fmil {

struct DemoTrajectory {
  std::vector<int> states;
  std::vector<int> actions;
  std::string policy_id;
  int offset = 0;
};

/// Expert demonstrations: per-trajectory state-action pairs kept at every
/// subsample_factor-th step from a random per-trajectory offset.
struct DemoSet {
  std::vector<DemoTrajectory> trajectories;
  int subsample_factor = 1;

  int n_pairs() const;
  std::vector<int> all_states() const;
  std::vector<int> all_actions() const;
};

DemoSet subsample_demos(const std::vector<Trajectory>& trajectories, int factor,
                        std::uint64_t seed);

std::string demos_to_jsonl(const DemoSet& demos);
DemoSet demos_from_jsonl(const std::string& text);
void save_demos(const DemoSet& demos, const std::string& path);
DemoSet load_demos(const std::string& path);

/// Normalized empirical state-action distribution of the demo pairs.
Eigen::MatrixXd demo_occupancy(const DemoSet& demos, int n_states, int n_actions);

/// Maximum-likelihood tabular policy with additive smoothing; states never
/// demonstrated fall back to the uniform action distribution.
TabularPolicy behavioural_cloning(const DemoSet& demos, int n_states, int n_actions,
                                  double laplace = 1e-3);

struct DaggerConfig {
  int iterations = 5;
  int rollouts_per_iteration = 10;
  double laplace = 1e-3;
  std::uint64_t seed = 0;
};

/// Interactive aggregation: roll the current clone, label every visited
/// state with an expert action draw, refit on the union.
TabularPolicy dagger(const TabularMdp& mdp, const TabularPolicy& expert,
                     const DemoSet& initial_demos, const DaggerConfig& cfg);

enum class EvalMode { Deterministic, Stochastic };

struct EvalStats {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Undiscounted return statistics over rollouts of eval_mdp (finite horizon).
/// Deterministic mode acts through argmax with ties to the lowest index.
/// stddev is the population deviation across episodes (0 for one episode).
EvalStats evaluate_policy_stats(const TabularMdp& eval_mdp, const TabularPolicy& pi,
                                EvalMode mode, int episodes, std::uint64_t seed);

/// Mean of evaluate_policy_stats over the same rollouts.
double evaluate_policy(const TabularMdp& eval_mdp, const TabularPolicy& pi, EvalMode mode,
                       int episodes, std::uint64_t seed);

struct TrainRow {
  int iteration = 0;
  double divergence = 0.0;
  double return_det = 0.0;
  double return_stoch = 0.0;
  double disc_loss = 0.0;
  double seconds = 0.0;
};

struct ILConfig {
  AdversarialReward algorithm = AdversarialReward::Airl;
  int iterations = 200;
  double reward_scale = 16.0;
  double rl_temperature = 0.05;
  /// Step size cap for the occupancy blend. With line_search the step in
  /// [0, damping_alpha] minimizing the reported divergence is used (monotone
  /// descent); otherwise the schedule min(damping_alpha, 2/(k+2)).
  double damping_alpha = 1.0;
  bool line_search = true;
  double gail_entropy_weight = 0.0;
  double logit_clip = 10.0;
  std::uint64_t seed = 0;
  bool random_init_policy = false;
  int validation_every = 10;
  int validation_episodes = 10;
  bool record_occupancies = false;
  bool no_timing = false;
};

double default_reward_scale(AdversarialReward algorithm);

struct AdversarialResult {
  TabularPolicy policy;
  std::vector<TrainRow> report;
  Eigen::MatrixXd final_logits;
  std::vector<Eigen::MatrixXd> occupancy_snapshots;
};

/**
 * Exact tabular adversarial imitation. Each iteration forms the closed-form
 * discriminator against the current exact occupancy, solves the
 * entropy-regularized best response to the scaled policy-step reward, and
 * takes a Frank-Wolfe step by blending occupancies and reading the policy
 * back off the blend. The reported divergence is the one the chosen reward
 * descends: KL(rho_pi||rho_e) for airl, KL(rho_e||rho_pi) for fairl, and the
 * Jensen-Shannon divergence for gail. Returns are evaluated on eval_mdp at
 * the validation cadence and carried forward between checkpoints.
 */
AdversarialResult adversarial_il(const TabularMdp& mdp, const Eigen::MatrixXd& expert_occupancy,
                                 const ILConfig& cfg, const TabularMdp* eval_mdp = nullptr);

struct PsiIdentityResult {
  double maximized = 0.0;
  double divergence = 0.0;
  double gap = 0.0;
};

/// Coordinate-wise numerical maximization of the variational objective
/// E_p[T] - E_q[f*(T)], compared against the closed-form divergence.
PsiIdentityResult psi_conjugate_identity_check(const FDivergence& f,
                                               const FiniteDistribution& p,
                                               const FiniteDistribution& q);

}  // namespace fmil
