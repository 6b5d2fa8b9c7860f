#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <vector>

#include "fmil/discrim.hpp"
#include "fmil/errors.hpp"
#include "fmil/imitation.hpp"
#include "fmil/soft_rl.hpp"

namespace fmil {

/// Planar point mass: the action is a displacement whose norm the
/// environment clips to max_step; episodes start near the origin.
struct PointMassEnv {
  double start_noise = 0.1;
  double max_step = 1.0;
  int horizon = 120;

  Eigen::Vector2d reset(std::mt19937_64& rng) const;
  Eigen::Vector2d step(const Eigen::Vector2d& state, const Eigen::Vector2d& action) const;
};

enum class TargetShape { Infinity, Spiral };

const char* target_shape_name(TargetShape shape);
TargetShape target_shape_from_name(const std::string& name);

/**
 * Target point cloud, one point per row. The infinity curve is the
 * lemniscate x = scale*sqrt(2)*cos(a)/(sin(a)^2+1), y = x*sin(a) over a
 * uniform angle grid; the spiral is r(a) = scale*a/(2*pi*rotations) swept
 * through rotations full turns. Isotropic Gaussian noise is added per
 * coordinate, the whole X column first and then the Y column.
 */
struct TargetConfig {
  TargetShape shape = TargetShape::Infinity;
  double scale = 12.0;
  double rotations = 2.0;  // spiral only
  double noise = 0.3;
  int n_samples = 4000;
  std::uint64_t seed = 0;
};

Eigen::MatrixXd sample_target(const TargetConfig& cfg);

/// Defaults from the benchmark: infinity (scale 12, noise 0.3, 4000 points,
/// horizon 120) and spiral (scale 16, 2 rotations, noise 0.3, 16000 points,
/// horizon 480).
TargetConfig default_target(TargetShape shape, std::uint64_t seed);
int default_horizon(TargetShape shape);

/**
 * Jensen-Shannon divergence between 2-D point clouds via a bins x bins
 * histogram over the target bounding box grown by margin; points outside
 * are clamped into the edge bins. Every cell gets a 1e-6 floor before
 * normalizing, so the result is finite and at most log 2.
 */
double marginal_js(const Eigen::MatrixXd& visited, const Eigen::MatrixXd& target, int bins = 40,
                   double margin = 1.0);

struct SmmConfig {
  int iterations = 1500;
  int episodes_per_iteration = 32;
  int disc_steps = 10;
  int disc_batch = 128;
  double policy_lr = 3e-3;
  double disc_lr = 1e-3;
  double entropy_weight = 0.01;
  double grad_pen_weight = 0.0;  // any Lipschitz cap blurs the thin target curve
  double logit_clip = 10.0;
  double input_clip = 2.5;  // normalized-unit box for discriminator inputs
  int disc_warmup_steps = 300;       // discriminator steps before the first policy update
  double reservoir_fraction = 0.5;   // share of negatives drawn from past visits
  int reservoir_capacity = 50000;
  double disc_loss_floor = 0.8;      // single disc step per iteration while it is winning
  int policy_lr_half_life = 600;     // iterations until the policy step halves; 0 disables
  int eval_every = 25;
  int eval_episodes = 20;
  double log_std_min = -2.5;  // clamp after each update: env clipping would
  double log_std_max = 0.7;   // otherwise let the entropy bonus grow sigma forever
  std::vector<int> policy_hidden = {64, 64};
  std::vector<int> disc_hidden = {64, 64};
  std::uint64_t seed = 0;
  bool no_timing = false;
};

struct SmmResult {
  GaussianPolicy policy;
  LearnedDiscriminator discriminator;
  std::vector<TrainRow> report;
  Eigen::MatrixXd final_visited;  // states of the final evaluation rollouts
  double final_js = 0.0;
};

/// Roll stochastic episodes and return every pre-action state, one per row.
Eigen::MatrixXd rollout_states(const PointMassEnv& env, const GaussianPolicy& policy,
                               int episodes, std::uint64_t seed);

/// Histogram Jensen-Shannon divergence between the marginal of fresh policy
/// rollouts and the target point set.
double evaluate_marginal(const GaussianPolicy& policy, const PointMassEnv& env,
                         const Eigen::MatrixXd& target_states, int bins, int episodes,
                         std::uint64_t seed);

/**
 * State-marginal matching: a state-only discriminator is trained against
 * minibatches with the target samples as positives and policy-visited
 * states as negatives (a mix of the freshest rollouts and a reservoir of
 * past visits, which keeps the logit landscape anchored everywhere the
 * policy has ever been), and the policy follows the score-function gradient
 * of the conjugate reward f*(activated logit) evaluated on states only;
 * for the default reverse KL that reward is logit(s) - 1. The report's
 * divergence column holds the histogram Jensen-Shannon divergence measured
 * at the evaluation cadence and carried forward.
 */
SmmResult smm_train(const PointMassEnv& env, const Eigen::MatrixXd& target_states,
                    const FDivergence& f, const SmmConfig& cfg);
SmmResult smm_train(const PointMassEnv& env, const Eigen::MatrixXd& target_states,
                    const SmmConfig& cfg);

}  // namespace fmil
