#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fmil/divergence.hpp"
#include "fmil/errors.hpp"
#include "fmil/mlp.hpp"

namespace fmil {

enum class AdversarialReward { Gail, Airl, Fairl };

const char* adversarial_reward_name(AdversarialReward kind);
AdversarialReward adversarial_reward_from_name(const std::string& name);

/**
 * Reward assigned to a discriminator logit l = log(D/(1-D)) under the
 * expert-positive convention:
 *   gail  -> log D = -softplus(-l)
 *   airl  -> l
 *   fairl -> exp(l) * (-l)
 */
double adversarial_reward(AdversarialReward kind, double logit);

/// Reward in Fenchel form for an arbitrary generator: f*(T*(exp(l))).
/// Monotone increasing in l for every convex generator.
double fmax_reward(const FDivergence& div, double logit);

/// Surrogate the exact tabular policy step maximizes. Matches
/// adversarial_reward for gail and airl; for fairl it is the forward-KL
/// linearization exp(l), whose best response against a frozen logit table
/// contracts toward the expert where the literal reward does not.
double policy_step_reward(AdversarialReward kind, double logit);

/**
 * Closed-form discriminator over a finite state-action space:
 * logit(s,a) = log(rho_e(s,a) / rho_pi(s,a)), with the ratio clamped to
 * [1e-12, 1e12] and the logit clipped to +-logit_clip. Pass an infinite
 * clip to recover the raw log ratio for identity checks.
 */
class ExactTabularDiscriminator {
 public:
  ExactTabularDiscriminator(const Eigen::MatrixXd& expert_joint,
                            const Eigen::MatrixXd& policy_joint, double logit_clip = 10.0);

  double logit_clip() const { return logit_clip_; }
  double logit(int s, int a) const;
  const Eigen::MatrixXd& logits() const { return logits_; }
  /// sigma(logit): the probability the pair came from the expert.
  double probability(int s, int a) const;

 private:
  Eigen::MatrixXd logits_;
  double logit_clip_ = 10.0;
};

/// Per-feature standardization fitted on expert rows; standard deviations
/// are floored at 1e-6 so constant features map to zero.
struct InputNormalizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  static InputNormalizer fit(const Eigen::MatrixXd& rows);
  static InputNormalizer identity(int dim);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& rows) const;
};

/// One-hot state block followed by a one-hot action block, one row per pair.
Eigen::MatrixXd one_hot_features(int n_states, int n_actions, const std::vector<int>& states,
                                 const std::vector<int>& actions);

struct DiscrimTrainStats {
  double bce = 0.0;
  double penalty = 0.0;
  double loss = 0.0;  // bce + penalty
};

/**
 * Scalar-logit MLP discriminator. Training minimizes
 * mean_expert softplus(-l) + mean_policy softplus(l) plus the unit-norm
 * gradient penalty, always on raw logits; the clip applies only when logits
 * are read out for rewards.
 */
class LearnedDiscriminator {
 public:
  /// input_clip bounds every normalized coordinate to [-input_clip,
  /// input_clip]. Training clamps inputs into that box; readout goes
  /// further and reports -logit_clip for any row that started outside it,
  /// since the net has no evidence out there and its boundary extrapolation
  /// is exactly what a reward-seeking policy would exploit.
  LearnedDiscriminator(std::vector<int> layer_sizes, Activation activation, std::uint64_t seed,
                       double logit_clip = 10.0,
                       double input_clip = std::numeric_limits<double>::infinity());

  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }
  const InputNormalizer& normalizer() const { return normalizer_; }
  double logit_clip() const { return logit_clip_; }
  double input_clip() const { return input_clip_; }

  void fit_normalizer(const Eigen::MatrixXd& expert_rows);

  Eigen::VectorXd raw_logits(const Eigen::MatrixXd& rows) const;
  Eigen::VectorXd logits(const Eigen::MatrixXd& rows) const;

  /// One optimizer step on both batches; penalty_seed drives the
  /// interpolation draws. Returns the pre-step loss decomposition.
  DiscrimTrainStats train_step(AdamOptimizer& opt, const Eigen::MatrixXd& expert_rows,
                               const Eigen::MatrixXd& policy_rows, double penalty_weight,
                               std::uint64_t penalty_seed);

  /// JSON header line (architecture, seed, clip, normalizer) followed by the
  /// raw little-endian float64 parameter block.
  std::string to_checkpoint() const;
  static LearnedDiscriminator from_checkpoint(const std::string& blob);
  void save_checkpoint(const std::string& path) const;
  static LearnedDiscriminator load_checkpoint(const std::string& path);

 private:
  Eigen::MatrixXd preprocess(const Eigen::MatrixXd& rows) const;

  Mlp net_;
  InputNormalizer normalizer_;
  double logit_clip_;
  double input_clip_;
};

}  // namespace fmil
