#include "fmil/smm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace fmil {

namespace {

constexpr double kTwoPi = 6.2831853071795864769;

std::vector<int> with_io(const std::vector<int>& hidden, int in, int out) {
  std::vector<int> sizes;
  sizes.push_back(in);
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

}  // namespace

Eigen::Vector2d PointMassEnv::reset(std::mt19937_64& rng) const {
  std::normal_distribution<double> normal(0.0, start_noise);
  const double x = normal(rng);
  const double y = normal(rng);
  return {x, y};
}

Eigen::Vector2d PointMassEnv::step(const Eigen::Vector2d& state,
                                   const Eigen::Vector2d& action) const {
  const double norm = action.norm();
  const Eigen::Vector2d clipped = norm > 1.0 ? Eigen::Vector2d(action / norm) : action;
  return state + max_step * clipped;
}

const char* target_shape_name(TargetShape shape) {
  return shape == TargetShape::Infinity ? "infinity" : "spiral";
}

TargetShape target_shape_from_name(const std::string& name) {
  if (name == "infinity") return TargetShape::Infinity;
  if (name == "spiral") return TargetShape::Spiral;
  throw ConfigError("unknown target shape: " + name);
}

Eigen::MatrixXd sample_target(const TargetConfig& cfg) {
  if (cfg.n_samples < 2) throw DomainViolation("target needs at least two samples");
  if (cfg.noise < 0.0) throw DomainViolation("target noise must be nonnegative");
  Eigen::MatrixXd points(cfg.n_samples, 2);
  const double denom = cfg.n_samples - 1;
  for (int i = 0; i < cfg.n_samples; ++i) {
    if (cfg.shape == TargetShape::Infinity) {
      const double a = kTwoPi * i / denom;
      const double s = std::sin(a);
      const double x = cfg.scale * std::sqrt(2.0) * std::cos(a) / (s * s + 1.0);
      points(i, 0) = x;
      points(i, 1) = x * s;
    } else {
      const double a = kTwoPi * cfg.rotations * i / denom;
      const double r = cfg.scale * i / denom;
      points(i, 0) = r * std::cos(a);
      points(i, 1) = r * std::sin(a);
    }
  }
  if (cfg.noise > 0.0) {
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, cfg.noise);
    for (int i = 0; i < cfg.n_samples; ++i) points(i, 0) += normal(rng);
    for (int i = 0; i < cfg.n_samples; ++i) points(i, 1) += normal(rng);
  }
  return points;
}

TargetConfig default_target(TargetShape shape, std::uint64_t seed) {
  TargetConfig cfg;
  cfg.shape = shape;
  cfg.seed = seed;
  if (shape == TargetShape::Infinity) {
    cfg.scale = 12.0;
    cfg.noise = 0.3;
    cfg.n_samples = 4000;
  } else {
    cfg.scale = 16.0;
    cfg.rotations = 2.0;
    cfg.noise = 0.3;
    cfg.n_samples = 16000;
  }
  return cfg;
}

int default_horizon(TargetShape shape) {
  return shape == TargetShape::Infinity ? 120 : 480;
}

double marginal_js(const Eigen::MatrixXd& visited, const Eigen::MatrixXd& target, int bins,
                   double margin) {
  if (visited.cols() != 2 || target.cols() != 2) {
    throw ShapeMismatch("marginal histogram expects two columns");
  }
  if (visited.rows() == 0 || target.rows() == 0) {
    throw ShapeMismatch("marginal histogram expects nonempty clouds");
  }
  if (bins < 1) throw DomainViolation("histogram needs at least one bin");

  const Eigen::Vector2d lo = target.colwise().minCoeff().transpose().array() - margin;
  const Eigen::Vector2d hi = target.colwise().maxCoeff().transpose().array() + margin;
  const Eigen::Vector2d width = (hi - lo) / bins;

  const auto histogram = [&](const Eigen::MatrixXd& cloud) {
    Eigen::VectorXd cells = Eigen::VectorXd::Constant(Eigen::Index(bins) * bins, 1e-6);
    for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
      const int bx = std::clamp(int(std::floor((cloud(i, 0) - lo[0]) / width[0])), 0, bins - 1);
      const int by = std::clamp(int(std::floor((cloud(i, 1) - lo[1]) / width[1])), 0, bins - 1);
      cells[Eigen::Index(bx) * bins + by] += 1.0;
    }
    return FiniteDistribution(cells / cells.sum());
  };

  return eval_divergence(FDivergence(FDivergenceKind::JensenShannon), histogram(visited),
                         histogram(target));
}

Eigen::MatrixXd rollout_states(const PointMassEnv& env, const GaussianPolicy& policy,
                               int episodes, std::uint64_t seed) {
  if (episodes < 1) throw DomainViolation("need at least one rollout episode");
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd states(Eigen::Index(episodes) * env.horizon, 2);
  Eigen::Index row = 0;
  for (int e = 0; e < episodes; ++e) {
    Eigen::Vector2d s = env.reset(rng);
    for (int t = 0; t < env.horizon; ++t) {
      states.row(row++) = s.transpose();
      const Eigen::VectorXd a = policy.sample(s, rng);
      s = env.step(s, Eigen::Vector2d(a));
    }
  }
  return states;
}

double evaluate_marginal(const GaussianPolicy& policy, const PointMassEnv& env,
                         const Eigen::MatrixXd& target_states, int bins, int episodes,
                         std::uint64_t seed) {
  return marginal_js(rollout_states(env, policy, episodes, seed), target_states, bins);
}

namespace {

/// Ring buffer of every state the policy has visited during training.
class VisitReservoir {
 public:
  explicit VisitReservoir(Eigen::Index capacity) : rows_(capacity, 2) {}

  void push(const Eigen::MatrixXd& states) {
    for (Eigen::Index i = 0; i < states.rows(); ++i) {
      rows_.row(next_) = states.row(i);
      next_ = (next_ + 1) % rows_.rows();
      if (size_ < rows_.rows()) ++size_;
    }
  }

  Eigen::Index size() const { return size_; }
  Eigen::RowVectorXd draw(std::mt19937_64& rng) const {
    std::uniform_int_distribution<Eigen::Index> pick(0, size_ - 1);
    return rows_.row(pick(rng));
  }

 private:
  Eigen::MatrixXd rows_;
  Eigen::Index size_ = 0;
  Eigen::Index next_ = 0;
};

}  // namespace

SmmResult smm_train(const PointMassEnv& env, const Eigen::MatrixXd& target_states,
                    const FDivergence& f, const SmmConfig& cfg) {
  if (target_states.rows() == 0 || target_states.cols() != 2) {
    throw ShapeMismatch("target states must be an n x 2 matrix");
  }
  if (cfg.iterations < 1) throw DomainViolation("need at least one training iteration");
  if (env.horizon < 1) throw DomainViolation("environment horizon must be positive");
  if (cfg.reservoir_fraction < 0.0 || cfg.reservoir_fraction > 1.0) {
    throw DomainViolation("reservoir fraction must lie in [0, 1]");
  }
  if (cfg.reservoir_capacity < 1) throw DomainViolation("reservoir capacity must be positive");

  SmmResult out{
      GaussianPolicy(with_io(cfg.policy_hidden, 2, 2), Activation::Tanh, cfg.seed),
      LearnedDiscriminator(with_io(cfg.disc_hidden, 2, 1), Activation::Tanh, cfg.seed + 1,
                           cfg.logit_clip, cfg.input_clip),
      {},
      {},
      0.0};

  AdamOptimizer policy_opt(cfg.policy_lr);
  AdamOptimizer disc_opt(cfg.disc_lr);
  std::mt19937_64 batch_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<Eigen::Index> pick_target(0, target_states.rows() - 1);
  VisitReservoir reservoir(cfg.reservoir_capacity);

  double last_loss = 0.0;
  const auto disc_round = [&](const Eigen::MatrixXd& fresh_states, int steps) {
    std::uniform_int_distribution<Eigen::Index> pick_fresh(0, fresh_states.rows() - 1);
    for (int step = 0; step < steps; ++step) {
      Eigen::MatrixXd tb(cfg.disc_batch, 2), pb(cfg.disc_batch, 2);
      for (int i = 0; i < cfg.disc_batch; ++i) {
        tb.row(i) = target_states.row(pick_target(batch_rng));
        const bool from_reservoir =
            reservoir.size() > 0 && double(i) < cfg.reservoir_fraction * cfg.disc_batch;
        if (from_reservoir) {
          pb.row(i) = reservoir.draw(batch_rng);
        } else {
          pb.row(i) = fresh_states.row(pick_fresh(batch_rng));
        }
      }
      last_loss =
          out.discriminator.train_step(disc_opt, tb, pb, cfg.grad_pen_weight, batch_rng()).loss;
    }
  };

  const auto roll_batch = [&](int episodes, std::uint64_t seed) {
    std::mt19937_64 roll_rng(seed);
    std::vector<ContinuousTrajectory> batch(static_cast<std::size_t>(episodes));
    for (auto& traj : batch) {
      traj.states.resize(env.horizon, 2);
      traj.actions.resize(env.horizon, 2);
      traj.rewards.resize(env.horizon);
      Eigen::Vector2d s = env.reset(roll_rng);
      for (int t = 0; t < env.horizon; ++t) {
        traj.states.row(t) = s.transpose();
        const Eigen::VectorXd a = out.policy.sample(s, roll_rng);
        traj.actions.row(t) = a.transpose();
        s = env.step(s, Eigen::Vector2d(a));
      }
    }
    return batch;
  };

  const auto stack_states = [&](const std::vector<ContinuousTrajectory>& batch) {
    Eigen::MatrixXd states(Eigen::Index(batch.size()) * env.horizon, 2);
    for (std::size_t e = 0; e < batch.size(); ++e) {
      states.middleRows(Eigen::Index(e) * env.horizon, env.horizon) = batch[e].states;
    }
    return states;
  };

  // The normalizer is fit on target points plus the untrained policy's
  // visits, so the clamp box always covers both populations; a target-only
  // fit collapses the box to the target's own scale and blinds the
  // discriminator everywhere the policy actually starts.
  const Eigen::MatrixXd init_states =
      stack_states(roll_batch(cfg.episodes_per_iteration, cfg.seed * 1000003ULL));
  Eigen::MatrixXd fit_rows(target_states.rows() + init_states.rows(), 2);
  fit_rows << target_states, init_states;
  out.discriminator.fit_normalizer(fit_rows);
  reservoir.push(init_states);

  // Anchor the logit landscape on the untrained policy's visits before the
  // first policy step, so the only reward hill at the start is the target.
  if (cfg.disc_warmup_steps > 0) {
    disc_round(init_states, cfg.disc_warmup_steps);
  }

  double last_js = 0.0;
  for (int k = 0; k < cfg.iterations; ++k) {
    const auto tick = std::chrono::steady_clock::now();

    // Fresh on-policy experience.
    std::vector<ContinuousTrajectory> batch = roll_batch(
        cfg.episodes_per_iteration, cfg.seed * 1000003ULL + std::uint64_t(k) * 2ULL + 1ULL);
    const Eigen::MatrixXd policy_states = stack_states(batch);
    reservoir.push(policy_states);

    // Throttle the discriminator once it is clearly winning; a lopsided game
    // shoves the policy around instead of guiding it.
    const int disc_steps = last_loss < cfg.disc_loss_floor ? 1 : cfg.disc_steps;
    disc_round(policy_states, disc_steps);

    // Conjugate reward on the visited states only.
    double mean_return = 0.0;
    for (auto& traj : batch) {
      const Eigen::VectorXd logits = out.discriminator.logits(traj.states);
      for (Eigen::Index t = 0; t < logits.size(); ++t) {
        traj.rewards[t] = fmax_reward(f, logits[t]);
      }
      mean_return += traj.rewards.sum();
    }
    mean_return /= cfg.episodes_per_iteration;
    PolicyUpdateConfig pcfg;
    pcfg.entropy_weight = cfg.entropy_weight;
    pcfg.reward_to_go = true;
    pcfg.normalize_advantages = true;
    pcfg.log_std_min = cfg.log_std_min;
    pcfg.log_std_max = cfg.log_std_max;
    if (cfg.policy_lr_half_life > 0) {
      policy_opt.step_size = cfg.policy_lr / (1.0 + double(k) / cfg.policy_lr_half_life);
    }
    continuous_policy_update(out.policy, policy_opt, batch, pcfg);

    TrainRow row;
    row.iteration = k;
    row.disc_loss = last_loss;
    row.return_stoch = mean_return;
    if (k % cfg.eval_every == 0 || k == cfg.iterations - 1) {
      const Eigen::MatrixXd eval_states = rollout_states(
          env, out.policy, cfg.eval_episodes, cfg.seed * 7919ULL + std::uint64_t(k) * 13ULL);
      last_js = marginal_js(eval_states, target_states);
      if (k == cfg.iterations - 1) out.final_visited = eval_states;
    }
    row.divergence = last_js;
    if (!cfg.no_timing) {
      row.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - tick).count();
    }
    out.report.push_back(row);
  }
  out.final_js = last_js;
  return out;
}

SmmResult smm_train(const PointMassEnv& env, const Eigen::MatrixXd& target_states,
                    const SmmConfig& cfg) {
  return smm_train(env, target_states, FDivergence(FDivergenceKind::ReverseKL), cfg);
}

}  // namespace fmil
