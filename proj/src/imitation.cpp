#include "fmil/imitation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <utility>

#include <json.hpp>

namespace fmil {

namespace {

using nlohmann::json;

FiniteDistribution flatten_joint(const Eigen::MatrixXd& joint) {
  Eigen::VectorXd mass(joint.size());
  Eigen::Index k = 0;
  for (Eigen::Index s = 0; s < joint.rows(); ++s) {
    for (Eigen::Index a = 0; a < joint.cols(); ++a) mass[k++] = joint(s, a);
  }
  return FiniteDistribution(mass / mass.sum());
}


TabularPolicy argmax_policy(const TabularPolicy& pi) {
  Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(pi.n_states(), pi.n_actions());
  for (int s = 0; s < pi.n_states(); ++s) probs(s, pi.argmax_action(s)) = 1.0;
  return TabularPolicy(std::move(probs));
}

}  // namespace

int DemoSet::n_pairs() const {
  int total = 0;
  for (const auto& t : trajectories) total += int(t.states.size());
  return total;
}

std::vector<int> DemoSet::all_states() const {
  std::vector<int> out;
  out.reserve(std::size_t(n_pairs()));
  for (const auto& t : trajectories) out.insert(out.end(), t.states.begin(), t.states.end());
  return out;
}

std::vector<int> DemoSet::all_actions() const {
  std::vector<int> out;
  out.reserve(std::size_t(n_pairs()));
  for (const auto& t : trajectories) out.insert(out.end(), t.actions.begin(), t.actions.end());
  return out;
}

DemoSet subsample_demos(const std::vector<Trajectory>& trajectories, int factor,
                        std::uint64_t seed) {
  if (factor < 1) throw DomainViolation("subsample factor must be at least 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, factor - 1);
  DemoSet demos;
  demos.subsample_factor = factor;
  demos.trajectories.reserve(trajectories.size());
  for (const auto& traj : trajectories) {
    DemoTrajectory kept;
    kept.policy_id = traj.policy_id;
    kept.offset = pick(rng);
    for (int t = kept.offset; t < traj.length(); t += factor) {
      kept.states.push_back(traj.states[std::size_t(t)]);
      kept.actions.push_back(traj.actions[std::size_t(t)]);
    }
    demos.trajectories.push_back(std::move(kept));
  }
  return demos;
}

std::string demos_to_jsonl(const DemoSet& demos) {
  std::ostringstream out;
  for (const auto& t : demos.trajectories) {
    json line;
    line["states"] = t.states;
    line["actions"] = t.actions;
    line["policy_id"] = t.policy_id;
    line["offset"] = t.offset;
    line["subsample_factor"] = demos.subsample_factor;
    out << line.dump() << '\n';
  }
  return out.str();
}

DemoSet demos_from_jsonl(const std::string& text) {
  DemoSet demos;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json parsed;
    try {
      parsed = json::parse(line);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("demo line is not valid JSON: ") + e.what());
    }
    DemoTrajectory t;
    t.states = parsed.at("states").get<std::vector<int>>();
    t.actions = parsed.at("actions").get<std::vector<int>>();
    t.policy_id = parsed.value("policy_id", std::string());
    t.offset = parsed.value("offset", 0);
    if (t.states.size() != t.actions.size()) {
      throw ConfigError("demo line has mismatched state/action lengths");
    }
    const int factor = parsed.value("subsample_factor", 1);
    if (first) {
      demos.subsample_factor = factor;
      first = false;
    } else if (factor != demos.subsample_factor) {
      throw ConfigError("demo lines disagree on subsample_factor");
    }
    demos.trajectories.push_back(std::move(t));
  }
  return demos;
}

void save_demos(const DemoSet& demos, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open demo file for writing: " + path);
  const std::string text = demos_to_jsonl(demos);
  out.write(text.data(), std::streamsize(text.size()));
  if (!out) throw ConfigError("failed writing demo file: " + path);
}

DemoSet load_demos(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingRun("cannot open demo file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return demos_from_jsonl(buf.str());
}

Eigen::MatrixXd demo_occupancy(const DemoSet& demos, int n_states, int n_actions) {
  if (demos.n_pairs() == 0) throw EmptyDemos("no demonstration pairs");
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n_states, n_actions);
  for (const auto& t : demos.trajectories) {
    for (std::size_t i = 0; i < t.states.size(); ++i) {
      if (t.states[i] < 0 || t.states[i] >= n_states || t.actions[i] < 0 ||
          t.actions[i] >= n_actions) {
        throw ShapeMismatch("demo pair outside the state-action space");
      }
      counts(t.states[i], t.actions[i]) += 1.0;
    }
  }
  return counts / counts.sum();
}

TabularPolicy behavioural_cloning(const DemoSet& demos, int n_states, int n_actions,
                                  double laplace) {
  if (demos.n_pairs() == 0) throw EmptyDemos("no demonstration pairs");
  if (laplace < 0.0) throw DomainViolation("smoothing must be nonnegative");
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n_states, n_actions);
  for (const auto& t : demos.trajectories) {
    for (std::size_t i = 0; i < t.states.size(); ++i) {
      if (t.states[i] < 0 || t.states[i] >= n_states || t.actions[i] < 0 ||
          t.actions[i] >= n_actions) {
        throw ShapeMismatch("demo pair outside the state-action space");
      }
      counts(t.states[i], t.actions[i]) += 1.0;
    }
  }
  Eigen::MatrixXd probs(n_states, n_actions);
  for (int s = 0; s < n_states; ++s) {
    const double total = counts.row(s).sum();
    if (total == 0.0) {
      probs.row(s).setConstant(1.0 / n_actions);
    } else {
      probs.row(s) = (counts.row(s).array() + laplace) / (total + laplace * n_actions);
    }
  }
  return TabularPolicy(std::move(probs));
}

TabularPolicy dagger(const TabularMdp& mdp, const TabularPolicy& expert,
                     const DemoSet& initial_demos, const DaggerConfig& cfg) {
  mdp.validate();
  if (expert.n_states() != mdp.n_states || expert.n_actions() != mdp.n_actions) {
    throw ShapeMismatch("dagger: expert does not match the MDP");
  }
  DemoSet aggregate = initial_demos;
  TabularPolicy clone =
      behavioural_cloning(aggregate, mdp.n_states, mdp.n_actions, cfg.laplace);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int it = 0; it < cfg.iterations; ++it) {
    const std::vector<Trajectory> rollouts = sample_trajectories(
        mdp, clone, cfg.rollouts_per_iteration, cfg.seed + 7919u * std::uint64_t(it + 1));
    for (const auto& roll : rollouts) {
      DemoTrajectory labeled;
      labeled.policy_id = "dagger";
      for (int s : roll.states) {
        const double u = unif(rng);
        double acc = 0.0;
        int chosen = mdp.n_actions - 1;
        for (int a = 0; a < mdp.n_actions; ++a) {
          acc += expert.probs()(s, a);
          if (u < acc) {
            chosen = a;
            break;
          }
        }
        labeled.states.push_back(s);
        labeled.actions.push_back(chosen);
      }
      aggregate.trajectories.push_back(std::move(labeled));
    }
    clone = behavioural_cloning(aggregate, mdp.n_states, mdp.n_actions, cfg.laplace);
  }
  return clone;
}

EvalStats evaluate_policy_stats(const TabularMdp& eval_mdp, const TabularPolicy& pi,
                                EvalMode mode, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw DomainViolation("evaluation needs at least one episode");
  const TabularPolicy actor = mode == EvalMode::Deterministic ? argmax_policy(pi) : pi;
  const std::vector<Trajectory> rollouts =
      sample_trajectories(eval_mdp, actor, episodes, seed);
  double total = 0.0;
  double total_sq = 0.0;
  for (const auto& traj : rollouts) {
    double ret = 0.0;
    for (int t = 0; t < traj.length(); ++t) {
      ret += eval_mdp.reward(traj.states[std::size_t(t)], traj.actions[std::size_t(t)]);
    }
    total += ret;
    total_sq += ret * ret;
  }
  EvalStats out;
  out.mean = total / episodes;
  const double var = std::max(0.0, total_sq / episodes - out.mean * out.mean);
  out.stddev = std::sqrt(var);
  return out;
}

double evaluate_policy(const TabularMdp& eval_mdp, const TabularPolicy& pi, EvalMode mode,
                       int episodes, std::uint64_t seed) {
  return evaluate_policy_stats(eval_mdp, pi, mode, episodes, seed).mean;
}

double default_reward_scale(AdversarialReward algorithm) {
  return algorithm == AdversarialReward::Fairl ? 128.0 : 16.0;
}

AdversarialResult adversarial_il(const TabularMdp& mdp, const Eigen::MatrixXd& expert_occupancy,
                                 const ILConfig& cfg, const TabularMdp* eval_mdp) {
  mdp.validate();
  if (mdp.finite_horizon()) {
    throw DomainViolation("the exact adversarial loop needs a discounted MDP");
  }
  if (expert_occupancy.rows() != mdp.n_states || expert_occupancy.cols() != mdp.n_actions) {
    throw ShapeMismatch("expert occupancy shape does not match the MDP");
  }
  if (expert_occupancy.minCoeff() < 0.0 || expert_occupancy.sum() <= 0.0) {
    throw DomainViolation("expert occupancy must be a nonnegative distribution");
  }
  if (cfg.iterations < 1) throw DomainViolation("need at least one iteration");
  if (!(cfg.damping_alpha > 0.0 && cfg.damping_alpha <= 1.0)) {
    throw DomainViolation("damping_alpha must be in (0, 1]");
  }

  const Eigen::MatrixXd rho_e = expert_occupancy / expert_occupancy.sum();
  const FiniteDistribution rho_e_flat = flatten_joint(rho_e);
  const FDivergence reported(cfg.algorithm == AdversarialReward::Gail
                                 ? FDivergenceKind::JensenShannon
                                 : FDivergenceKind::ForwardKL);

  TabularPolicy pi = cfg.random_init_policy
                         ? TabularPolicy::random(mdp.n_states, mdp.n_actions, cfg.seed)
                         : TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
  Eigen::MatrixXd rho = occupancy_measure(mdp, pi).joint;

  const double temperature =
      cfg.rl_temperature + (cfg.algorithm == AdversarialReward::Gail
                                ? cfg.gail_entropy_weight * cfg.reward_scale
                                : 0.0);

  AdversarialResult out;
  out.report.reserve(std::size_t(cfg.iterations));
  Eigen::VectorXd warm;
  double last_det = 0.0;
  double last_stoch = 0.0;
  for (int k = 0; k < cfg.iterations; ++k) {
    const auto tick = std::chrono::steady_clock::now();

    const ExactTabularDiscriminator disc(rho_e, rho, cfg.logit_clip);
    double disc_loss = 0.0;
    Eigen::MatrixXd reward(mdp.n_states, mdp.n_actions);
    for (int s = 0; s < mdp.n_states; ++s) {
      for (int a = 0; a < mdp.n_actions; ++a) {
        const double l = disc.logits()(s, a);
        disc_loss += rho_e(s, a) * detail::softplus(-l) + rho(s, a) * detail::softplus(l);
        reward(s, a) = cfg.reward_scale * policy_step_reward(cfg.algorithm, l);
      }
    }

    SoftViConfig solver;
    solver.temperature = temperature;
    solver.tolerance = 1e-9 * std::max(1.0, reward.cwiseAbs().maxCoeff());
    solver.max_iterations = 1000000;
    const SoftViResult best =
        soft_value_iteration(mdp, reward, solver, warm.size() > 0 ? &warm : nullptr);
    warm = best.values;

    const Eigen::MatrixXd rho_best = occupancy_measure(mdp, best.policy).joint;
    const auto divergence_at = [&](const Eigen::MatrixXd& joint) {
      if (cfg.algorithm == AdversarialReward::Fairl) {
        return eval_divergence_clamped(reported, rho_e_flat, flatten_joint(joint));
      }
      return eval_divergence_clamped(reported, flatten_joint(joint), rho_e_flat);
    };
    double alpha;
    if (cfg.line_search) {
      // The divergence is convex along the blend segment, so golden-section
      // search finds the exact step; zero steps are allowed, which makes the
      // reported divergence non-increasing.
      const auto at = [&](double a) {
        return divergence_at((1.0 - a) * rho + a * rho_best);
      };
      const double golden = (std::sqrt(5.0) - 1.0) / 2.0;
      double lo = 0.0;
      double hi = cfg.damping_alpha;
      for (int it = 0; it < 80; ++it) {
        const double mid1 = hi - golden * (hi - lo);
        const double mid2 = lo + golden * (hi - lo);
        if (at(mid1) > at(mid2)) {
          lo = mid1;
        } else {
          hi = mid2;
        }
      }
      alpha = 0.5 * (lo + hi);
    } else {
      alpha = std::min(cfg.damping_alpha, 2.0 / (k + 2.0));
    }
    rho = (1.0 - alpha) * rho + alpha * rho_best;
    rho /= rho.sum();
    pi = policy_from_occupancy(rho);

    TrainRow row;
    row.iteration = k;
    row.disc_loss = disc_loss;
    row.divergence = divergence_at(rho);
    if (eval_mdp != nullptr &&
        (k % cfg.validation_every == 0 || k == cfg.iterations - 1)) {
      const std::uint64_t eval_seed = cfg.seed * 1000003ULL + std::uint64_t(k);
      last_det = evaluate_policy(*eval_mdp, pi, EvalMode::Deterministic,
                                 cfg.validation_episodes, eval_seed);
      last_stoch = evaluate_policy(*eval_mdp, pi, EvalMode::Stochastic,
                                   cfg.validation_episodes, eval_seed + 1);
    }
    row.return_det = last_det;
    row.return_stoch = last_stoch;
    if (!cfg.no_timing) {
      row.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - tick).count();
    }
    out.report.push_back(row);
    if (cfg.record_occupancies) out.occupancy_snapshots.push_back(rho);
  }

  out.policy = pi;
  out.final_logits = ExactTabularDiscriminator(rho_e, rho, cfg.logit_clip).logits();
  return out;
}

PsiIdentityResult psi_conjugate_identity_check(const FDivergence& f,
                                               const FiniteDistribution& p,
                                               const FiniteDistribution& q) {
  if (p.size() != q.size()) throw ShapeMismatch("identity check: support sizes differ");
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0 || q[i] <= 0.0) {
      throw DomainViolation("identity check needs strictly positive supports");
    }
  }

  const double golden = (std::sqrt(5.0) - 1.0) / 2.0;
  double maximized = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const auto objective = [&](double t) { return p[i] * t - q[i] * f.conjugate(t); };
    const double seed = f.optimal_t(p[i] / q[i]);
    double lo = seed - 8.0;
    double hi = seed + 8.0;
    const double sup = f.conjugate_domain_sup();
    if (std::isfinite(sup)) hi = std::min(hi, sup - 1e-12);
    for (int it = 0; it < 300; ++it) {
      const double mid1 = hi - golden * (hi - lo);
      const double mid2 = lo + golden * (hi - lo);
      if (objective(mid1) < objective(mid2)) {
        lo = mid1;
      } else {
        hi = mid2;
      }
    }
    maximized += objective(0.5 * (lo + hi));
  }

  PsiIdentityResult result;
  result.maximized = maximized;
  result.divergence = eval_divergence(f, p, q);
  result.gap = std::abs(result.maximized - result.divergence);
  return result;
}

}  // namespace fmil
