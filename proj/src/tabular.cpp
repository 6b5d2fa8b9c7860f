#include "fmil/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace fmil {

namespace {

using nlohmann::json;

constexpr double kRowSumTol = 1e-9;
constexpr double kFlowTol = 1e-10;

int sample_index(const Eigen::VectorXd& weights, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double r = unif(rng) * weights.sum();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (r <= acc) return int(i);
  }
  return int(weights.size()) - 1;
}

// Policy-chained state transition matrix: M(s, s') = sum_a pi(a|s) P[s](a, s').
Eigen::MatrixXd policy_transition(const TabularMdp& mdp, const TabularPolicy& pi) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(mdp.n_states, mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s) {
    m.row(s) = pi.probs().row(s) * mdp.transition[s];
  }
  return m;
}

Eigen::VectorXd discounted_marginal_power(const TabularMdp& mdp, const Eigen::MatrixXd& m) {
  Eigen::VectorXd d = (1.0 - mdp.gamma) * mdp.initial;
  for (int it = 0; it < 2000000; ++it) {
    Eigen::VectorXd next = (1.0 - mdp.gamma) * mdp.initial + mdp.gamma * (m.transpose() * d);
    double delta = (next - d).cwiseAbs().maxCoeff();
    d = next;
    if (delta < kFlowTol * (1.0 - mdp.gamma)) return d;
  }
  throw NonConvergence("occupancy fixed-point iteration did not converge");
}

}  // namespace

double TabularMdp::normalizer() const {
  if (finite_horizon()) return double(*horizon);
  return 1.0 / (1.0 - gamma);
}

void TabularMdp::validate() const {
  if (n_states <= 0 || n_actions <= 0) throw DomainViolation("empty state or action space");
  if (int(transition.size()) != n_states) throw ShapeMismatch("transition table size mismatch");
  for (int s = 0; s < n_states; ++s) {
    const auto& p = transition[s];
    if (p.rows() != n_actions || p.cols() != n_states) {
      throw ShapeMismatch("transition matrix shape mismatch");
    }
    if ((p.array() < 0.0).any()) throw DomainViolation("negative transition probability");
    for (int a = 0; a < n_actions; ++a) {
      if (std::abs(p.row(a).sum() - 1.0) > kRowSumTol) {
        std::ostringstream msg;
        msg << "transition row does not sum to 1 at state " << s << " action " << a;
        throw DomainViolation(msg.str());
      }
    }
  }
  if (reward.rows() != n_states || reward.cols() != n_actions) {
    throw ShapeMismatch("reward shape mismatch");
  }
  if (!reward.allFinite()) throw DomainViolation("non-finite reward");
  if (initial.size() != n_states) throw ShapeMismatch("initial distribution size mismatch");
  if ((initial.array() < 0.0).any() || std::abs(initial.sum() - 1.0) > kRowSumTol) {
    throw DomainViolation("initial state distribution invalid");
  }
  if (finite_horizon()) {
    if (*horizon < 1) throw DomainViolation("horizon must be positive");
  } else if (!(gamma > 0.0 && gamma < 1.0)) {
    throw DomainViolation("discounted mode requires gamma in (0,1)");
  }
}

TabularPolicy::TabularPolicy(Eigen::MatrixXd probs) : probs_(std::move(probs)) {
  if (probs_.rows() == 0 || probs_.cols() == 0) throw DomainViolation("empty policy");
  if ((probs_.array() < 0.0).any()) throw DomainViolation("negative action probability");
  for (Eigen::Index s = 0; s < probs_.rows(); ++s) {
    double total = probs_.row(s).sum();
    if (std::abs(total - 1.0) > kRowSumTol) {
      std::ostringstream msg;
      msg << "policy row " << s << " sums to " << total;
      throw DomainViolation(msg.str());
    }
    probs_.row(s) /= total;
  }
}

TabularPolicy TabularPolicy::uniform(int n_states, int n_actions) {
  return TabularPolicy(Eigen::MatrixXd::Constant(n_states, n_actions, 1.0 / n_actions));
}

TabularPolicy TabularPolicy::random(int n_states, int n_actions, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.05, 1.0);
  Eigen::MatrixXd probs(n_states, n_actions);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) probs(s, a) = unif(rng);
    probs.row(s) /= probs.row(s).sum();
  }
  return TabularPolicy(std::move(probs));
}

int TabularPolicy::argmax_action(int s) const {
  int best = 0;
  for (int a = 1; a < n_actions(); ++a) {
    if (probs_(s, a) > probs_(s, best)) best = a;
  }
  return best;
}

FiniteDistribution OccupancyMeasure::flattened() const {
  Eigen::VectorXd flat(joint.rows() * joint.cols());
  for (Eigen::Index s = 0; s < joint.rows(); ++s) {
    for (Eigen::Index a = 0; a < joint.cols(); ++a) {
      flat[s * joint.cols() + a] = joint(s, a);
    }
  }
  return FiniteDistribution(flat / flat.sum());
}

TabularPolicy policy_from_occupancy(const Eigen::MatrixXd& joint) {
  Eigen::MatrixXd probs(joint.rows(), joint.cols());
  for (Eigen::Index s = 0; s < joint.rows(); ++s) {
    const double total = joint.row(s).sum();
    if (total > 0.0) {
      probs.row(s) = joint.row(s) / total;
    } else {
      probs.row(s).setConstant(1.0 / double(joint.cols()));
    }
  }
  return TabularPolicy(std::move(probs));
}

OccupancyMeasure occupancy_measure(const TabularMdp& mdp, const TabularPolicy& pi) {
  mdp.validate();
  if (pi.n_states() != mdp.n_states || pi.n_actions() != mdp.n_actions) {
    throw ShapeMismatch("policy shape does not match MDP");
  }
  Eigen::MatrixXd m = policy_transition(mdp, pi);
  Eigen::VectorXd d;
  if (mdp.finite_horizon()) {
    int t_max = *mdp.horizon;
    Eigen::VectorXd dt = mdp.initial;
    d = Eigen::VectorXd::Zero(mdp.n_states);
    for (int t = 0; t < t_max; ++t) {
      d += dt;
      if (t + 1 < t_max) dt = m.transpose() * dt;
    }
    d /= double(t_max);
  } else if (mdp.n_states * mdp.n_actions <= 10000) {
    Eigen::MatrixXd system =
        Eigen::MatrixXd::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * m.transpose();
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);
    d = lu.solve((1.0 - mdp.gamma) * mdp.initial);
    double residual = (system * d - (1.0 - mdp.gamma) * mdp.initial).cwiseAbs().maxCoeff();
    if (!d.allFinite() || residual > 1e-8) {
      // SingularSystem territory: retreat to the contraction iteration.
      d = discounted_marginal_power(mdp, m);
    }
  } else {
    d = discounted_marginal_power(mdp, m);
  }

  OccupancyMeasure occ;
  occ.normalizer = mdp.normalizer();
  occ.joint = d.asDiagonal() * pi.probs();
  double total = occ.joint.sum();
  if (!(total > 0.0) || !occ.joint.allFinite()) {
    throw SingularSystem("occupancy solve produced an invalid measure");
  }
  occ.joint /= total;
  occ.state_marginal = occ.joint.rowwise().sum();
  return occ;
}

double flow_residual(const TabularMdp& mdp, const TabularPolicy& pi,
                     const OccupancyMeasure& occ) {
  Eigen::MatrixXd m = policy_transition(mdp, pi);
  if (mdp.finite_horizon()) {
    // Horizon-averaged marginals satisfy the flow equations only in the
    // discounted setting; report the defect of the stationary form.
    Eigen::VectorXd lhs = occ.state_marginal;
    Eigen::VectorXd rhs = m.transpose() * occ.state_marginal;
    return (lhs - rhs).cwiseAbs().maxCoeff();
  }
  Eigen::VectorXd lhs = occ.state_marginal;
  Eigen::VectorXd rhs =
      (1.0 - mdp.gamma) * mdp.initial + mdp.gamma * (m.transpose() * occ.state_marginal);
  return (lhs - rhs).cwiseAbs().maxCoeff();
}

double causal_entropy(const OccupancyMeasure& occ, const TabularPolicy& pi) {
  double h = 0.0;
  for (Eigen::Index s = 0; s < occ.joint.rows(); ++s) {
    for (Eigen::Index a = 0; a < occ.joint.cols(); ++a) {
      double w = occ.joint(s, a);
      double p = pi.probs()(s, a);
      if (w > 0.0 && p > 0.0) h -= w * std::log(p);
    }
  }
  return h;
}

double causal_entropy(const TabularMdp& mdp, const TabularPolicy& pi) {
  return causal_entropy(occupancy_measure(mdp, pi), pi);
}

double occupancy_expectation(const OccupancyMeasure& occ, const Eigen::MatrixXd& h) {
  if (h.rows() != occ.joint.rows() || h.cols() != occ.joint.cols()) {
    throw ShapeMismatch("expectation argument shape mismatch");
  }
  return (occ.joint.array() * h.array()).sum();
}

std::vector<Trajectory> sample_trajectories(const TabularMdp& mdp, const TabularPolicy& pi,
                                            int n_trajectories, std::uint64_t seed,
                                            const std::string& policy_id) {
  mdp.validate();
  if (pi.n_states() != mdp.n_states || pi.n_actions() != mdp.n_actions) {
    throw ShapeMismatch("policy shape does not match MDP");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Trajectory> out;
  out.reserve(n_trajectories);
  for (int i = 0; i < n_trajectories; ++i) {
    Trajectory traj;
    traj.policy_id = policy_id;
    int s = sample_index(mdp.initial, rng);
    for (int t = 0;; ++t) {
      int a = sample_index(pi.probs().row(s).transpose(), rng);
      traj.states.push_back(s);
      traj.actions.push_back(a);
      if (mdp.finite_horizon()) {
        if (t + 1 >= *mdp.horizon) break;
      } else if (unif(rng) >= mdp.gamma) {
        break;
      }
      s = sample_index(mdp.transition[s].row(a).transpose(), rng);
    }
    out.push_back(std::move(traj));
  }
  return out;
}

IdentityCheckResult trajectory_occupancy_identity_check(const TabularMdp& mdp,
                                                        const TabularPolicy& pi,
                                                        const Eigen::MatrixXd& h,
                                                        int n_trajectories,
                                                        std::uint64_t seed) {
  if (h.rows() != mdp.n_states || h.cols() != mdp.n_actions) {
    throw ShapeMismatch("h shape mismatch");
  }
  auto trajectories = sample_trajectories(mdp, pi, n_trajectories, seed);
  Eigen::VectorXd sums(n_trajectories);
  for (int i = 0; i < n_trajectories; ++i) {
    double total = 0.0;
    const auto& traj = trajectories[i];
    for (int t = 0; t < traj.length(); ++t) total += h(traj.states[t], traj.actions[t]);
    sums[i] = total;
  }
  IdentityCheckResult result;
  result.mc_value = sums.mean();
  OccupancyMeasure occ = occupancy_measure(mdp, pi);
  result.exact_value = occ.normalizer * occupancy_expectation(occ, h);
  double var = (sums.array() - result.mc_value).square().sum() / double(n_trajectories - 1);
  result.std_error = std::sqrt(var / double(n_trajectories));
  return result;
}

namespace {

TabularMdp gridworld_base(int side) {
  if (side < 2) throw DomainViolation("gridworld side must be at least 2");
  TabularMdp mdp;
  mdp.n_states = side * side;
  mdp.n_actions = 4;
  int goal = mdp.n_states - 1;
  mdp.transition.assign(mdp.n_states, Eigen::MatrixXd::Zero(4, mdp.n_states));
  for (int s = 0; s < mdp.n_states; ++s) {
    int row = s / side, col = s % side;
    for (int a = 0; a < 4; ++a) {
      int r2 = row, c2 = col;
      if (a == 0) r2 = std::max(0, row - 1);
      if (a == 1) r2 = std::min(side - 1, row + 1);
      if (a == 2) c2 = std::max(0, col - 1);
      if (a == 3) c2 = std::min(side - 1, col + 1);
      int next = s == goal ? goal : r2 * side + c2;
      mdp.transition[s](a, next) = 1.0;
    }
  }
  mdp.reward = Eigen::MatrixXd::Zero(mdp.n_states, 4);
  mdp.reward.row(goal).setOnes();
  mdp.initial = Eigen::VectorXd::Zero(mdp.n_states);
  mdp.initial[0] = 1.0;
  return mdp;
}

}  // namespace

TabularMdp make_gridworld(int side, double gamma) {
  TabularMdp mdp = gridworld_base(side);
  mdp.gamma = gamma;
  mdp.validate();
  return mdp;
}

TabularMdp make_gridworld_finite(int side, int horizon) {
  TabularMdp mdp = gridworld_base(side);
  mdp.gamma = 1.0;
  mdp.horizon = horizon;
  mdp.validate();
  return mdp;
}

std::string mdp_to_json(const TabularMdp& mdp) {
  json j;
  j["n_states"] = mdp.n_states;
  j["n_actions"] = mdp.n_actions;
  j["gamma"] = mdp.gamma;
  if (mdp.horizon) {
    j["horizon"] = *mdp.horizon;
  } else {
    j["horizon"] = nullptr;
  }
  j["initial"] = std::vector<double>(mdp.initial.data(), mdp.initial.data() + mdp.initial.size());
  json reward = json::array();
  for (int s = 0; s < mdp.n_states; ++s) {
    json row = json::array();
    for (int a = 0; a < mdp.n_actions; ++a) row.push_back(mdp.reward(s, a));
    reward.push_back(std::move(row));
  }
  j["reward"] = std::move(reward);
  json transition = json::array();
  for (int s = 0; s < mdp.n_states; ++s) {
    json per_action = json::array();
    for (int a = 0; a < mdp.n_actions; ++a) {
      json row = json::array();
      for (int s2 = 0; s2 < mdp.n_states; ++s2) row.push_back(mdp.transition[s](a, s2));
      per_action.push_back(std::move(row));
    }
    transition.push_back(std::move(per_action));
  }
  j["transition"] = std::move(transition);
  return j.dump();
}

TabularMdp mdp_from_json(const std::string& text) {
  json j = json::parse(text);
  TabularMdp mdp;
  mdp.n_states = j.at("n_states").get<int>();
  mdp.n_actions = j.at("n_actions").get<int>();
  mdp.gamma = j.at("gamma").get<double>();
  if (!j.at("horizon").is_null()) mdp.horizon = j.at("horizon").get<int>();
  auto initial = j.at("initial").get<std::vector<double>>();
  mdp.initial = Eigen::Map<Eigen::VectorXd>(initial.data(), Eigen::Index(initial.size()));
  mdp.reward = Eigen::MatrixXd(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) mdp.reward(s, a) = j.at("reward").at(s).at(a).get<double>();
  }
  mdp.transition.assign(mdp.n_states, Eigen::MatrixXd::Zero(mdp.n_actions, mdp.n_states));
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      for (int s2 = 0; s2 < mdp.n_states; ++s2) {
        mdp.transition[s](a, s2) = j.at("transition").at(s).at(a).at(s2).get<double>();
      }
    }
  }
  mdp.validate();
  return mdp;
}

void save_mdp(const TabularMdp& mdp, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << mdp_to_json(mdp) << "\n";
}

TabularMdp load_mdp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return mdp_from_json(buf.str());
}

std::string trajectories_to_jsonl(const std::vector<Trajectory>& trajectories) {
  std::ostringstream out;
  for (const auto& traj : trajectories) {
    json j;
    j["states"] = traj.states;
    j["actions"] = traj.actions;
    j["policy_id"] = traj.policy_id;
    out << j.dump() << "\n";
  }
  return out.str();
}

std::vector<Trajectory> trajectories_from_jsonl(const std::string& text) {
  std::vector<Trajectory> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    Trajectory traj;
    traj.states = j.at("states").get<std::vector<int>>();
    traj.actions = j.at("actions").get<std::vector<int>>();
    traj.policy_id = j.value("policy_id", std::string());
    if (traj.states.size() != traj.actions.size()) {
      throw ShapeMismatch("trajectory states/actions length mismatch");
    }
    out.push_back(std::move(traj));
  }
  return out;
}

void save_trajectories(const std::vector<Trajectory>& trajectories, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << trajectories_to_jsonl(trajectories);
}

std::vector<Trajectory> load_trajectories(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return trajectories_from_jsonl(buf.str());
}

}  // namespace fmil
