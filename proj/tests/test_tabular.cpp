#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "fmil/tabular.hpp"

using namespace fmil;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

TabularMdp random_mdp(int n_states, int n_actions, double gamma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.05, 1.0);
  TabularMdp mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.gamma = gamma;
  mdp.transition.assign(n_states, MatrixXd::Zero(n_actions, n_states));
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      for (int s2 = 0; s2 < n_states; ++s2) mdp.transition[s](a, s2) = unif(rng);
      mdp.transition[s].row(a) /= mdp.transition[s].row(a).sum();
    }
  }
  mdp.reward = MatrixXd::Zero(n_states, n_actions);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) mdp.reward(s, a) = unif(rng);
  }
  mdp.initial = VectorXd::Zero(n_states);
  for (int s = 0; s < n_states; ++s) mdp.initial[s] = unif(rng);
  mdp.initial /= mdp.initial.sum();
  return mdp;
}

// Per-trajectory MC estimate of the joint occupancy: counts scaled by the
// normalizer are unbiased for rho, so averaging over trajectories gives an
// independent oracle with a valid standard error.
struct McOccupancy {
  MatrixXd mean;
  MatrixXd se;
};

McOccupancy mc_occupancy(const TabularMdp& mdp, const TabularPolicy& pi, int n_traj,
                         std::uint64_t seed) {
  auto trajectories = sample_trajectories(mdp, pi, n_traj, seed);
  double norm = mdp.normalizer();
  MatrixXd mean = MatrixXd::Zero(mdp.n_states, mdp.n_actions);
  MatrixXd m2 = MatrixXd::Zero(mdp.n_states, mdp.n_actions);
  std::vector<MatrixXd> samples;
  samples.reserve(n_traj);
  for (const auto& traj : trajectories) {
    MatrixXd counts = MatrixXd::Zero(mdp.n_states, mdp.n_actions);
    for (int t = 0; t < traj.length(); ++t) counts(traj.states[t], traj.actions[t]) += 1.0;
    counts /= norm;
    samples.push_back(counts);
    mean += counts;
  }
  mean /= double(n_traj);
  for (const auto& sample : samples) m2 += (sample - mean).cwiseProduct(sample - mean);
  McOccupancy out;
  out.mean = mean;
  out.se = (m2 / double(n_traj - 1) / double(n_traj)).cwiseSqrt();
  return out;
}

}  // namespace

TEST_CASE("single-state MDP has trivial occupancy") {
  TabularMdp mdp;
  mdp.n_states = 1;
  mdp.n_actions = 1;
  mdp.gamma = 0.9;
  mdp.transition = {MatrixXd::Ones(1, 1)};
  mdp.reward = MatrixXd::Ones(1, 1);
  mdp.initial = VectorXd::Ones(1);
  auto occ = occupancy_measure(mdp, TabularPolicy::uniform(1, 1));
  CHECK(occ.joint(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(occ.normalizer == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("two-state absorbing chain matches the closed form") {
  // 0 -> 1, 1 -> 1; start at 0. Discounted state marginals are (1-g, g).
  double gamma = 0.97;
  TabularMdp mdp;
  mdp.n_states = 2;
  mdp.n_actions = 1;
  mdp.gamma = gamma;
  MatrixXd t0(1, 2), t1(1, 2);
  t0 << 0.0, 1.0;
  t1 << 0.0, 1.0;
  mdp.transition = {t0, t1};
  mdp.reward = MatrixXd::Zero(2, 1);
  mdp.initial = VectorXd::Zero(2);
  mdp.initial[0] = 1.0;
  auto occ = occupancy_measure(mdp, TabularPolicy::uniform(2, 1));
  CHECK(occ.state_marginal[0] == doctest::Approx(1.0 - gamma).epsilon(1e-12));
  CHECK(occ.state_marginal[1] == doctest::Approx(gamma).epsilon(1e-12));
}

TEST_CASE("occupancy sums to one and satisfies the flow equations") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    TabularMdp mdp = random_mdp(6, 3, 0.95, seed);
    TabularPolicy pi = TabularPolicy::random(6, 3, seed + 100);
    auto occ = occupancy_measure(mdp, pi);
    CHECK(occ.joint.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((occ.joint.array() >= 0.0).all());
    CHECK(flow_residual(mdp, pi, occ) < 1e-9);
  }
}

TEST_CASE("occupancy matches per-trajectory Monte-Carlo estimates") {
  TabularMdp mdp = random_mdp(4, 3, 0.9, 7);
  TabularPolicy pi = TabularPolicy::random(4, 3, 17);
  auto occ = occupancy_measure(mdp, pi);
  // ~20k trajectories of mean length 10 gives about 200k sampled steps.
  auto mc = mc_occupancy(mdp, pi, 20000, 23);
  for (int s = 0; s < 4; ++s) {
    for (int a = 0; a < 3; ++a) {
      double diff = std::abs(mc.mean(s, a) - occ.joint(s, a));
      CHECK(diff <= 3.0 * mc.se(s, a) + 1e-12);
    }
  }
}

TEST_CASE("finite-horizon occupancy averages the per-step marginals") {
  TabularMdp mdp = random_mdp(5, 2, 0.99, 31);
  mdp.horizon = 6;
  mdp.gamma = 1.0;
  TabularPolicy pi = TabularPolicy::random(5, 2, 32);
  auto occ = occupancy_measure(mdp, pi);
  CHECK(occ.normalizer == doctest::Approx(6.0));
  CHECK(occ.joint.sum() == doctest::Approx(1.0).epsilon(1e-12));
  auto mc = mc_occupancy(mdp, pi, 30000, 33);
  for (int s = 0; s < 5; ++s) {
    for (int a = 0; a < 2; ++a) {
      CHECK(std::abs(mc.mean(s, a) - occ.joint(s, a)) <= 3.0 * mc.se(s, a) + 1e-12);
    }
  }
}

TEST_CASE("causal entropy of uniform and deterministic policies") {
  TabularMdp mdp = random_mdp(5, 4, 0.9, 41);
  CHECK(causal_entropy(mdp, TabularPolicy::uniform(5, 4)) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  MatrixXd det = MatrixXd::Zero(5, 4);
  for (int s = 0; s < 5; ++s) det(s, s % 4) = 1.0;
  CHECK(causal_entropy(mdp, TabularPolicy(det)) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("causal entropy matches direct summation") {
  TabularMdp mdp = random_mdp(6, 3, 0.93, 51);
  TabularPolicy pi = TabularPolicy::random(6, 3, 52);
  auto occ = occupancy_measure(mdp, pi);
  double oracle = 0.0;
  for (int s = 0; s < 6; ++s) {
    for (int a = 0; a < 3; ++a) {
      oracle -= occ.joint(s, a) * std::log(pi.probs()(s, a));
    }
  }
  CHECK(causal_entropy(occ, pi) == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("sum-over-time expectations equal normalizer times occupancy expectations") {
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);

  SUBCASE("discounted") {
    TabularMdp mdp = random_mdp(4, 2, 0.9, 62);
    TabularPolicy pi = TabularPolicy::random(4, 2, 63);
    MatrixXd h(4, 2);
    for (int s = 0; s < 4; ++s)
      for (int a = 0; a < 2; ++a) h(s, a) = unif(rng);
    auto res = trajectory_occupancy_identity_check(mdp, pi, h, 40000, 64);
    CHECK(std::abs(res.mc_value - res.exact_value) <= 3.0 * res.std_error);
  }

  SUBCASE("finite horizon") {
    TabularMdp mdp = random_mdp(4, 2, 1.0, 65);
    mdp.gamma = 1.0;
    mdp.horizon = 8;
    TabularPolicy pi = TabularPolicy::random(4, 2, 66);
    MatrixXd h(4, 2);
    for (int s = 0; s < 4; ++s)
      for (int a = 0; a < 2; ++a) h(s, a) = unif(rng);
    auto res = trajectory_occupancy_identity_check(mdp, pi, h, 40000, 67);
    CHECK(std::abs(res.mc_value - res.exact_value) <= 3.0 * res.std_error);
  }
}

TEST_CASE("reward of value one per step gives return equal to the normalizer") {
  TabularMdp mdp = random_mdp(3, 2, 0.9, 71);
  TabularPolicy pi = TabularPolicy::random(3, 2, 72);
  auto occ = occupancy_measure(mdp, pi);
  MatrixXd ones = MatrixXd::Ones(3, 2);
  CHECK(occ.normalizer * occupancy_expectation(occ, ones) ==
        doctest::Approx(mdp.normalizer()).epsilon(1e-12));
}

TEST_CASE("policies that differ only on unreachable states share occupancy and returns") {
  // State 2 is unreachable: all transitions avoid it and the start excludes it.
  TabularMdp mdp;
  mdp.n_states = 3;
  mdp.n_actions = 2;
  mdp.gamma = 0.9;
  MatrixXd t(2, 3);
  t << 1.0, 0.0, 0.0, 0.0, 1.0, 0.0;
  mdp.transition = {t, t, t};
  mdp.reward = MatrixXd::Random(3, 2);
  mdp.initial = VectorXd::Zero(3);
  mdp.initial[0] = 0.6;
  mdp.initial[1] = 0.4;

  MatrixXd base(3, 2);
  base << 0.3, 0.7, 0.8, 0.2, 0.5, 0.5;
  MatrixXd alt = base;
  alt.row(2) << 0.9, 0.1;
  auto occ_a = occupancy_measure(mdp, TabularPolicy(base));
  auto occ_b = occupancy_measure(mdp, TabularPolicy(alt));
  CHECK((occ_a.joint - occ_b.joint).cwiseAbs().maxCoeff() == 0.0);

  std::mt19937_64 rng(81);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  for (int rep = 0; rep < 10; ++rep) {
    MatrixXd r(3, 2);
    for (int s = 0; s < 3; ++s)
      for (int a = 0; a < 2; ++a) r(s, a) = unif(rng);
    CHECK(occupancy_expectation(occ_a, r) == occupancy_expectation(occ_b, r));
  }
}

TEST_CASE("trajectory sampling is deterministic per seed") {
  TabularMdp mdp = random_mdp(5, 3, 0.9, 91);
  TabularPolicy pi = TabularPolicy::random(5, 3, 92);
  auto a = sample_trajectories(mdp, pi, 25, 1234, "pi");
  auto b = sample_trajectories(mdp, pi, 25, 1234, "pi");
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].states == b[i].states);
    CHECK(a[i].actions == b[i].actions);
  }
  auto c = sample_trajectories(mdp, pi, 25, 1235, "pi");
  bool any_diff = false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].states != c[i].states || a[i].actions != c[i].actions) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("finite-horizon trajectories have exactly horizon steps") {
  TabularMdp mdp = random_mdp(4, 2, 1.0, 101);
  mdp.gamma = 1.0;
  mdp.horizon = 12;
  TabularPolicy pi = TabularPolicy::random(4, 2, 102);
  for (const auto& traj : sample_trajectories(mdp, pi, 10, 103)) {
    CHECK(traj.length() == 12);
    CHECK(traj.states.size() == traj.actions.size());
  }
}

TEST_CASE("empirical state-action frequencies converge to the occupancy") {
  TabularMdp mdp = random_mdp(4, 2, 0.9, 111);
  TabularPolicy pi = TabularPolicy::random(4, 2, 112);
  auto occ = occupancy_measure(mdp, pi);
  auto trajectories = sample_trajectories(mdp, pi, 10000, 113);
  MatrixXd counts = MatrixXd::Zero(4, 2);
  double steps = 0.0;
  for (const auto& traj : trajectories) {
    for (int t = 0; t < traj.length(); ++t) {
      counts(traj.states[t], traj.actions[t]) += 1.0;
      steps += 1.0;
    }
  }
  CHECK(steps > 90000);
  counts /= steps;
  double tv = 0.5 * (counts - occ.joint).cwiseAbs().sum();
  CHECK(tv < 0.01);
}

TEST_CASE("gridworld geometry and absorbing goal") {
  TabularMdp grid = make_gridworld(5, 0.99);
  CHECK(grid.n_states == 25);
  CHECK(grid.n_actions == 4);
  // Moving right from the start lands in cell 1; moving up stays put.
  CHECK(grid.transition[0](3, 1) == 1.0);
  CHECK(grid.transition[0](0, 0) == 1.0);
  int goal = 24;
  for (int a = 0; a < 4; ++a) CHECK(grid.transition[goal](a, goal) == 1.0);
  CHECK(grid.reward(goal, 2) == 1.0);
  CHECK(grid.reward(7, 1) == 0.0);

  TabularMdp finite = make_gridworld_finite(8, 40);
  CHECK(finite.n_states == 64);
  CHECK(finite.horizon.has_value());
  CHECK(*finite.horizon == 40);
}

TEST_CASE("mdp JSON round trip preserves every field") {
  TabularMdp mdp = random_mdp(4, 3, 0.92, 121);
  mdp.horizon = 9;
  TabularMdp back = mdp_from_json(mdp_to_json(mdp));
  CHECK(back.n_states == mdp.n_states);
  CHECK(back.n_actions == mdp.n_actions);
  CHECK(back.gamma == mdp.gamma);
  REQUIRE(back.horizon.has_value());
  CHECK(*back.horizon == 9);
  CHECK((back.initial - mdp.initial).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.reward - mdp.reward).cwiseAbs().maxCoeff() == 0.0);
  for (int s = 0; s < mdp.n_states; ++s) {
    CHECK((back.transition[s] - mdp.transition[s]).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("trajectory JSONL round trip") {
  TabularMdp mdp = random_mdp(5, 3, 0.9, 131);
  TabularPolicy pi = TabularPolicy::random(5, 3, 132);
  auto trajectories = sample_trajectories(mdp, pi, 8, 133, "expert-0");
  std::string text = trajectories_to_jsonl(trajectories);
  auto back = trajectories_from_jsonl(text);
  REQUIRE(back.size() == trajectories.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].states == trajectories[i].states);
    CHECK(back[i].actions == trajectories[i].actions);
    CHECK(back[i].policy_id == "expert-0");
  }

  std::string path = "/tmp/fmil_test_traj.jsonl";
  save_trajectories(trajectories, path);
  auto from_disk = load_trajectories(path);
  CHECK(trajectories_to_jsonl(from_disk) == text);
  std::remove(path.c_str());
}

TEST_CASE("validation rejects malformed structures") {
  TabularMdp mdp = random_mdp(3, 2, 0.9, 141);
  mdp.transition[1](0, 0) += 0.2;
  CHECK_THROWS_AS(mdp.validate(), DomainViolation);

  TabularMdp bad_shape = random_mdp(3, 2, 0.9, 142);
  bad_shape.reward = MatrixXd::Zero(2, 2);
  CHECK_THROWS_AS(bad_shape.validate(), ShapeMismatch);

  MatrixXd rows(2, 2);
  rows << 0.5, 0.4, 0.5, 0.5;
  CHECK_THROWS_AS(TabularPolicy{rows}, DomainViolation);

  TabularMdp mdp2 = random_mdp(3, 2, 0.9, 143);
  CHECK_THROWS_AS(occupancy_measure(mdp2, TabularPolicy::uniform(4, 2)), ShapeMismatch);
}

TEST_CASE("argmax action breaks ties toward the lowest index") {
  MatrixXd probs(2, 3);
  probs << 0.4, 0.4, 0.2, 0.1, 0.45, 0.45;
  TabularPolicy pi(probs);
  CHECK(pi.argmax_action(0) == 0);
  CHECK(pi.argmax_action(1) == 1);
}
