#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fmil/smm.hpp"

using namespace fmil;

namespace {

double hand_js(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) acc += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) acc += 0.5 * q[i] * std::log(q[i] / m);
  }
  return acc;
}

Eigen::VectorXd floor_histogram_2x2(const Eigen::MatrixXd& cloud, double lo, double hi) {
  Eigen::VectorXd cells = Eigen::VectorXd::Constant(4, 1e-6);
  const double width = (hi - lo) / 2.0;
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
    const int bx = std::clamp(int(std::floor((cloud(i, 0) - lo) / width)), 0, 1);
    const int by = std::clamp(int(std::floor((cloud(i, 1) - lo) / width)), 0, 1);
    cells[bx * 2 + by] += 1.0;
  }
  return cells / cells.sum();
}

}  // namespace

TEST_CASE("point mass step clips the action norm") {
  PointMassEnv env;
  const Eigen::Vector2d s(1.0, 1.0);

  const Eigen::Vector2d big = env.step(s, Eigen::Vector2d(3.0, 4.0));
  CHECK(big.x() == doctest::Approx(1.6).epsilon(1e-12));
  CHECK(big.y() == doctest::Approx(1.8).epsilon(1e-12));

  const Eigen::Vector2d small = env.step(s, Eigen::Vector2d(0.2, -0.1));
  CHECK(small.x() == doctest::Approx(1.2).epsilon(1e-12));
  CHECK(small.y() == doctest::Approx(0.9).epsilon(1e-12));

  PointMassEnv short_env;
  short_env.max_step = 0.5;
  const Eigen::Vector2d scaled = short_env.step(s, Eigen::Vector2d(3.0, 4.0));
  CHECK(scaled.x() == doctest::Approx(1.3).epsilon(1e-12));
  CHECK(scaled.y() == doctest::Approx(1.4).epsilon(1e-12));
}

TEST_CASE("reset draws independent coordinates around the origin") {
  PointMassEnv env;
  std::mt19937_64 rng(11);
  const int n = 20000;
  Eigen::MatrixXd starts(n, 2);
  for (int i = 0; i < n; ++i) starts.row(i) = env.reset(rng).transpose();
  CHECK(std::abs(starts.col(0).mean()) < 0.01);
  CHECK(std::abs(starts.col(1).mean()) < 0.01);
  const double sx = std::sqrt(starts.col(0).array().square().mean());
  const double sy = std::sqrt(starts.col(1).array().square().mean());
  CHECK(sx == doctest::Approx(env.start_noise).epsilon(0.05));
  CHECK(sy == doctest::Approx(env.start_noise).epsilon(0.05));
}

TEST_CASE("noiseless infinity samples satisfy the lemniscate equation") {
  TargetConfig cfg;
  cfg.shape = TargetShape::Infinity;
  cfg.scale = 3.5;
  cfg.noise = 0.0;
  cfg.n_samples = 257;
  const Eigen::MatrixXd pts = sample_target(cfg);
  REQUIRE(pts.rows() == 257);
  REQUIRE(pts.cols() == 2);

  // (x^2 + y^2)^2 = 2 c^2 (x^2 - y^2) holds exactly on the curve.
  const double c2 = cfg.scale * cfg.scale;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const double x2 = pts(i, 0) * pts(i, 0);
    const double y2 = pts(i, 1) * pts(i, 1);
    const double lhs = (x2 + y2) * (x2 + y2);
    const double rhs = 2.0 * c2 * (x2 - y2);
    CHECK(std::abs(lhs - rhs) < 1e-9 * std::max(1.0, std::abs(lhs)));
  }

  // The angle grid includes both endpoints, which map to the widest point.
  CHECK(pts(0, 0) == doctest::Approx(cfg.scale * std::sqrt(2.0)).epsilon(1e-12));
  CHECK(pts(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(pts(256, 0) == doctest::Approx(cfg.scale * std::sqrt(2.0)).epsilon(1e-12));
  CHECK(std::abs(pts(256, 1)) < 1e-12);
  CHECK(pts.col(0).cwiseAbs().maxCoeff() == doctest::Approx(cfg.scale * std::sqrt(2.0)));
  // The crossing point at a = pi/2 sits at the origin for odd grids like 257.
  CHECK(pts.row(64).norm() < 1e-9);
}

TEST_CASE("noiseless spiral samples have linear radius and matching angle") {
  TargetConfig cfg;
  cfg.shape = TargetShape::Spiral;
  cfg.scale = 16.0;
  cfg.rotations = 2.0;
  cfg.noise = 0.0;
  cfg.n_samples = 401;
  const Eigen::MatrixXd pts = sample_target(cfg);
  REQUIRE(pts.rows() == 401);
  CHECK(pts.row(0).norm() == doctest::Approx(0.0));
  for (Eigen::Index i = 1; i < pts.rows(); ++i) {
    const double frac = double(i) / 400.0;
    CHECK(pts.row(i).norm() == doctest::Approx(cfg.scale * frac).epsilon(1e-12));
    const double a = 2.0 * 3.14159265358979323846 * cfg.rotations * frac;
    const double angle = std::atan2(pts(i, 1), pts(i, 0));
    const double wrapped = std::remainder(a - angle, 2.0 * 3.14159265358979323846);
    CHECK(std::abs(wrapped) < 1e-9);
  }
  CHECK(pts.row(400).norm() == doctest::Approx(16.0).epsilon(1e-12));
}

TEST_CASE("target noise is deterministic per seed and has the right scale") {
  TargetConfig noisy = default_target(TargetShape::Infinity, 5);
  noisy.n_samples = 2000;
  const Eigen::MatrixXd a = sample_target(noisy);
  const Eigen::MatrixXd b = sample_target(noisy);
  CHECK((a - b).norm() == 0.0);

  TargetConfig other = noisy;
  other.seed = 6;
  CHECK((a - sample_target(other)).norm() > 0.0);

  TargetConfig clean = noisy;
  clean.noise = 0.0;
  const Eigen::MatrixXd deltas = a - sample_target(clean);
  const double sd = std::sqrt(deltas.array().square().mean());
  CHECK(sd == doctest::Approx(noisy.noise).epsilon(0.08));
}

TEST_CASE("benchmark target presets") {
  const TargetConfig inf = default_target(TargetShape::Infinity, 3);
  CHECK(inf.scale == 12.0);
  CHECK(inf.noise == 0.3);
  CHECK(inf.n_samples == 4000);
  CHECK(inf.seed == 3);
  CHECK(default_horizon(TargetShape::Infinity) == 120);

  const TargetConfig spi = default_target(TargetShape::Spiral, 4);
  CHECK(spi.scale == 16.0);
  CHECK(spi.rotations == 2.0);
  CHECK(spi.noise == 0.3);
  CHECK(spi.n_samples == 16000);
  CHECK(default_horizon(TargetShape::Spiral) == 480);

  CHECK(target_shape_from_name("infinity") == TargetShape::Infinity);
  CHECK(target_shape_from_name("spiral") == TargetShape::Spiral);
  CHECK(std::string(target_shape_name(TargetShape::Spiral)) == "spiral");
  CHECK_THROWS_AS((void)target_shape_from_name("circle"), ConfigError);
}

TEST_CASE("marginal divergence of a cloud against itself is zero") {
  const Eigen::MatrixXd cloud = sample_target(default_target(TargetShape::Infinity, 9));
  CHECK(marginal_js(cloud, cloud) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("marginal divergence matches a hand-built floored histogram") {
  Eigen::MatrixXd target(2, 2);
  target << 0.0, 0.0, 1.0, 1.0;
  Eigen::MatrixXd visited(3, 2);
  visited << 0.2, 0.2, 0.2, 0.1, 0.8, 0.9;
  // bins=2, margin=0.5 puts the box at [-0.5, 1.5]^2 with unit cells.
  const Eigen::VectorXd p = floor_histogram_2x2(visited, -0.5, 1.5);
  const Eigen::VectorXd q = floor_histogram_2x2(target, -0.5, 1.5);
  CHECK(marginal_js(visited, target, 2, 0.5) ==
        doctest::Approx(hand_js(p, q)).epsilon(1e-12));
}

TEST_CASE("disjoint clouds approach the log 2 ceiling") {
  Eigen::MatrixXd target(100, 2);
  Eigen::MatrixXd visited(100, 2);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    target(i, 0) = unit(rng);
    target(i, 1) = unit(rng);
    visited(i, 0) = 40.0 + unit(rng);
    visited(i, 1) = 40.0 + unit(rng);
  }
  const double js = marginal_js(visited, target);
  CHECK(js > 0.99 * std::log(2.0));
  CHECK(js <= std::log(2.0) + 1e-12);
}

TEST_CASE("points outside the box are clamped into edge bins") {
  Eigen::MatrixXd target(2, 2);
  target << 0.0, 0.0, 1.0, 1.0;
  Eigen::MatrixXd far(1, 2), corner(1, 2);
  far << 1e6, 1e6;
  corner << 1.4, 1.4;
  CHECK(marginal_js(far, target, 2, 0.5) ==
        doctest::Approx(marginal_js(corner, target, 2, 0.5)).epsilon(1e-12));
}

TEST_CASE("histogram input validation") {
  Eigen::MatrixXd ok(1, 2);
  ok << 0.0, 0.0;
  CHECK_THROWS_AS((void)marginal_js(ok, Eigen::MatrixXd(0, 2)), ShapeMismatch);
  CHECK_THROWS_AS((void)marginal_js(Eigen::MatrixXd(1, 3), ok), ShapeMismatch);
  CHECK_THROWS_AS((void)marginal_js(ok, ok, 0), DomainViolation);
  CHECK_THROWS_AS((void)sample_target(TargetConfig{TargetShape::Infinity, 1, 1, 0.1, 1, 0}),
                  DomainViolation);
  CHECK_THROWS_AS((void)sample_target(TargetConfig{TargetShape::Infinity, 1, 1, -0.1, 9, 0}),
                  DomainViolation);
}

TEST_CASE("rollouts record one pre-action state per step and repeat per seed") {
  PointMassEnv env;
  env.horizon = 17;
  const GaussianPolicy policy({2, 8, 2}, Activation::Tanh, 3);
  const Eigen::MatrixXd a = rollout_states(env, policy, 5, 21);
  REQUIRE(a.rows() == 85);
  REQUIRE(a.cols() == 2);
  const Eigen::MatrixXd b = rollout_states(env, policy, 5, 21);
  CHECK((a - b).norm() == 0.0);
  CHECK((a - rollout_states(env, policy, 5, 22)).norm() > 0.0);

  // No state can be farther out than the start plus horizon unit steps.
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    CHECK(a.row(i).norm() < env.horizon * env.max_step + 2.0);
  }
  CHECK_THROWS_AS((void)rollout_states(env, policy, 0, 1), DomainViolation);
}

TEST_CASE("matching a nearby blob drives the histogram divergence down") {
  PointMassEnv env;
  env.horizon = 24;

  // Ring of radius 6 around the start region.
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 0.25);
  Eigen::MatrixXd target(600, 2);
  for (int i = 0; i < 600; ++i) {
    const double a = 2.0 * 3.14159265358979323846 * i / 600.0;
    target(i, 0) = 6.0 * std::cos(a) + normal(rng);
    target(i, 1) = 6.0 * std::sin(a) + normal(rng);
  }

  SmmConfig cfg;
  cfg.iterations = 800;
  cfg.episodes_per_iteration = 16;
  cfg.disc_steps = 10;
  cfg.disc_batch = 128;
  cfg.eval_every = 10;
  cfg.eval_episodes = 12;
  cfg.policy_hidden = {32, 32};
  cfg.disc_hidden = {32, 32};
  cfg.seed = 1;
  cfg.no_timing = true;
  const SmmResult run = smm_train(env, target, cfg);

  REQUIRE(run.report.size() == 800);
  const double first = run.report.front().divergence;
  CHECK(first > 0.0);
  // The 288-point evaluation histogram floors out near 0.33 against this
  // 600-point target, so "descended" means well below the start, not near 0.
  CHECK(run.final_js < 0.85 * first);
  CHECK(run.final_js < 0.55);
  CHECK(run.final_js == run.report.back().divergence);
  CHECK(run.final_visited.rows() == Eigen::Index(cfg.eval_episodes) * env.horizon);

  // The divergence column is carried forward between evaluations.
  for (int k = 1; k < 10; ++k) CHECK(run.report[k].divergence == first);
  for (const TrainRow& row : run.report) {
    CHECK(std::isfinite(row.disc_loss));
    CHECK(row.disc_loss > 0.0);
    CHECK(row.seconds == 0.0);
    CHECK(std::isfinite(row.return_stoch));
  }
}

TEST_CASE("training is reproducible per seed") {
  PointMassEnv env;
  env.horizon = 12;
  Eigen::MatrixXd target(50, 2);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal(3.0, 0.5);
  for (int i = 0; i < 50; ++i) {
    target(i, 0) = normal(rng);
    target(i, 1) = normal(rng);
  }
  SmmConfig cfg;
  cfg.iterations = 6;
  cfg.episodes_per_iteration = 4;
  cfg.disc_steps = 2;
  cfg.disc_batch = 32;
  cfg.eval_every = 3;
  cfg.eval_episodes = 4;
  cfg.policy_hidden = {16};
  cfg.disc_hidden = {16};
  cfg.seed = 7;
  cfg.no_timing = true;

  const SmmResult a = smm_train(env, target, cfg);
  const SmmResult b = smm_train(env, target, cfg);
  CHECK(a.final_js == b.final_js);
  CHECK((a.policy.flat_params() - b.policy.flat_params()).norm() == 0.0);
  CHECK((a.final_visited - b.final_visited).norm() == 0.0);
  for (std::size_t i = 0; i < a.report.size(); ++i) {
    CHECK(a.report[i].divergence == b.report[i].divergence);
    CHECK(a.report[i].disc_loss == b.report[i].disc_loss);
  }

  SmmConfig other = cfg;
  other.seed = 8;
  CHECK(smm_train(env, target, other).final_js != a.final_js);

  CHECK_THROWS_AS((void)smm_train(env, Eigen::MatrixXd(0, 2), cfg), ShapeMismatch);
  SmmConfig bad = cfg;
  bad.iterations = 0;
  CHECK_THROWS_AS((void)smm_train(env, target, bad), DomainViolation);
}

TEST_CASE("noiseless infinity set is symmetric under point reflection") {
  TargetConfig cfg;
  cfg.shape = TargetShape::Infinity;
  cfg.scale = 4.0;
  cfg.noise = 0.0;
  cfg.n_samples = 257;
  const Eigen::MatrixXd pts = sample_target(cfg);

  // a -> pi - a negates both coordinates; on the inclusive endpoint grid
  // that maps index i to (half - i) mod (n - 1).
  const int n = 256;
  for (int i = 0; i < n; ++i) {
    const int j = ((128 - i) % n + n) % n;
    CHECK(pts(j, 0) == doctest::Approx(-pts(i, 0)).epsilon(1e-9));
    CHECK(pts(j, 1) == doctest::Approx(-pts(i, 1)).epsilon(1e-9));
  }
}

TEST_CASE("training against the untrained policy's own visitation is a fixed point") {
  PointMassEnv env;
  env.horizon = 40;

  SmmConfig cfg;
  cfg.iterations = 10;
  cfg.episodes_per_iteration = 16;
  cfg.disc_steps = 5;
  cfg.disc_batch = 128;
  cfg.eval_every = 5;
  cfg.eval_episodes = 16;
  cfg.policy_hidden = {32, 32};
  cfg.disc_hidden = {32, 32};
  cfg.seed = 3;
  cfg.no_timing = true;

  // The exact visitation point set the warm-up phase will reproduce.
  GaussianPolicy untrained({2, 32, 32, 2}, Activation::Tanh, cfg.seed);
  const Eigen::MatrixXd target =
      rollout_states(env, untrained, cfg.episodes_per_iteration, cfg.seed * 1000003ULL);

  const SmmResult run = smm_train(env, target, cfg);

  // Positives and negatives coincide, so trained logits hover near zero on
  // the box interior; only the normalizer's own tail rows read the floor.
  const Eigen::VectorXd logits = run.discriminator.logits(target);
  double in_sum = 0.0;
  int floored = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (logits[i] == -cfg.logit_clip) {
      ++floored;
    } else {
      in_sum += std::abs(logits[i]);
    }
  }
  CHECK(double(floored) / double(logits.size()) < 0.1);
  CHECK(in_sum / double(logits.size() - floored) < 0.3);

  // The policy barely moves: its mean output drifts below tolerance per
  // iteration, and its visitation stays matched to the target.
  double drift = 0.0;
  for (Eigen::Index i = 0; i < target.rows(); ++i) {
    drift = std::max(
        drift, (run.policy.mean(target.row(i)) - untrained.mean(target.row(i))).norm());
  }
  CHECK(drift / cfg.iterations < 0.3);
  CHECK(run.final_js < run.report.front().divergence + 0.1);
  CHECK(run.final_js < 0.4);
}

TEST_CASE("a tight blob pulls the final mean position within one unit") {
  PointMassEnv env;
  env.horizon = 120;

  std::mt19937_64 rng(11);
  std::normal_distribution<double> noise(0.0, 0.3);
  Eigen::MatrixXd target(2000, 2);
  for (int i = 0; i < 2000; ++i) {
    target(i, 0) = 5.0 + noise(rng);
    target(i, 1) = 5.0 + noise(rng);
  }

  SmmConfig cfg;
  cfg.iterations = 300;
  cfg.episodes_per_iteration = 16;
  cfg.disc_steps = 5;
  cfg.disc_batch = 128;
  cfg.eval_every = 50;
  cfg.eval_episodes = 16;
  cfg.policy_hidden = {32, 32};
  cfg.disc_hidden = {32, 32};
  cfg.seed = 3;
  cfg.no_timing = true;

  const SmmResult run = smm_train(env, target, cfg);

  Eigen::Vector2d final_mean = Eigen::Vector2d::Zero();
  const Eigen::Index episodes = run.final_visited.rows() / env.horizon;
  for (Eigen::Index e = 0; e < episodes; ++e) {
    final_mean += run.final_visited.row((e + 1) * env.horizon - 1).transpose();
  }
  final_mean /= double(episodes);
  CHECK((final_mean - Eigen::Vector2d(5.0, 5.0)).norm() < 1.0);
  CHECK(run.final_js < 0.5 * run.report.front().divergence);
}

TEST_CASE("rewards depend on visited states only, never on actions") {
  PointMassEnv env;
  env.horizon = 10;
  Eigen::MatrixXd target(40, 2);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal(1.0, 0.5);
  for (int i = 0; i < 40; ++i) {
    target(i, 0) = normal(rng);
    target(i, 1) = normal(rng);
  }
  SmmConfig cfg;
  cfg.iterations = 4;
  cfg.episodes_per_iteration = 4;
  cfg.disc_steps = 2;
  cfg.disc_batch = 32;
  cfg.eval_every = 2;
  cfg.eval_episodes = 4;
  cfg.policy_hidden = {16};
  cfg.disc_hidden = {16};
  cfg.seed = 9;
  cfg.no_timing = true;
  const SmmResult run = smm_train(env, target, cfg);

  const FDivergence f(FDivergenceKind::ReverseKL);
  const Eigen::MatrixXd states = run.final_visited;
  const Eigen::VectorXd logits = run.discriminator.logits(states);
  Eigen::VectorXd rewards(logits.size());
  for (Eigen::Index t = 0; t < logits.size(); ++t) rewards[t] = fmax_reward(f, logits[t]);

  // Recompute through the only reward inputs the training loop uses; no
  // action perturbation can reach them.
  std::mt19937_64 perturb(12);
  std::normal_distribution<double> junk(0.0, 100.0);
  Eigen::MatrixXd actions(states.rows(), 2);
  for (Eigen::Index i = 0; i < actions.size(); ++i) actions(i) = junk(perturb);
  const Eigen::VectorXd again = run.discriminator.logits(states);
  for (Eigen::Index t = 0; t < again.size(); ++t) {
    CHECK(fmax_reward(f, again[t]) == rewards[t]);
  }
  CHECK(run.discriminator.net().input_dim() == 2);
}

TEST_CASE("two large samples from the same gaussian read as near-identical marginals") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> normal(0.0, 0.5);
  Eigen::MatrixXd a(10000, 2), b(10000, 2);
  for (int i = 0; i < 10000; ++i) {
    a(i, 0) = normal(rng);
    a(i, 1) = normal(rng);
    b(i, 0) = normal(rng);
    b(i, 1) = normal(rng);
  }
  CHECK(marginal_js(a, b, 40) < 0.02);
}

TEST_CASE("evaluate_marginal is the histogram divergence of a seeded rollout") {
  PointMassEnv env;
  env.horizon = 15;
  GaussianPolicy policy({2, 16, 2}, Activation::Tanh, 5);
  Eigen::MatrixXd target(30, 2);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < 30; ++i) {
    target(i, 0) = normal(rng);
    target(i, 1) = normal(rng);
  }
  const double direct = evaluate_marginal(policy, env, target, 40, 6, 77);
  const double composed = marginal_js(rollout_states(env, policy, 6, 77), target, 40);
  CHECK(direct == composed);
  CHECK(direct == evaluate_marginal(policy, env, target, 40, 6, 77));
  CHECK(direct != evaluate_marginal(policy, env, target, 40, 6, 78));
}
