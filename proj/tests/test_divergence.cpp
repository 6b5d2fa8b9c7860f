#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "fmil/divergence.hpp"

using fmil::FDivergence;
using fmil::FDivergenceKind;
using fmil::FiniteDistribution;
using Eigen::VectorXd;

namespace {

// Direct-summation KL oracle, independent of the library implementation.
double kl_oracle(const VectorXd& a, const VectorXd& b) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a[i] == 0.0) continue;
    if (b[i] == 0.0) return std::numeric_limits<double>::infinity();
    total += a[i] * std::log(a[i] / b[i]);
  }
  return total;
}

double js_oracle(const VectorXd& p, const VectorXd& q) {
  VectorXd m = 0.5 * (p + q);
  return 0.5 * kl_oracle(p, m) + 0.5 * kl_oracle(q, m);
}

// Numeric conjugate oracle: golden-section maximization of u*t - f(u) on a
// wide log-u bracket.
double conjugate_oracle(const FDivergence& f, double t) {
  double lo = std::log(1e-9), hi = std::log(1e9);
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  auto value = [&](double logu) {
    double u = std::exp(logu);
    return u * t - f.generator(u);
  };
  double a = lo, b = hi;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  for (int it = 0; it < 400; ++it) {
    if (value(c) > value(d)) b = d; else a = c;
    c = b - phi * (b - a);
    d = a + phi * (b - a);
  }
  return value(0.5 * (a + b));
}

VectorXd random_simplex(std::mt19937_64& rng, int n, double floor = 1e-3) {
  std::uniform_real_distribution<double> unif(floor, 1.0);
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = unif(rng);
  v /= v.sum();
  return v;
}

const FDivergence kRkl(FDivergenceKind::ReverseKL);
const FDivergence kFkl(FDivergenceKind::ForwardKL);
const FDivergence kJs(FDivergenceKind::JensenShannon);

}  // namespace

TEST_CASE("reverse KL evaluates as KL(q||p)") {
  VectorXd p(2), q(2);
  p << 0.5, 0.5;
  q << 0.25, 0.75;
  double oracle = kl_oracle(q, p);
  CHECK(oracle == doctest::Approx(0.13081203594113698).epsilon(1e-12));
  double got = fmil::eval_divergence(kRkl, FiniteDistribution(p), FiniteDistribution(q));
  CHECK(got == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("forward KL evaluates as KL(p||q)") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    int n = 2 + int(rng() % 7);
    VectorXd p = random_simplex(rng, n), q = random_simplex(rng, n);
    double got = fmil::eval_divergence(kFkl, FiniteDistribution(p), FiniteDistribution(q));
    CHECK(got == doctest::Approx(kl_oracle(p, q)).epsilon(1e-12));
  }
}

TEST_CASE("Jensen-Shannon uses the half-sum mixture convention") {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 50; ++rep) {
    int n = 2 + int(rng() % 7);
    VectorXd p = random_simplex(rng, n), q = random_simplex(rng, n);
    double got = fmil::eval_divergence(kJs, FiniteDistribution(p), FiniteDistribution(q));
    CHECK(got == doctest::Approx(js_oracle(p, q)).epsilon(1e-10));
    double sym = fmil::eval_divergence(kJs, FiniteDistribution(q), FiniteDistribution(p));
    CHECK(got == doctest::Approx(sym).epsilon(1e-12));
    CHECK(got <= std::log(2.0) + 1e-12);
  }
}

TEST_CASE("Jensen-Shannon on disjoint supports is log 2") {
  VectorXd p(2), q(2);
  p << 1.0, 0.0;
  q << 0.0, 1.0;
  double got = fmil::eval_divergence(kJs, FiniteDistribution(p), FiniteDistribution(q));
  CHECK(got == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("generators are convex with f(1) = 0") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> unif(0.01, 20.0);
  for (const auto& f : {kRkl, kFkl, kJs}) {
    CHECK(f.generator(1.0) == doctest::Approx(0.0).epsilon(1e-15));
    for (int rep = 0; rep < 200; ++rep) {
      double a = unif(rng), b = unif(rng);
      double mid = 0.5 * (a + b);
      CHECK(f.generator(mid) <= 0.5 * f.generator(a) + 0.5 * f.generator(b) + 1e-12);
    }
  }
}

TEST_CASE("conjugate matches the numeric supremum oracle") {
  CHECK(conjugate_oracle(kRkl, -1.0) == doctest::Approx(-1.0).epsilon(1e-8));
  CHECK(kRkl.conjugate(-1.0) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(kFkl.conjugate(1.0) == doctest::Approx(1.0).epsilon(1e-15));

  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (const auto& f : {kRkl, kFkl, kJs}) {
    for (int rep = 0; rep < 20; ++rep) {
      double sup = f.conjugate_domain_sup();
      double t = std::isfinite(sup) ? sup - 0.05 - 3.0 * unif(rng) : -3.0 + 6.0 * unif(rng);
      CHECK(f.conjugate(t) == doctest::Approx(conjugate_oracle(f, t)).epsilon(1e-6));
    }
  }
}

TEST_CASE("conjugate rejects points outside its domain") {
  CHECK_THROWS_AS(kRkl.conjugate(0.0), fmil::DomainViolation);
  CHECK_THROWS_AS(kRkl.conjugate(0.5), fmil::DomainViolation);
  CHECK_THROWS_AS(kJs.conjugate(std::log(2.0)), fmil::DomainViolation);
  CHECK_NOTHROW(kFkl.conjugate(40.0));
  CHECK_NOTHROW(kFkl.conjugate(-40.0));
}

TEST_CASE("Fenchel identity f*(f'(u)) = u f'(u) - f(u)") {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> logu(-4.0, 4.0);
  for (const auto& f : {kRkl, kFkl, kJs}) {
    for (int rep = 0; rep < 200; ++rep) {
      double u = std::exp(logu(rng));
      double t = f.optimal_t(u);
      CHECK(f.in_conjugate_domain(t));
      double lhs = f.conjugate(t);
      double rhs = u * t - f.generator(u);
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));
    }
  }
}

TEST_CASE("optimal_t matches the numeric derivative of the generator") {
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> logu(-2.0, 2.0);
  for (const auto& f : {kRkl, kFkl, kJs}) {
    for (int rep = 0; rep < 50; ++rep) {
      double u = std::exp(logu(rng));
      double h = 1e-6 * std::max(1.0, u);
      double fd = (f.generator(u + h) - f.generator(u - h)) / (2.0 * h);
      CHECK(f.optimal_t(u) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("output activation always lands in the conjugate domain") {
  for (const auto& f : {kRkl, kFkl, kJs}) {
    for (double x = -30.0; x <= 30.0; x += 0.37) {
      CHECK(f.in_conjugate_domain(f.output_activation(x)));
    }
  }
}

TEST_CASE("variational bound is tight at the ratio-optimal dual point") {
  std::mt19937_64 rng(17);
  for (const auto& f : {kRkl, kFkl, kJs}) {
    for (int rep = 0; rep < 100; ++rep) {
      int n = 2 + int(rng() % 9);
      VectorXd pv = random_simplex(rng, n), qv = random_simplex(rng, n);
      FiniteDistribution p(pv), q(qv);
      VectorXd t(n);
      for (int i = 0; i < n; ++i) t[i] = f.optimal_t(pv[i] / qv[i]);
      double bound = fmil::variational_bound(f, p, q, t);
      double dv = fmil::eval_divergence(f, p, q);
      CHECK(std::abs(bound - dv) < 1e-9);
    }
  }
}

TEST_CASE("suboptimal dual points never exceed the divergence") {
  std::mt19937_64 rng(18);
  std::normal_distribution<double> noise(0.0, 0.3);
  for (const auto& f : {kRkl, kFkl, kJs}) {
    for (int rep = 0; rep < 100; ++rep) {
      int n = 2 + int(rng() % 9);
      VectorXd pv = random_simplex(rng, n), qv = random_simplex(rng, n);
      FiniteDistribution p(pv), q(qv);
      VectorXd t(n);
      for (int i = 0; i < n; ++i) {
        double opt = f.optimal_t(pv[i] / qv[i]);
        double eps = noise(rng);
        // Perturb within the domain: multiplicatively for the strictly
        // negative reverse-KL duals, downward shift otherwise.
        if (f.kind() == FDivergenceKind::ReverseKL) {
          t[i] = opt * std::exp(eps);
        } else if (f.kind() == FDivergenceKind::JensenShannon) {
          t[i] = opt - std::abs(eps);
        } else {
          t[i] = opt + eps;
        }
      }
      double bound = fmil::variational_bound(f, p, q, t);
      double dv = fmil::eval_divergence(f, p, q);
      CHECK(bound <= dv + 1e-9);
    }
  }
}

TEST_CASE("variational bound rejects out-of-domain duals") {
  VectorXd pv(2), qv(2);
  pv << 0.4, 0.6;
  qv << 0.7, 0.3;
  FiniteDistribution p(pv), q(qv);
  VectorXd t(2);
  t << 0.5, -1.0;
  CHECK_THROWS_AS(fmil::variational_bound(kRkl, p, q, t), fmil::DomainViolation);
}

TEST_CASE("forward KL plug-in objective is identically 1") {
  std::mt19937_64 rng(19);
  for (int rep = 0; rep < 100; ++rep) {
    int n = 2 + int(rng() % 9);
    VectorXd pv = random_simplex(rng, n), qv = random_simplex(rng, n);
    double v = fmil::forward_kl_degeneracy_check(FiniteDistribution(pv), FiniteDistribution(qv));
    CHECK(std::abs(v - 1.0) < 1e-9);
  }
}

TEST_CASE("degeneracy check requires mutual absolute continuity") {
  VectorXd pv(3), qv(3);
  pv << 0.5, 0.5, 0.0;
  qv << 0.25, 0.25, 0.5;
  CHECK_THROWS_AS(
      fmil::forward_kl_degeneracy_check(FiniteDistribution(pv), FiniteDistribution(qv)),
      fmil::AbsoluteContinuityViolation);
}

TEST_CASE("infinite divergences return the +inf sentinel with a diagnostic") {
  VectorXd pv(3), qv(3);
  pv << 0.5, 0.5, 0.0;
  qv << 0.25, 0.25, 0.5;
  FiniteDistribution p(pv), q(qv);

  // q has mass where p has none: KL(q||p) infinite.
  double rkl = fmil::eval_divergence(kRkl, p, q);
  CHECK(std::isinf(rkl));
  auto report = fmil::absolute_continuity_report(kRkl, p, q);
  CHECK(report.violated);
  CHECK(report.count == 1);
  CHECK(report.first_index == 2);
  CHECK(!report.message.empty());

  // Swapped roles: forward KL infinite, reverse KL finite.
  CHECK(std::isinf(fmil::eval_divergence(kFkl, q, p)));
  CHECK(std::isfinite(fmil::eval_divergence(kRkl, q, p)));
  CHECK(std::isfinite(fmil::eval_divergence(kJs, p, q)));
}

TEST_CASE("clamped evaluation stays finite and matches exact values inside the clamp") {
  VectorXd pv(3), qv(3);
  pv << 0.5, 0.5, 0.0;
  qv << 0.25, 0.25, 0.5;
  FiniteDistribution p(pv), q(qv);
  double clamped = fmil::eval_divergence_clamped(kRkl, p, q);
  CHECK(std::isfinite(clamped));
  // The zero-mass point contributes -q log(1e-12).
  double expect = 0.25 * std::log(0.25 / 0.5) + 0.25 * std::log(0.25 / 0.5) +
                  0.5 * -std::log(1e-12);
  CHECK(clamped == doctest::Approx(expect).epsilon(1e-12));

  std::mt19937_64 rng(20);
  for (int rep = 0; rep < 50; ++rep) {
    int n = 2 + int(rng() % 7);
    VectorXd a = random_simplex(rng, n), b = random_simplex(rng, n);
    for (const auto& f : {kRkl, kFkl, kJs}) {
      double ev = fmil::eval_divergence(f, FiniteDistribution(a), FiniteDistribution(b));
      double cl = fmil::eval_divergence_clamped(f, FiniteDistribution(a), FiniteDistribution(b));
      CHECK(cl == doctest::Approx(ev).epsilon(1e-12));
    }
  }
}

TEST_CASE("distribution and shape validation") {
  VectorXd bad(2);
  bad << 0.5, 0.6;
  CHECK_THROWS_AS(FiniteDistribution{bad}, fmil::DomainViolation);
  VectorXd neg(2);
  neg << -0.1, 1.1;
  CHECK_THROWS_AS(FiniteDistribution{neg}, fmil::DomainViolation);

  VectorXd p2(2), q3(3);
  p2 << 0.5, 0.5;
  q3 << 0.4, 0.3, 0.3;
  CHECK_THROWS_AS(
      fmil::eval_divergence(kRkl, FiniteDistribution(p2), FiniteDistribution(q3)),
      fmil::ShapeMismatch);
}

TEST_CASE("divergences vanish iff the arguments coincide") {
  std::mt19937_64 rng(21);
  for (const auto& f : {kRkl, kFkl, kJs}) {
    for (int rep = 0; rep < 20; ++rep) {
      int n = 2 + int(rng() % 9);
      VectorXd pv = random_simplex(rng, n);
      CHECK(fmil::eval_divergence(f, FiniteDistribution(pv), FiniteDistribution(pv)) ==
            doctest::Approx(0.0).epsilon(1e-12));
      VectorXd qv = random_simplex(rng, n);
      if ((pv - qv).cwiseAbs().maxCoeff() > 1e-3) {
        CHECK(fmil::eval_divergence(f, FiniteDistribution(pv), FiniteDistribution(qv)) > 0.0);
      }
    }
  }
}
