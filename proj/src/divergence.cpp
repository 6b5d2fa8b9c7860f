#include "fmil/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace fmil {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
const double kLog2 = std::log(2.0);

double clamp_ratio(double u) {
  return std::clamp(u, detail::kRatioClampLo, detail::kRatioClampHi);
}

// Contribution of one support point to sum_x q f(p/q), written in the limit
// form that stays exact as p or q approaches zero. u is p/q, possibly
// clamped by the caller; u may be +inf when q = 0.
double point_contribution(FDivergenceKind kind, double p, double q, double u) {
  switch (kind) {
    case FDivergenceKind::ReverseKL:
      if (q == 0.0) return 0.0;
      return -q * std::log(u);  // +inf when p = 0
    case FDivergenceKind::ForwardKL:
      if (p == 0.0) return 0.0;
      return p * std::log(u);  // +inf when q = 0
    case FDivergenceKind::JensenShannon: {
      // q f(u) = (p log(2u/(1+u)) + q log(2/(1+u))) / 2
      if (!std::isfinite(u)) return 0.5 * p * kLog2;
      double a = (p == 0.0) ? 0.0 : p * (kLog2 + std::log(u) - std::log1p(u));
      double b = (q == 0.0) ? 0.0 : q * (kLog2 - std::log1p(u));
      return 0.5 * (a + b);
    }
  }
  return 0.0;
}

void check_same_support(const FiniteDistribution& p, const FiniteDistribution& q) {
  if (p.size() != q.size()) {
    std::ostringstream msg;
    msg << "support sizes differ: " << p.size() << " vs " << q.size();
    throw ShapeMismatch(msg.str());
  }
}

}  // namespace

const char* kind_name(FDivergenceKind kind) {
  switch (kind) {
    case FDivergenceKind::ReverseKL: return "ReverseKL";
    case FDivergenceKind::ForwardKL: return "ForwardKL";
    case FDivergenceKind::JensenShannon: return "JensenShannon";
  }
  return "?";
}

FiniteDistribution::FiniteDistribution(Eigen::VectorXd mass) : mass_(std::move(mass)) {
  if (mass_.size() == 0) throw DomainViolation("empty distribution");
  if ((mass_.array() < 0.0).any()) throw DomainViolation("negative mass");
  double total = mass_.sum();
  if (std::abs(total - 1.0) > 1e-12) {
    std::ostringstream msg;
    msg << "mass sums to " << total << ", expected 1";
    throw DomainViolation(msg.str());
  }
}

double FDivergence::generator(double u) const {
  if (u < 0.0) throw DomainViolation("generator argument must be nonnegative");
  switch (kind_) {
    case FDivergenceKind::ReverseKL:
      return u == 0.0 ? kInf : -std::log(u);
    case FDivergenceKind::ForwardKL:
      return u == 0.0 ? 0.0 : u * std::log(u);
    case FDivergenceKind::JensenShannon: {
      double ul = u == 0.0 ? 0.0 : u * std::log(u);
      return 0.5 * (ul - (1.0 + u) * (std::log1p(u) - kLog2));
    }
  }
  return 0.0;
}

bool FDivergence::in_conjugate_domain(double t) const {
  if (!std::isfinite(t)) return false;
  switch (kind_) {
    case FDivergenceKind::ReverseKL: return t < 0.0;
    case FDivergenceKind::ForwardKL: return true;
    case FDivergenceKind::JensenShannon: return t < 0.5 * kLog2;
  }
  return false;
}

double FDivergence::conjugate_domain_sup() const {
  switch (kind_) {
    case FDivergenceKind::ReverseKL: return 0.0;
    case FDivergenceKind::ForwardKL: return kInf;
    case FDivergenceKind::JensenShannon: return 0.5 * kLog2;
  }
  return kInf;
}

double FDivergence::conjugate(double t) const {
  if (!in_conjugate_domain(t)) {
    std::ostringstream msg;
    msg << name() << " conjugate undefined at t = " << t
        << " (domain sup = " << conjugate_domain_sup() << ")";
    throw DomainViolation(msg.str());
  }
  switch (kind_) {
    case FDivergenceKind::ReverseKL:
      return -1.0 - std::log(-t);
    case FDivergenceKind::ForwardKL:
      return std::exp(t - 1.0);
    case FDivergenceKind::JensenShannon:
      // -log(2 - exp(2t))/2, written against log1p for t near the boundary
      return -0.5 * (kLog2 + std::log1p(-std::exp(2.0 * t - kLog2)));
  }
  return 0.0;
}

double FDivergence::optimal_t(double u) const {
  if (u <= 0.0) throw DomainViolation("optimal_t requires u > 0");
  switch (kind_) {
    case FDivergenceKind::ReverseKL:
      return -1.0 / u;
    case FDivergenceKind::ForwardKL:
      return 1.0 + std::log(u);
    case FDivergenceKind::JensenShannon:
      return 0.5 * (kLog2 + std::log(u) - std::log1p(u));
  }
  return 0.0;
}

double FDivergence::output_activation(double x) const {
  switch (kind_) {
    case FDivergenceKind::ReverseKL:
      return -std::exp(x);
    case FDivergenceKind::ForwardKL:
      return x;
    case FDivergenceKind::JensenShannon:
      return 0.5 * (kLog2 - detail::softplus(-x));
  }
  return x;
}

AbsoluteContinuityReport absolute_continuity_report(const FDivergence& f,
                                                    const FiniteDistribution& p,
                                                    const FiniteDistribution& q) {
  check_same_support(p, q);
  AbsoluteContinuityReport report;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    bool bad = false;
    switch (f.kind()) {
      case FDivergenceKind::ReverseKL: bad = q[i] > 0.0 && p[i] == 0.0; break;
      case FDivergenceKind::ForwardKL: bad = p[i] > 0.0 && q[i] == 0.0; break;
      case FDivergenceKind::JensenShannon: bad = false; break;
    }
    if (bad) {
      report.violated = true;
      ++report.count;
      if (report.first_index < 0) report.first_index = i;
    }
  }
  if (report.violated) {
    std::ostringstream msg;
    msg << f.name() << " is infinite: " << report.count
        << " support point(s) with zero denominator mass, first at index "
        << report.first_index;
    report.message = msg.str();
  }
  return report;
}

double eval_divergence(const FDivergence& f, const FiniteDistribution& p,
                       const FiniteDistribution& q) {
  check_same_support(p, q);
  if (absolute_continuity_report(f, p, q).violated) return kInf;
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0 && q[i] == 0.0) continue;
    double u = q[i] == 0.0 ? kInf : p[i] / q[i];
    total += point_contribution(f.kind(), p[i], q[i], u);
  }
  return total;
}

double eval_divergence_clamped(const FDivergence& f, const FiniteDistribution& p,
                               const FiniteDistribution& q) {
  check_same_support(p, q);
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0 && q[i] == 0.0) continue;
    double raw = q[i] == 0.0 ? kInf : p[i] / q[i];
    total += point_contribution(f.kind(), p[i], q[i], clamp_ratio(raw));
  }
  return total;
}

double variational_bound(const FDivergence& f, const FiniteDistribution& p,
                         const FiniteDistribution& q, const Eigen::VectorXd& t_values) {
  check_same_support(p, q);
  if (t_values.size() != p.size()) throw ShapeMismatch("t_values size mismatch");
  double bound = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    bound += p[i] * t_values[i] - q[i] * f.conjugate(t_values[i]);
  }
  return bound;
}

double forward_kl_degeneracy_check(const FiniteDistribution& p,
                                   const FiniteDistribution& q) {
  check_same_support(p, q);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if ((p[i] > 0.0) != (q[i] > 0.0)) {
      std::ostringstream msg;
      msg << "mutual absolute continuity required, violated at index " << i;
      throw AbsoluteContinuityViolation(msg.str());
    }
  }
  FDivergence fwd(FDivergenceKind::ForwardKL);
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (q[i] == 0.0) continue;
    total += q[i] * fwd.conjugate(fwd.optimal_t(p[i] / q[i]));
  }
  return total;
}

namespace detail {

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace detail

}  // namespace fmil
