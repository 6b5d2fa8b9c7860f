#pragma once

#include <Eigen/Dense>
#include <string>

#include "fmil/errors.hpp"

namespace fmil {

enum class FDivergenceKind { ReverseKL, ForwardKL, JensenShannon };

const char* kind_name(FDivergenceKind kind);

/// Probability mass vector on a finite support. Entries must be nonnegative
/// and sum to 1 within 1e-12.
class FiniteDistribution {
 public:
  explicit FiniteDistribution(Eigen::VectorXd mass);

  const Eigen::VectorXd& mass() const { return mass_; }
  Eigen::Index size() const { return mass_.size(); }
  double operator[](Eigen::Index i) const { return mass_[i]; }

 private:
  Eigen::VectorXd mass_;
};

/**
 * Convex generator f with f(1) = 0, its convex conjugate f*, the conjugate
 * domain, the ratio-optimal dual point t = f'(u), and an activation mapping
 * an unconstrained real into the conjugate domain.
 *
 * Conventions (natural log everywhere):
 *   ReverseKL      f(u) = -log u          D_f(p||q) = KL(q||p)
 *   ForwardKL      f(u) = u log u         D_f(p||q) = KL(p||q)
 *   JensenShannon  f(u) = (u log u - (1+u) log((1+u)/2)) / 2
 *                  D_f(p||q) = (KL(p||m) + KL(q||m)) / 2, m = (p+q)/2,
 *                  without the factor-2 rescaling, so the maximum is log 2.
 *                  The conjugate and activation are scaled to match this
 *                  normalization: half of the unscaled pair, domain t < log(2)/2.
 */
class FDivergence {
 public:
  explicit FDivergence(FDivergenceKind kind) : kind_(kind) {}

  FDivergenceKind kind() const { return kind_; }
  const char* name() const { return kind_name(kind_); }

  double generator(double u) const;
  /// f*(t); throws DomainViolation outside the conjugate domain.
  double conjugate(double t) const;
  bool in_conjugate_domain(double t) const;
  /// Supremum of the (open) conjugate domain; +inf for ForwardKL.
  double conjugate_domain_sup() const;
  /// Maximizer of u t - f*(t) over the domain, equal to f'(u).
  double optimal_t(double u) const;
  /// Maps any real into the conjugate domain.
  double output_activation(double x) const;

 private:
  FDivergenceKind kind_;
};

struct AbsoluteContinuityReport {
  bool violated = false;
  Eigen::Index count = 0;
  Eigen::Index first_index = -1;
  std::string message;
};

/// Indices where D_f(p||q) is genuinely infinite for the given generator.
AbsoluteContinuityReport absolute_continuity_report(const FDivergence& f,
                                                    const FiniteDistribution& p,
                                                    const FiniteDistribution& q);

/// D_f(p||q) = sum_x q(x) f(p(x)/q(x)) with exact zero-mass limits.
/// Returns +inf when the divergence is infinite (see
/// absolute_continuity_report for the diagnostic).
double eval_divergence(const FDivergence& f, const FiniteDistribution& p,
                       const FiniteDistribution& q);

/// As eval_divergence but with density ratios clamped to [1e-12, 1e12];
/// always finite. Used for training-time diagnostics.
double eval_divergence_clamped(const FDivergence& f, const FiniteDistribution& p,
                               const FiniteDistribution& q);

/// Variational lower bound E_p[T] - E_q[f*(T)] for per-point dual values.
/// Throws DomainViolation if any t is outside the conjugate domain.
double variational_bound(const FDivergence& f, const FiniteDistribution& p,
                         const FiniteDistribution& q, const Eigen::VectorXd& t_values);

/// E_q[f*(T*)] for the forward-KL conjugate at the ratio-optimal T*.
/// Identically 1 for mutually absolutely continuous pairs, demonstrating
/// that the plug-in forward-KL objective carries no training signal.
double forward_kl_degeneracy_check(const FiniteDistribution& p,
                                   const FiniteDistribution& q);

namespace detail {
constexpr double kRatioClampLo = 1e-12;
constexpr double kRatioClampHi = 1e12;
double softplus(double x);
}  // namespace detail

}  // namespace fmil
