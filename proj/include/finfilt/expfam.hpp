#pragma once

// Polynomial exponential families
//
//     p(x, θ) = exp(θ_1 x + ... + θ_m x^m − ψ(θ)),   m even, θ_m < 0,
//
// their moments (expectation parameters η_j = E x^j), conversions between
// canonical and expectation coordinates, and Kullback–Leibler machinery.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "finfilt/quadrature.hpp"

namespace finfilt::expfam {

using Theta = std::vector<double>;

/// Leading coefficients in [-kNearBoundary, 0) are accepted but flagged.
inline constexpr double kNearBoundary = 1e-8;

/// Expectation parameters. Normalized: (η_1, ..., η_K). Unnormalized:
/// (α_0, α_1, ..., α_K) with η_j = α_j / α_0.
struct MomentVector {
  std::vector<double> values;
  bool normalized = true;

  /// Checks α_0 > 0 or, for normalized vectors, η_2 >= η_1^2.
  void validate() const;
  /// Normalized copy.
  MomentVector normalize() const;
  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
};

/// M(η)_{ij} = η_{i+j}, i, j = 1..m, built from 2m normalized moments.
class HankelMatrix {
 public:
  explicit HankelMatrix(const MomentVector& moments);

  const Eigen::MatrixXd& entries() const { return entries_; }
  int order() const { return static_cast<int>(entries_.rows()); }
  double min_eigenvalue() const;
  /// λ_max / λ_min, +inf when not positive definite.
  double condition() const;

 private:
  Eigen::MatrixXd entries_;
};

class ExpFamilyDensity {
 public:
  /// Throws std::invalid_argument for odd/short order or θ_m >= 0, and
  /// QuadratureError if the normalizer cannot be computed.
  explicit ExpFamilyDensity(Theta theta, const quad::Options& options = {});

  int order() const { return static_cast<int>(theta_.size()); }
  const Theta& theta() const { return theta_; }
  double log_normalizer() const { return psi_; }
  bool near_boundary() const { return theta_.back() >= -kNearBoundary; }

  double log_density(double x) const;
  double density(double x) const;

  /// (η_1, ..., η_K) by the shared rule.
  MomentVector moments(int count) const;
  /// Covariance of (x, ..., x^m): the Fisher information in θ.
  Eigen::MatrixXd fisher() const;

  const quad::NodeRule& rule() const { return *rule_; }

 private:
  Theta theta_;
  double psi_ = 0.0;
  std::shared_ptr<const quad::NodeRule> rule_;
};

/// Log-density with a suggested support window; shared by closed-form
/// densities, grid densities and members of EP(m).
struct DensityEvaluator {
  std::function<double(double)> log_density;
  double lo = -10.0;
  double hi = 10.0;
};

DensityEvaluator evaluator(const ExpFamilyDensity& q);

double log_normalizer(const Theta& theta);

MomentVector moments_from_theta(const Theta& theta, int count);

struct AlgebraicOptions {
  double max_condition = 1e8;
  bool tikhonov = false;
};

/// Solves [θ_1, 2θ_2, ..., mθ_m]^T = −M(η)^{-1} [2η_1, 3η_2, ..., (m+1)η_m]^T.
/// Throws IllConditionedError when cond M(η) exceeds the threshold or the
/// moments are degenerate (singular full Hankel matrix), and BoundaryError
/// when the solve returns θ_m >= 0.
Theta theta_from_moments_algebraic(const MomentVector& moments,
                                   const AlgebraicOptions& options = {});

struct NewtonOptions {
  double tolerance = 1e-9;
  int max_iterations = 200;
};

struct NewtonReport {
  Theta theta;
  int iterations = 0;
  double residual = 0.0;
  /// Smallest eigenvalue and largest |F - F^T| entry over all iterates.
  double min_fisher_eigenvalue = 0.0;
  double max_fisher_asymmetry = 0.0;
};

/// Damped Newton on the convex dual ψ(θ) − θ·η; the Jacobian of the moment
/// map is the Fisher matrix. Throws ConvergenceError or BoundaryError.
NewtonReport newton_moment_match(const MomentVector& moments, const Theta& initial,
                                 const NewtonOptions& options = {});

Theta theta_from_moments_iterative(const MomentVector& moments, const Theta& initial,
                                   const NewtonOptions& options = {});

/// Fallback when Newton stalls near the boundary: minimises the dual by
/// Nelder-Mead in standardised coordinates with θ_m = −e^a, then polishes
/// with Newton. Slower; needs no starting point.
Theta theta_from_moments_dual(const MomentVector& moments, const NewtonOptions& options = {});

/// Throws DomainError when p does not integrate to one over what the
/// quadrature sees.
double kl_divergence(const DensityEvaluator& p, const ExpFamilyDensity& q);

/// Member of EP(order) sharing the first `order` moments of p.
ExpFamilyDensity kl_project(const DensityEvaluator& p, int order,
                            const NewtonOptions& options = {});

double expectation(const ExpFamilyDensity& q, const std::function<double(double)>& f);

/// θ of N(mean, variance) padded with zeros to `order` (the last entry is
/// set to a tiny negative value for order > 2 to stay inside EP(order)).
Theta gaussian_theta(double mean, double variance, int order = 2);

}  // namespace finfilt::expfam
