#pragma once

// Brute-force Bayes filter for the stochastic volatility model on a uniform
// grid. Slow (O(N^2) per step) and used as the reference for the projection
// filter.

#include <cstddef>
#include <functional>
#include <vector>

#include "finfilt/expfam.hpp"
#include "finfilt/svm_filter.hpp"

namespace finfilt::oracle {

class GridDensity {
 public:
  /// Normalises `values` by the trapezoid rule. Throws std::invalid_argument
  /// for non-uniform or unsorted nodes, negative values, or zero mass.
  GridDensity(double lo, double spacing, std::vector<double> values);

  /// Density `log_f` tabulated on n uniform nodes over [lo, hi].
  static GridDensity tabulate(double lo, double hi, std::size_t n,
                              const std::function<double(double)>& log_f);

  std::size_t size() const { return values_.size(); }
  double lo() const { return lo_; }
  double hi() const { return lo_ + spacing_ * static_cast<double>(values_.size() - 1); }
  double spacing() const { return spacing_; }
  double node(std::size_t i) const { return lo_ + spacing_ * static_cast<double>(i); }
  std::vector<double> nodes() const;
  const std::vector<double>& values() const { return values_; }

  /// Trapezoid weight of node i.
  double weight(std::size_t i) const {
    return (i == 0 || i + 1 == values_.size()) ? 0.5 * spacing_ : spacing_;
  }
  double integral() const;
  /// Trapezoid ∫ g(x) d(x) dx.
  template <class F>
  double expect(F&& g) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (values_[i] > 0.0) acc += weight(i) * values_[i] * g(node(i));
    }
    return acc;
  }

  /// Trapezoid mass of the first (side < 0) or last (side > 0) `cells`
  /// intervals.
  double boundary_mass(int side, std::size_t cells) const;

 private:
  double lo_;
  double spacing_;
  std::vector<double> values_;
};

/// posterior(x) ∝ N(y; 0, e^{x+γ}) ∫ N(x; ρu, σ²) prior(u) du, normalised by
/// the trapezoid rule. The grid is extended (same spacing) while the
/// posterior mass near either boundary exceeds 1e-10. Throws DomainError
/// when every posterior value underflows.
GridDensity bayes_step(const GridDensity& prior, double y, const svm::SvmParams& params);

/// N(prior.mean, prior.variance) on `nodes` uniform nodes spanning
/// ±10 standard deviations, taking the larger of the stationary and prior
/// standard deviations.
GridDensity default_grid(const svm::SvmParams& params, const svm::GaussianPrior& prior,
                         std::size_t nodes = 4001);

expfam::MomentVector grid_moments(const GridDensity& d, int count);

/// Trapezoid D(d, q) = Σ w d (log d − log q). Throws DomainError if q
/// is not finite and positive where d is.
double kl_to_grid(const GridDensity& d, const expfam::ExpFamilyDensity& q);

/// E exp((X + γ)/2).
double volatility_estimate(const GridDensity& d, const svm::SvmParams& params);

struct OracleRun {
  std::vector<GridDensity> posteriors;
  std::vector<double> volatility;
};

OracleRun run_oracle(const std::vector<double>& observations, const svm::SvmParams& params,
                     const GridDensity& initial);

}  // namespace finfilt::oracle
