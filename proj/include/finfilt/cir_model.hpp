#pragma once

// K-factor Cox-Ingersoll-Ross term-structure model
//
//     dX^j = k_j (θ_j − X^j) dt + σ_j sqrt(X^j) dW^j,    r = X^1 + ... + X^K,
//
// with market prices of risk λ_j entering the risk-neutral drift through
// k_j + λ_j. Zero-coupon yields are affine in the factors,
//
//     y(T) = −(1/T) Σ_j [log φ_j(T) − ψ_j(T) X^j] = χ(T) + Ψ(T) X.

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace finfilt::cir {

struct FactorParams {
  double k = 0.5;
  double theta = 0.06;
  double sigma = 0.15;
  double lambda = 0.0;

  /// Throws std::invalid_argument unless k, θ, σ > 0 and all finite.
  void validate() const;
  /// (k + λ)² + 2σ².
  double h() const { return (k + lambda) * (k + lambda) + 2.0 * sigma * sigma; }
  /// 2kθ >= σ²: the factor stays strictly positive.
  bool feller() const { return 2.0 * k * theta >= sigma * sigma; }
  double stationary_variance() const { return sigma * sigma * theta / (2.0 * k); }
};

struct CirParams {
  std::vector<FactorParams> factors;
  /// Measurement-noise standard deviations. A single entry is broadcast to
  /// every maturity slot; otherwise slot i uses delta[i].
  std::vector<double> delta{1e-3};

  std::size_t size() const { return factors.size(); }
  void validate() const;
  bool feller() const;
  /// δ for maturity slot i; throws std::out_of_range if there is none.
  double delta_for(std::size_t slot) const;
};

struct YieldObservation {
  int t = 0;
  std::vector<double> maturities;
  std::vector<double> yields;

  std::size_t size() const { return maturities.size(); }
  /// Positive, strictly increasing maturities; matching lengths.
  void validate() const;
};

using FactorState = Eigen::VectorXd;

/// log φ(T) for one factor, evaluated without overflow for large T sqrt(h).
double log_phi(const FactorParams& f, double T);
double phi(const FactorParams& f, double T);
double psi(const FactorParams& f, double T);

double log_phi(const CirParams& p, std::size_t j, double T);
double phi(const CirParams& p, std::size_t j, double T);
double psi_fn(const CirParams& p, std::size_t j, double T);

/// log φ, ψ and their derivatives in (k, θ, σ, λ), in that order.
struct FactorSensitivity {
  double log_phi = 0.0;
  double psi = 0.0;
  std::array<double, 4> d_log_phi{};
  std::array<double, 4> d_psi{};
};

FactorSensitivity factor_sensitivity(const FactorParams& f, double T);

/// χ_i = −(1/T_i) Σ_j log φ_j(T_i), Ψ_ij = ψ_j(T_i)/T_i.
struct Loadings {
  Eigen::VectorXd chi;
  Eigen::MatrixXd psi;
};

Loadings loadings(const CirParams& p, const std::vector<double>& maturities);

double model_yield(const CirParams& p, const FactorState& x, double T);

/// E[X_{t+dt} | X_t = x] and Var[X_{t+dt} | X_t = x].
double transition_mean(const FactorParams& f, double x, double dt);
double transition_variance(const FactorParams& f, double x, double dt);

/// Rows are times 0, dt, ..., n dt; columns are factors. Exact sampling of
/// the non-central chi-squared transition (Poisson mixture of gammas).
Eigen::MatrixXd simulate_factors(const CirParams& p, const FactorState& x0, double dt,
                                 std::size_t n, std::uint64_t seed);

/// Model yields plus independent N(0, δ_i²) noise.
YieldObservation observe_yields(const CirParams& p, const FactorState& x,
                                const std::vector<double>& maturities, std::uint64_t seed,
                                int t = 0);

}  // namespace finfilt::cir
