#pragma once

// Log-autoregressive stochastic volatility model
//
//     X_{t+1} = ρ X_t + σ W_{t+1},    Y_t = exp((X_t + γ)/2) V_t,
//
// and its projection filter on EP(m): the Bayes recursion is applied to the
// current exponential-family density and the result is projected back by
// matching moments.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "finfilt/expfam.hpp"

namespace finfilt::svm {

struct SvmParams {
  double rho = 0.95;
  double sigma = 0.26;
  double gamma = -9.0;

  /// Throws std::invalid_argument for σ <= 0 or non-finite values.
  void validate() const;
  /// |ρ| < 1. The formulas do not need it; callers may want to warn.
  bool stationary() const { return rho > -1.0 && rho < 1.0; }
  /// σ² / (1 − ρ²); +inf when not stationary.
  double stationary_variance() const;
};

/// N(mean, variance); variance 0 is a point mass.
struct GaussianPrior {
  double mean = 0.0;
  double variance = 10.0;
};

struct SvmPath {
  std::vector<double> x;
  std::vector<double> y;
  std::uint64_t seed = 0;
};

SvmPath simulate_svm(const SvmParams& params, std::size_t n, const GaussianPrior& x0,
                     std::uint64_t seed);

enum class RecoveryMode {
  /// m moments, θ by damped Newton.
  moments_m,
  /// 2m moments, algebraic θ refined by Newton on the first m.
  moments_2m,
};

std::string to_string(RecoveryMode mode);
RecoveryMode parse_recovery_mode(const std::string& text);

class ProjFilterState {
 public:
  ProjFilterState(int time, double log_mass, std::vector<double> eta, expfam::Theta theta,
                  RecoveryMode mode, double residual = 0.0);

  int time() const { return time_; }
  int order() const { return static_cast<int>(theta_.size()); }
  RecoveryMode mode() const { return mode_; }
  const expfam::Theta& theta() const { return theta_; }

  /// log α_0; kept in log form because the unnormalised recursion drifts.
  double log_mass() const { return log_mass_; }
  /// η_1..η_K, K = m or 2m.
  const std::vector<double>& eta() const { return eta_; }
  /// (α_0, ..., α_K).
  expfam::MomentVector alpha() const;

  /// max_i |η_i − E_θ x^i| / (1 + |η_i|), i <= m, at the last recovery.
  double conversion_residual() const { return residual_; }

  const expfam::ExpFamilyDensity& density() const { return density_; }

 private:
  int time_;
  double log_mass_;
  std::vector<double> eta_;
  expfam::Theta theta_;
  RecoveryMode mode_;
  double residual_;
  expfam::ExpFamilyDensity density_;
};

/// α_0(0) = 1, α_i(0) = η_i(θ).
ProjFilterState initial_state(const expfam::Theta& theta, RecoveryMode mode);

/// N(prior.mean, prior.variance) on EP(order) (a tiny negative leading term
/// keeps it inside the family when order > 2).
ProjFilterState initial_state(const GaussianPrior& prior, int order, RecoveryMode mode);

/// Unnormalised one-step recursion followed by θ recovery. Throws
/// QuadratureError / NumericalError subclasses on failure.
ProjFilterState projection_step(const ProjFilterState& state, double y, const SvmParams& params);

/// E exp((X + γ)/2) under the state density.
double volatility_estimate(const ProjFilterState& state, const SvmParams& params);

struct FilterRecord {
  ProjFilterState state;
  double volatility;
};

struct FilterRun {
  std::vector<FilterRecord> records;
  /// Index into the observation vector of the first failing step.
  std::optional<std::size_t> failed_at;
  std::string error;
};

/// Folds projection_step over the observations starting from `initial`,
/// which describes the state one period before the first observation.
/// Stops at the first failure and returns what was computed.
FilterRun run_filter(const std::vector<double>& observations, const SvmParams& params,
                     const ProjFilterState& initial);

}  // namespace finfilt::svm
