#pragma once

// Quasi-maximum-likelihood filtering for the CIR yield model: exact
// conditional moments in the prediction step, a Gaussian (Kalman)
// correction with the factor means clipped at zero, the Gaussian innovation
// likelihood, and an extended Kalman filter on the state augmented with the
// model parameters.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "finfilt/cir_model.hpp"

namespace finfilt::cir {

enum class Stage { predicted, corrected };

struct KalmanState {
  Eigen::VectorXd xhat;
  Eigen::MatrixXd v;
  Stage stage = Stage::corrected;
  int time = 0;
};

/// X̂ = θ, V = diag(σ²θ/(2k)); stage corrected, time 0.
KalmanState stationary_state(const CirParams& params);

/// Conditional mean and variance of each factor over dt; cross covariances
/// decay by e^{−(k_i + k_j) dt}.
KalmanState predict(const KalmanState& state, const CirParams& params, double dt = 1.0);

enum class CorrectionForm {
  /// Information form when V is positive definite, gain form otherwise.
  automatic,
  /// V⁺ = V − VΨᵀS⁻¹ΨV (Joseph-stabilised).
  gain,
  /// V⁺ = (ΨᵀΔ⁻²Ψ + V⁻¹)⁻¹; throws if V is singular.
  information,
};

/// X̂⁺ = {X̂ + VΨᵀS⁻¹(Y − χ − ΨX̂)}⁺ with S = ΨVΨᵀ + Δ².
KalmanState correct(const KalmanState& state, const YieldObservation& obs, const CirParams& params,
                    CorrectionForm form = CorrectionForm::automatic);

/// log N(Y − χ − ΨX̂; 0, S).
double innovation_loglik(const KalmanState& state, const YieldObservation& obs,
                         const CirParams& params);

struct StepTrace {
  int t = 0;
  Eigen::VectorXd xhat;
  Eigen::VectorXd v_diag;
  Eigen::VectorXd innovation;
  double loglik = 0.0;
};

struct LoglikTrace {
  double loglik = 0.0;
  std::vector<StepTrace> steps;
  std::optional<std::size_t> failed_at;
  std::string error;
};

/// Predict, score, correct for every observation, starting from a corrected
/// state one interval before the first observation. Stops at the first
/// failure.
LoglikTrace quasi_loglik_trace(const std::vector<YieldObservation>& panel, const CirParams& beta,
                               const KalmanState& init, double dt = 1.0);

/// Sum of the innovation log-likelihoods; throws NumericalError naming the
/// failing step.
double quasi_loglik(const std::vector<YieldObservation>& panel, const CirParams& beta,
                    const KalmanState& init, double dt = 1.0);

struct QmlOptions {
  double dt = 1.0;
  int max_evaluations = 6000;
  int restarts = 3;
  double ftol = 1e-7;
  /// Initial simplex edge in the transformed coordinates.
  double initial_step = 0.3;
};

struct QmlEstimate {
  CirParams beta;
  double loglik = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

/// Maximises quasi_loglik (initialised at the stationary state of each
/// candidate) over log k, log θ, log σ, λ and log δ by Nelder-Mead.
QmlEstimate estimate_qml(const std::vector<YieldObservation>& panel, const CirParams& beta0,
                         const QmlOptions& options = {});

/// Yield map Jacobian at (params, x) for the augmented layout: columns are
/// the K factors, then k, θ, σ, λ (K each), then the δ slots (all zero).
Eigen::MatrixXd yield_map_jacobian(const CirParams& params, const FactorState& x,
                                   const std::vector<double>& maturities);

struct AugmentedState {
  /// Layout: factors, k's, θ's, σ's, λ's, δ's.
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::size_t factors = 1;
  std::size_t delta_slots = 1;
  int time = 0;
  /// Set when a factor mean or parameter mean had to be moved back into the
  /// feasible region.
  bool clamped = false;

  CirParams params() const;
  FactorState factor_mean() const { return mean.head(static_cast<Eigen::Index>(factors)); }
};

/// Factors from `factors`, parameters from `params` with the given prior
/// variances (zero pins a parameter block).
AugmentedState make_augmented(const CirParams& params, const KalmanState& factors,
                              const Eigen::VectorXd& parameter_variances);

/// Time update over dt (drift ODE, linearised covariance, CIR conditional
/// variance as process noise), then the linearised measurement update.
AugmentedState augmented_ekf_step(const AugmentedState& state, const YieldObservation& obs,
                                  double dt = 1.0);

}  // namespace finfilt::cir
