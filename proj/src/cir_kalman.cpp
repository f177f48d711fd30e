#include "finfilt/cir_kalman.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "finfilt/error.hpp"
#include "finfilt/nelder_mead.hpp"

namespace finfilt::cir {

namespace {

constexpr double kFeasibilityFloor = 1e-8;

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

Eigen::VectorXd noise_variances(const CirParams& params, std::size_t n) {
  Eigen::VectorXd d2(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double d = params.delta_for(i);
    d2[static_cast<Eigen::Index>(i)] = d * d;
  }
  return d2;
}

void check_dimensions(const KalmanState& state, const CirParams& params) {
  const auto k = static_cast<Eigen::Index>(params.size());
  if (state.xhat.size() != k || state.v.rows() != k || state.v.cols() != k) {
    throw std::invalid_argument("Kalman state dimension does not match the number of factors");
  }
}

struct Innovation {
  Eigen::VectorXd residual;
  Eigen::MatrixXd psi;
  Eigen::VectorXd d2;
  Eigen::MatrixXd s;
  Eigen::LLT<Eigen::MatrixXd> s_llt;
};

Innovation innovation(const KalmanState& state, const YieldObservation& obs, const CirParams& params) {
  if (state.stage != Stage::predicted) {
    throw std::invalid_argument("correction needs a predicted Kalman state");
  }
  check_dimensions(state, params);
  obs.validate();
  const Loadings l = loadings(params, obs.maturities);
  Innovation in;
  in.psi = l.psi;
  in.d2 = noise_variances(params, obs.size());
  const Eigen::Map<const Eigen::VectorXd> y(obs.yields.data(), static_cast<Eigen::Index>(obs.size()));
  in.residual = y - l.chi - l.psi * state.xhat;
  in.s = symmetrize(l.psi * state.v * l.psi.transpose());
  in.s.diagonal() += in.d2;
  in.s_llt.compute(in.s);
  if (in.s_llt.info() != Eigen::Success) {
    throw NumericalError("innovation covariance is not positive definite at t = " +
                         std::to_string(obs.t));
  }
  return in;
}

bool well_conditioned_pd(const Eigen::MatrixXd& v) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  return lo > 0.0 && hi / lo < 1e8;
}

}  // namespace

KalmanState stationary_state(const CirParams& params) {
  params.validate();
  const auto k = static_cast<Eigen::Index>(params.size());
  KalmanState s;
  s.xhat.resize(k);
  s.v = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const FactorParams& f = params.factors[static_cast<std::size_t>(j)];
    s.xhat[j] = f.theta;
    s.v(j, j) = f.stationary_variance();
  }
  return s;
}

KalmanState predict(const KalmanState& state, const CirParams& params, double dt) {
  if (state.stage != Stage::corrected) throw std::invalid_argument("predict needs a corrected state");
  if (!(dt > 0.0)) throw std::invalid_argument("predict: dt must be positive");
  check_dimensions(state, params);
  const auto k = static_cast<Eigen::Index>(params.size());
  Eigen::VectorXd e(k);
  KalmanState out;
  out.xhat.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const FactorParams& f = params.factors[static_cast<std::size_t>(j)];
    e[j] = std::exp(-f.k * dt);
    out.xhat[j] = transition_mean(f, state.xhat[j], dt);
  }
  out.v = symmetrize(e.asDiagonal() * state.v * e.asDiagonal());
  for (Eigen::Index j = 0; j < k; ++j) {
    out.v(j, j) += transition_variance(params.factors[static_cast<std::size_t>(j)], state.xhat[j], dt);
  }
  out.stage = Stage::predicted;
  out.time = state.time + 1;
  return out;
}

KalmanState correct(const KalmanState& state, const YieldObservation& obs, const CirParams& params,
                    CorrectionForm form) {
  const Innovation in = innovation(state, obs, params);
  const Eigen::MatrixXd gain = in.s_llt.solve(in.psi * state.v).transpose();

  KalmanState out;
  out.xhat = (state.xhat + gain * in.residual).cwiseMax(0.0);
  out.stage = Stage::corrected;
  out.time = state.time;

  if (form == CorrectionForm::automatic) {
    form = well_conditioned_pd(state.v) ? CorrectionForm::information : CorrectionForm::gain;
  }
  if (form == CorrectionForm::information) {
    Eigen::LLT<Eigen::MatrixXd> v_llt(state.v);
    if (v_llt.info() != Eigen::Success) {
      throw NumericalError("information-form correction needs a positive definite V");
    }
    const auto k = state.v.rows();
    Eigen::MatrixXd info = v_llt.solve(Eigen::MatrixXd::Identity(k, k));
    info += in.psi.transpose() * in.d2.cwiseInverse().asDiagonal() * in.psi;
    Eigen::LLT<Eigen::MatrixXd> info_llt(symmetrize(info));
    out.v = symmetrize(info_llt.solve(Eigen::MatrixXd::Identity(k, k)));
  } else {
    const auto k = state.v.rows();
    const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(k, k) - gain * in.psi;
    out.v = symmetrize(a * state.v * a.transpose() + gain * in.d2.asDiagonal() * gain.transpose());
  }
  return out;
}

double innovation_loglik(const KalmanState& state, const YieldObservation& obs,
                         const CirParams& params) {
  const Innovation in = innovation(state, obs, params);
  const Eigen::MatrixXd& l = in.s_llt.matrixL();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  const Eigen::VectorXd z = in.s_llt.matrixL().solve(in.residual);
  const double n = static_cast<double>(obs.size());
  return -0.5 * (n * std::log(2.0 * std::numbers::pi) + log_det + z.squaredNorm());
}

LoglikTrace quasi_loglik_trace(const std::vector<YieldObservation>& panel, const CirParams& beta,
                               const KalmanState& init, double dt) {
  if (panel.empty()) throw std::invalid_argument("quasi_loglik: empty panel");
  beta.validate();
  LoglikTrace trace;
  KalmanState current = init;
  current.stage = Stage::corrected;
  for (std::size_t t = 0; t < panel.size(); ++t) {
    try {
      const KalmanState predicted = predict(current, beta, dt);
      const double ll = innovation_loglik(predicted, panel[t], beta);
      const Loadings l = loadings(beta, panel[t].maturities);
      const Eigen::Map<const Eigen::VectorXd> y(panel[t].yields.data(),
                                                static_cast<Eigen::Index>(panel[t].size()));
      StepTrace step;
      step.t = panel[t].t;
      step.innovation = y - l.chi - l.psi * predicted.xhat;
      current = correct(predicted, panel[t], beta);
      step.xhat = current.xhat;
      step.v_diag = current.v.diagonal();
      step.loglik = ll;
      trace.loglik += ll;
      trace.steps.push_back(std::move(step));
    } catch (const std::exception& e) {
      trace.failed_at = t;
      trace.error = "step " + std::to_string(t) + ": " + e.what();
      break;
    }
  }
  return trace;
}

double quasi_loglik(const std::vector<YieldObservation>& panel, const CirParams& beta,
                    const KalmanState& init, double dt) {
  const LoglikTrace trace = quasi_loglik_trace(panel, beta, init, dt);
  if (trace.failed_at) throw NumericalError("quasi_loglik: " + trace.error);
  if (!std::isfinite(trace.loglik)) throw NumericalError("quasi_loglik: non-finite likelihood");
  return trace.loglik;
}

namespace {

Eigen::VectorXd to_search_space(const CirParams& p) {
  const std::size_t k = p.size();
  Eigen::VectorXd z(static_cast<Eigen::Index>(4 * k + p.delta.size()));
  for (std::size_t j = 0; j < k; ++j) {
    const auto b = static_cast<Eigen::Index>(4 * j);
    z[b] = std::log(p.factors[j].k);
    z[b + 1] = std::log(p.factors[j].theta);
    z[b + 2] = std::log(p.factors[j].sigma);
    z[b + 3] = p.factors[j].lambda;
  }
  for (std::size_t i = 0; i < p.delta.size(); ++i) {
    z[static_cast<Eigen::Index>(4 * k + i)] = std::log(p.delta[i]);
  }
  return z;
}

CirParams from_search_space(const Eigen::VectorXd& z, std::size_t k, std::size_t slots) {
  CirParams p;
  p.factors.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    const auto b = static_cast<Eigen::Index>(4 * j);
    p.factors[j] = FactorParams{std::exp(z[b]), std::exp(z[b + 1]), std::exp(z[b + 2]), z[b + 3]};
  }
  p.delta.resize(slots);
  for (std::size_t i = 0; i < slots; ++i) p.delta[i] = std::exp(z[static_cast<Eigen::Index>(4 * k + i)]);
  return p;
}

}  // namespace

QmlEstimate estimate_qml(const std::vector<YieldObservation>& panel, const CirParams& beta0,
                         const QmlOptions& options) {
  beta0.validate();
  const std::size_t k = beta0.size();
  const std::size_t slots = beta0.delta.size();
  const auto objective = [&](const Eigen::VectorXd& z) {
    const CirParams beta = from_search_space(z, k, slots);
    return -quasi_loglik(panel, beta, stationary_state(beta), options.dt);
  };

  const Eigen::VectorXd z0 = to_search_space(beta0);
  optim::NelderMeadOptions nm;
  nm.initial_step = Eigen::VectorXd::Constant(z0.size(), options.initial_step);
  for (std::size_t j = 0; j < k; ++j) {
    nm.initial_step[static_cast<Eigen::Index>(4 * j + 3)] = options.initial_step * beta0.factors[j].k;
  }
  nm.max_evaluations = options.max_evaluations;
  nm.restarts = options.restarts;
  nm.ftol = options.ftol;
  nm.xtol = 1e-6;
  const optim::NelderMeadResult r = optim::nelder_mead(objective, z0, nm);

  QmlEstimate est;
  est.beta = from_search_space(r.x, k, slots);
  est.loglik = -r.value;
  est.iterations = r.iterations;
  est.evaluations = r.evaluations;
  est.converged = r.converged;
  return est;
}

Eigen::MatrixXd yield_map_jacobian(const CirParams& params, const FactorState& x,
                                   const std::vector<double>& maturities) {
  const std::size_t k = params.size();
  if (static_cast<std::size_t>(x.size()) != k) {
    throw std::invalid_argument("yield_map_jacobian: factor state has the wrong dimension");
  }
  const auto n = static_cast<Eigen::Index>(maturities.size());
  const auto kk = static_cast<Eigen::Index>(k);
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, 5 * kk + static_cast<Eigen::Index>(params.delta.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double T = maturities[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < kk; ++j) {
      const FactorSensitivity s = factor_sensitivity(params.factors[static_cast<std::size_t>(j)], T);
      jac(i, j) = s.psi / T;
      for (Eigen::Index p = 0; p < 4; ++p) {
        const auto q = static_cast<std::size_t>(p);
        jac(i, (p + 1) * kk + j) = (-s.d_log_phi[q] + s.d_psi[q] * x[j]) / T;
      }
    }
  }
  return jac;
}

CirParams AugmentedState::params() const {
  const auto k = static_cast<Eigen::Index>(factors);
  CirParams p;
  p.factors.resize(factors);
  for (Eigen::Index j = 0; j < k; ++j) {
    p.factors[static_cast<std::size_t>(j)] =
        FactorParams{mean[k + j], mean[2 * k + j], mean[3 * k + j], mean[4 * k + j]};
  }
  p.delta.resize(delta_slots);
  for (std::size_t i = 0; i < delta_slots; ++i) p.delta[i] = mean[5 * k + static_cast<Eigen::Index>(i)];
  return p;
}

AugmentedState make_augmented(const CirParams& params, const KalmanState& factors,
                              const Eigen::VectorXd& parameter_variances) {
  params.validate();
  check_dimensions(factors, params);
  const auto k = static_cast<Eigen::Index>(params.size());
  const auto nd = static_cast<Eigen::Index>(params.delta.size());
  const Eigen::Index dim = 5 * k + nd;
  if (parameter_variances.size() != dim - k) {
    throw std::invalid_argument("make_augmented: need " + std::to_string(dim - k) +
                                " parameter variances");
  }
  AugmentedState s;
  s.factors = params.size();
  s.delta_slots = params.delta.size();
  s.time = factors.time;
  s.mean.resize(dim);
  s.mean.head(k) = factors.xhat;
  for (Eigen::Index j = 0; j < k; ++j) {
    const FactorParams& f = params.factors[static_cast<std::size_t>(j)];
    s.mean[k + j] = f.k;
    s.mean[2 * k + j] = f.theta;
    s.mean[3 * k + j] = f.sigma;
    s.mean[4 * k + j] = f.lambda;
  }
  for (Eigen::Index i = 0; i < nd; ++i) s.mean[5 * k + i] = params.delta[static_cast<std::size_t>(i)];
  s.cov = Eigen::MatrixXd::Zero(dim, dim);
  s.cov.topLeftCorner(k, k) = factors.v;
  s.cov.bottomRightCorner(dim - k, dim - k) = parameter_variances.asDiagonal();
  return s;
}

AugmentedState augmented_ekf_step(const AugmentedState& state, const YieldObservation& obs, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("augmented_ekf_step: dt must be positive");
  obs.validate();
  const auto k = static_cast<Eigen::Index>(state.factors);
  const Eigen::Index dim = state.mean.size();
  AugmentedState out = state;
  out.time = state.time + 1;
  out.clamped = false;

  // Parameters must stay in the region where the yield map is defined.
  for (Eigen::Index i = k; i < 4 * k; ++i) {
    if (!(out.mean[i] >= kFeasibilityFloor)) {
      out.mean[i] = kFeasibilityFloor;
      out.clamped = true;
    }
  }
  for (Eigen::Index i = 5 * k; i < dim; ++i) {
    if (!(out.mean[i] >= kFeasibilityFloor)) {
      out.mean[i] = kFeasibilityFloor;
      out.clamped = true;
    }
  }

  // Time update: exact drift flow with frozen parameters.
  Eigen::MatrixXd f = Eigen::MatrixXd::Identity(dim, dim);
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(dim, dim);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double kj = out.mean[k + j];
    const double th = out.mean[2 * k + j];
    const FactorParams fp{kj, th, out.mean[3 * k + j], out.mean[4 * k + j]};
    const double x = out.mean[j];
    const double e = std::exp(-kj * dt);
    out.mean[j] = th + (x - th) * e;
    f(j, j) = e;
    f(j, k + j) = -(x - th) * dt * e;
    f(j, 2 * k + j) = 1.0 - e;
    q(j, j) = transition_variance(fp, std::max(x, 0.0), dt);
  }
  Eigen::MatrixXd p = symmetrize(f * state.cov * f.transpose() + q);

  // Measurement update linearised at the predicted mean.
  const CirParams params = out.params();
  const FactorState x = out.factor_mean();
  const Loadings l = loadings(params, obs.maturities);
  const Eigen::MatrixXd h = yield_map_jacobian(params, x, obs.maturities);
  const Eigen::VectorXd d2 = noise_variances(params, obs.size());
  const Eigen::Map<const Eigen::VectorXd> y(obs.yields.data(), static_cast<Eigen::Index>(obs.size()));
  const Eigen::VectorXd residual = y - l.chi - l.psi * x;

  Eigen::MatrixXd s = symmetrize(h * p * h.transpose());
  s.diagonal() += d2;
  Eigen::LLT<Eigen::MatrixXd> s_llt(s);
  if (s_llt.info() != Eigen::Success) {
    throw NumericalError("augmented_ekf_step: innovation covariance is not positive definite");
  }
  const Eigen::MatrixXd gain = s_llt.solve(h * p).transpose();
  out.mean += gain * residual;
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(dim, dim) - gain * h;
  p = symmetrize(a * p * a.transpose() + gain * d2.asDiagonal() * gain.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p);
  const double lo = es.eigenvalues().minCoeff();
  if (lo < -1e-12 * std::max(1.0, es.eigenvalues().maxCoeff())) {
    const Eigen::VectorXd clipped = es.eigenvalues().cwiseMax(0.0);
    p = symmetrize(es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose());
  }
  out.cov = p;

  for (Eigen::Index j = 0; j < k; ++j) out.mean[j] = std::max(out.mean[j], 0.0);
  return out;
}

}  // namespace finfilt::cir
