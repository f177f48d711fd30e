#include "finfilt/svm_filter.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "finfilt/error.hpp"
#include "finfilt/quadrature.hpp"
#include "finfilt/rng.hpp"

namespace finfilt::svm {

using expfam::ExpFamilyDensity;
using expfam::MomentVector;
using expfam::Theta;

void SvmParams::validate() const {
  if (!std::isfinite(rho) || !std::isfinite(sigma) || !std::isfinite(gamma)) {
    throw std::invalid_argument("SvmParams: non-finite parameter");
  }
  if (!(sigma > 0.0)) throw std::invalid_argument("SvmParams: sigma must be positive");
}

double SvmParams::stationary_variance() const {
  if (!stationary()) return std::numeric_limits<double>::infinity();
  return sigma * sigma / (1.0 - rho * rho);
}

SvmPath simulate_svm(const SvmParams& params, std::size_t n, const GaussianPrior& x0,
                     std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("simulate_svm: n must be >= 1");
  if (!(x0.variance >= 0.0)) throw std::invalid_argument("simulate_svm: negative prior variance");
  // σ = 0 is allowed here (degenerate AR path); the filter needs σ > 0.
  if (!(params.sigma >= 0.0) || !std::isfinite(params.rho) || !std::isfinite(params.gamma)) {
    throw std::invalid_argument("simulate_svm: invalid parameters");
  }
  const CounterRng root(seed);
  CounterRng init = root.split(0);
  CounterRng state_noise = root.split(1);
  CounterRng obs_noise = root.split(2);
  std::normal_distribution<double> normal;

  SvmPath path;
  path.seed = seed;
  path.x.resize(n);
  path.y.resize(n);
  path.x[0] = x0.mean + std::sqrt(x0.variance) * normal(init);
  for (std::size_t t = 1; t < n; ++t) {
    path.x[t] = params.rho * path.x[t - 1] + params.sigma * normal(state_noise);
  }
  for (std::size_t t = 0; t < n; ++t) {
    path.y[t] = std::exp(0.5 * (path.x[t] + params.gamma)) * normal(obs_noise);
  }
  return path;
}

std::string to_string(RecoveryMode mode) {
  return mode == RecoveryMode::moments_m ? "m" : "2m";
}

RecoveryMode parse_recovery_mode(const std::string& text) {
  if (text == "m") return RecoveryMode::moments_m;
  if (text == "2m") return RecoveryMode::moments_2m;
  throw std::invalid_argument("unknown recovery mode '" + text + "' (expected m or 2m)");
}

namespace {

std::size_t moment_count(int order, RecoveryMode mode) {
  return static_cast<std::size_t>(mode == RecoveryMode::moments_2m ? 2 * order : order);
}

double relative_residual(const ExpFamilyDensity& q, const std::vector<double>& eta) {
  const MomentVector mom = q.moments(q.order());
  double r = 0.0;
  for (int i = 0; i < q.order(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    r = std::max(r, std::abs(mom.values[k] - eta[k]) / (1.0 + std::abs(eta[k])));
  }
  return r;
}

// eta holds 2m posterior moments even in m mode; the upper half only seeds
// the algebraic start, Newton matches the first m.
Theta recover_theta(const std::vector<double>& eta, int order, const Theta& previous) {
  const MomentVector target{std::vector<double>(eta.begin(), eta.begin() + order), true};
  const double var = eta[1] - eta[0] * eta[0];
  if (!(var > 0.0)) {
    throw DomainError("projection_step: posterior variance " + std::to_string(var) +
                      " is not positive");
  }
  const Theta gaussian = expfam::gaussian_theta(eta[0], var, order);

  std::vector<Theta> starts;
  try {
    starts.push_back(expfam::theta_from_moments_algebraic(MomentVector{eta, true}));
  } catch (const NumericalError&) {
    // ill-conditioned or outside EP(m); Newton from the other starts
  }
  if (order == 2) {
    starts.push_back(gaussian);
  } else {
    starts.push_back(previous);
    starts.push_back(gaussian);
  }

  std::string last_error;
  for (const Theta& start : starts) {
    try {
      return expfam::theta_from_moments_iterative(target, start);
    } catch (const NumericalError& e) {
      last_error = e.what();
    }
  }
  try {
    return expfam::theta_from_moments_dual(target);
  } catch (const NumericalError& e) {
    last_error = e.what();
  }
  throw ConvergenceError("projection_step: theta recovery failed: " + last_error);
}

// log ∫ exp(-(ρu - x)^2 / (2σ^2)) α_0 q(u) du.
class Prediction {
 public:
  Prediction(const ProjFilterState& state, const SvmParams& params)
      : q_(state.density()), log_mass_(state.log_mass()), params_(params) {
    if (q_.order() == 2) {
      const double var = -0.5 / q_.theta()[1];
      gauss_mean_ = q_.theta()[0] * var;
      gauss_var_ = var;
    }
  }

  double operator()(double x) const {
    const double rho = params_.rho;
    const double s2 = params_.sigma * params_.sigma;
    if (rho == 0.0) return log_mass_ - 0.5 * x * x / s2;
    if (q_.order() == 2) {
      // Gaussian convolution in closed form.
      const double v = rho * rho * gauss_var_ + s2;
      const double d = x - rho * gauss_mean_;
      return log_mass_ + 0.5 * std::log(s2 / v) - 0.5 * d * d / v;
    }
    const Theta& th = q_.theta();
    std::vector<double> c(th.size() + 1, 0.0);
    std::copy(th.begin(), th.end(), c.begin() + 1);
    c[0] = log_mass_ - q_.log_normalizer() - 0.5 * x * x / s2;
    c[1] += rho * x / s2;
    c[2] -= 0.5 * rho * rho / s2;
    const quad::Window window = quad::polynomial_window(c);
    // Evaluated unexpanded: the expanded coefficients cancel badly when σ is small.
    const auto log_integrand = [&](double u) {
      const double r = rho * u - x;
      return log_mass_ + q_.log_density(u) - 0.5 * r * r / s2;
    };
    return quad::build_rule(log_integrand, window).log_integral();
  }

  double mean() const {
    const double m1 = q_.order() == 2 ? gauss_mean_ : q_.moments(1).values[0];
    return params_.rho * m1;
  }
  double sd() const {
    double var = gauss_var_;
    if (q_.order() != 2) {
      const MomentVector mom = q_.moments(2);
      var = mom.values[1] - mom.values[0] * mom.values[0];
    }
    return std::sqrt(params_.rho * params_.rho * var + params_.sigma * params_.sigma);
  }

 private:
  ExpFamilyDensity q_;
  double log_mass_;
  SvmParams params_;
  double gauss_mean_ = 0.0;
  double gauss_var_ = 1.0;
};

}  // namespace

ProjFilterState::ProjFilterState(int time, double log_mass, std::vector<double> eta, Theta theta,
                                 RecoveryMode mode, double residual)
    : time_(time),
      log_mass_(log_mass),
      eta_(std::move(eta)),
      theta_(std::move(theta)),
      mode_(mode),
      residual_(residual),
      density_(theta_) {
  if (!std::isfinite(log_mass_)) throw std::invalid_argument("ProjFilterState: alpha_0 must be positive");
  if (eta_.size() != moment_count(order(), mode_)) {
    throw std::invalid_argument("ProjFilterState: expected " +
                                std::to_string(moment_count(order(), mode_)) + " moments");
  }
}

MomentVector ProjFilterState::alpha() const {
  const double a0 = std::exp(log_mass_);
  std::vector<double> a;
  a.reserve(eta_.size() + 1);
  a.push_back(a0);
  for (double e : eta_) a.push_back(a0 * e);
  return MomentVector{std::move(a), false};
}

ProjFilterState initial_state(const Theta& theta, RecoveryMode mode) {
  const ExpFamilyDensity q(theta);
  const std::size_t k = moment_count(q.order(), mode);
  return ProjFilterState(0, 0.0, q.moments(static_cast<int>(k)).values, theta, mode);
}

ProjFilterState initial_state(const GaussianPrior& prior, int order, RecoveryMode mode) {
  return initial_state(expfam::gaussian_theta(prior.mean, prior.variance, order), mode);
}

ProjFilterState projection_step(const ProjFilterState& state, double y, const SvmParams& params) {
  params.validate();
  if (!std::isfinite(y)) throw std::invalid_argument("projection_step: non-finite observation");
  const int m = state.order();
  const std::size_t k = moment_count(m, state.mode());

  const Prediction predict(state, params);
  const double y2 = y * y;
  const double gamma = params.gamma;
  const auto log_posterior = [&](double x) {
    const double lik = -0.5 * (x + gamma) - (y2 == 0.0 ? 0.0 : 0.5 * y2 * std::exp(-x - gamma));
    if (!std::isfinite(lik)) return -std::numeric_limits<double>::infinity();
    return lik + predict(x);
  };

  quad::Window window;
  window.center = predict.mean();
  window.scale = predict.sd();
  quad::Options opts;
  opts.moment_check = 2 * m;
  const quad::NodeRule rule = quad::build_rule(log_posterior, window, opts);

  std::vector<double> eta(static_cast<std::size_t>(2 * m), 0.0);
  const auto nodes = rule.nodes();
  const auto weights = rule.weights();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    double p = weights[i];
    for (auto& e : eta) {
      p *= nodes[i];
      e += p;
    }
  }
  for (auto& e : eta) e /= rule.mass();

  Theta theta = recover_theta(eta, m, state.theta());
  eta.resize(k);
  const double residual = relative_residual(ExpFamilyDensity(theta), eta);
  return ProjFilterState(state.time() + 1, rule.log_integral(), std::move(eta), std::move(theta),
                         state.mode(), residual);
}

double volatility_estimate(const ProjFilterState& state, const SvmParams& params) {
  const double g = params.gamma;
  return expfam::expectation(state.density(), [g](double x) { return std::exp(0.5 * (x + g)); });
}

FilterRun run_filter(const std::vector<double>& observations, const SvmParams& params,
                     const ProjFilterState& initial) {
  if (observations.empty()) throw std::invalid_argument("run_filter: no observations");
  params.validate();
  FilterRun run;
  run.records.reserve(observations.size());
  const ProjFilterState* current = &initial;
  for (std::size_t t = 0; t < observations.size(); ++t) {
    try {
      ProjFilterState next = projection_step(*current, observations[t], params);
      const double vol = volatility_estimate(next, params);
      run.records.push_back(FilterRecord{std::move(next), vol});
      current = &run.records.back().state;
    } catch (const std::exception& e) {
      run.failed_at = t;
      run.error = "step " + std::to_string(t) + ": " + e.what();
      break;
    }
  }
  return run;
}

}  // namespace finfilt::svm
