#include "finfilt/exact_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "finfilt/error.hpp"

namespace finfilt::oracle {

GridDensity::GridDensity(double lo, double spacing, std::vector<double> values)
    : lo_(lo), spacing_(spacing), values_(std::move(values)) {
  if (values_.size() < 3) throw std::invalid_argument("GridDensity: need at least 3 nodes");
  if (!(spacing_ > 0.0) || !std::isfinite(lo_)) {
    throw std::invalid_argument("GridDensity: nodes must be finite and strictly increasing");
  }
  for (double v : values_) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument("GridDensity: values must be finite and nonnegative");
    }
  }
  const double mass = integral();
  if (!(mass > 0.0)) throw std::invalid_argument("GridDensity: zero mass");
  for (double& v : values_) v /= mass;
}

GridDensity GridDensity::tabulate(double lo, double hi, std::size_t n,
                                  const std::function<double(double)>& log_f) {
  if (n < 3 || !(hi > lo)) throw std::invalid_argument("GridDensity::tabulate: bad grid");
  const double h = (hi - lo) / static_cast<double>(n - 1);
  std::vector<double> lf(n);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    lf[i] = log_f(lo + h * static_cast<double>(i));
    if (std::isnan(lf[i])) lf[i] = -std::numeric_limits<double>::infinity();
    top = std::max(top, lf[i]);
  }
  if (!std::isfinite(top)) throw DomainError("GridDensity::tabulate: density vanishes on the grid");
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = std::exp(lf[i] - top);
  return GridDensity(lo, h, std::move(v));
}

std::vector<double> GridDensity::nodes() const {
  std::vector<double> x(values_.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = node(i);
  return x;
}

double GridDensity::integral() const {
  double acc = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) acc += weight(i) * values_[i];
  return acc;
}

double GridDensity::boundary_mass(int side, std::size_t cells) const {
  const std::size_t n = values_.size();
  cells = std::min(cells, n - 1);
  double acc = 0.0;
  for (std::size_t c = 0; c < cells; ++c) {
    const std::size_t i = side < 0 ? c : n - 1 - c;
    const std::size_t j = side < 0 ? c + 1 : n - 2 - c;
    acc += 0.5 * spacing_ * (values_[i] + values_[j]);
  }
  return acc;
}

namespace {

constexpr double kBoundaryMass = 1e-10;

// Unnormalised log posterior on n uniform nodes starting at lo.
std::vector<double> log_posterior(double lo, double h, std::size_t n, const GridDensity& prior,
                                  double y, const svm::SvmParams& params) {
  const double inv2s2 = 0.5 / (params.sigma * params.sigma);
  const double log_norm = -std::log(params.sigma * std::sqrt(2.0 * std::numbers::pi));

  // Drop prior nodes whose contribution is below double resolution anyway.
  const auto& pv = prior.values();
  const double pmax = *std::max_element(pv.begin(), pv.end());
  std::vector<double> shifted;
  std::vector<double> mass;
  for (std::size_t j = 0; j < pv.size(); ++j) {
    if (pv[j] <= 1e-300 * pmax) continue;
    shifted.push_back(params.rho * prior.node(j));
    mass.push_back(prior.weight(j) * pv[j]);
  }

  const double y2 = y * y;
  std::vector<double> lp(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = lo + h * static_cast<double>(i);
    double pred = 0.0;
    for (std::size_t j = 0; j < shifted.size(); ++j) {
      const double r = shifted[j] - x;
      pred += mass[j] * std::exp(-r * r * inv2s2);
    }
    const double lik = -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * (x + params.gamma) -
                       (y2 == 0.0 ? 0.0 : 0.5 * y2 * std::exp(-x - params.gamma));
    lp[i] = pred > 0.0 ? lik + std::log(pred) + log_norm : -std::numeric_limits<double>::infinity();
  }
  return lp;
}

}  // namespace

GridDensity bayes_step(const GridDensity& prior, double y, const svm::SvmParams& params) {
  params.validate();
  if (!std::isfinite(y)) throw std::invalid_argument("bayes_step: non-finite observation");
  const double h = prior.spacing();
  double lo = prior.lo();
  std::size_t n = prior.size();
  const std::size_t cells = std::max<std::size_t>(1, prior.size() / 100);

  for (int attempt = 0; attempt < 16; ++attempt) {
    const std::vector<double> lp = log_posterior(lo, h, n, prior, y, params);
    const double top = *std::max_element(lp.begin(), lp.end());
    if (!std::isfinite(top)) {
      throw DomainError("bayes_step: posterior underflows everywhere on the grid; observation " +
                        std::to_string(y) + " is incompatible with the prior");
    }
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = std::exp(lp[i] - top);
    GridDensity post(lo, h, std::move(v));

    const bool grow_left = post.boundary_mass(-1, cells) > kBoundaryMass;
    const bool grow_right = post.boundary_mass(1, cells) > kBoundaryMass;
    if (!grow_left && !grow_right) return post;
    const std::size_t extra = n / 4;
    if (grow_left) {
      lo -= h * static_cast<double>(extra);
      n += extra;
    }
    if (grow_right) n += extra;
  }
  throw DomainError("bayes_step: posterior mass keeps reaching the grid boundary");
}

GridDensity default_grid(const svm::SvmParams& params, const svm::GaussianPrior& prior,
                         std::size_t nodes) {
  if (!(prior.variance > 0.0)) {
    throw std::invalid_argument("default_grid: prior variance must be positive");
  }
  double sd = std::sqrt(prior.variance);
  const double stat = params.stationary_variance();
  if (std::isfinite(stat)) sd = std::max(sd, std::sqrt(stat));
  const double half = 10.0 * sd;
  const double m = prior.mean;
  const double v = prior.variance;
  return GridDensity::tabulate(m - half, m + half, nodes,
                               [m, v](double x) { return -0.5 * (x - m) * (x - m) / v; });
}

expfam::MomentVector grid_moments(const GridDensity& d, int count) {
  if (count < 1) throw std::invalid_argument("grid_moments: count must be >= 1");
  std::vector<double> eta(static_cast<std::size_t>(count), 0.0);
  const auto& v = d.values();
  for (std::size_t i = 0; i < d.size(); ++i) {
    double p = d.weight(i) * v[i];
    const double x = d.node(i);
    for (auto& e : eta) {
      p *= x;
      e += p;
    }
  }
  return expfam::MomentVector{std::move(eta), true};
}

double kl_to_grid(const GridDensity& d, const expfam::ExpFamilyDensity& q) {
  double acc = 0.0;
  const auto& v = d.values();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(v[i] > 0.0)) continue;
    const double lq = q.log_density(d.node(i));
    if (!std::isfinite(lq)) {
      throw DomainError("kl_to_grid: q underflows at x = " + std::to_string(d.node(i)));
    }
    acc += d.weight(i) * v[i] * (std::log(v[i]) - lq);
  }
  return acc;
}

double volatility_estimate(const GridDensity& d, const svm::SvmParams& params) {
  const double g = params.gamma;
  return d.expect([g](double x) { return std::exp(0.5 * (x + g)); });
}

OracleRun run_oracle(const std::vector<double>& observations, const svm::SvmParams& params,
                     const GridDensity& initial) {
  OracleRun run;
  run.posteriors.reserve(observations.size());
  const GridDensity* current = &initial;
  for (double y : observations) {
    run.posteriors.push_back(bayes_step(*current, y, params));
    current = &run.posteriors.back();
    run.volatility.push_back(volatility_estimate(*current, params));
  }
  return run;
}

}  // namespace finfilt::oracle
