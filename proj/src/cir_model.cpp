#include "finfilt/cir_model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "finfilt/rng.hpp"

namespace finfilt::cir {

void FactorParams::validate() const {
  if (!std::isfinite(k) || !std::isfinite(theta) || !std::isfinite(sigma) || !std::isfinite(lambda)) {
    throw std::invalid_argument("FactorParams: non-finite parameter");
  }
  if (!(k > 0.0) || !(theta > 0.0) || !(sigma > 0.0)) {
    throw std::invalid_argument("FactorParams: k, theta and sigma must be positive");
  }
}

void CirParams::validate() const {
  if (factors.empty()) throw std::invalid_argument("CirParams: need at least one factor");
  for (const auto& f : factors) f.validate();
  if (delta.empty()) throw std::invalid_argument("CirParams: delta is empty");
  for (double d : delta) {
    if (!(d > 0.0) || !std::isfinite(d)) throw std::invalid_argument("CirParams: delta must be positive");
  }
}

bool CirParams::feller() const {
  for (const auto& f : factors) {
    if (!f.feller()) return false;
  }
  return true;
}

double CirParams::delta_for(std::size_t slot) const {
  if (delta.size() == 1) return delta[0];
  if (slot >= delta.size()) {
    throw std::out_of_range("CirParams: no delta for maturity slot " + std::to_string(slot) +
                            " (have " + std::to_string(delta.size()) + ")");
  }
  return delta[slot];
}

void YieldObservation::validate() const {
  if (maturities.empty()) throw std::invalid_argument("YieldObservation: no maturities");
  if (maturities.size() != yields.size()) {
    throw std::invalid_argument("YieldObservation: maturities and yields differ in length");
  }
  for (std::size_t i = 0; i < maturities.size(); ++i) {
    if (!(maturities[i] > 0.0) || !std::isfinite(maturities[i])) {
      throw std::invalid_argument("YieldObservation: maturities must be positive");
    }
    if (i > 0 && !(maturities[i] > maturities[i - 1])) {
      throw std::invalid_argument("YieldObservation: maturities must be strictly increasing");
    }
    if (!std::isfinite(yields[i])) throw std::invalid_argument("YieldObservation: non-finite yield");
  }
}

namespace {

// With a = k + λ, g = sqrt(h), u = e^{-Tg}, w = 1 − u and
// D = 2g + (a − g) w, multiplying through by e^{-Tg} gives
//     ψ = 2w / D,
//     log φ = c [(a − g) T/2 − log1p((a − g) w / (2g))],  c = 2kθ/σ².
struct Pieces {
  double a, g, u, w, d, b, c;
};

Pieces pieces(const FactorParams& f, double T) {
  if (!(T > 0.0)) throw std::invalid_argument("yield functions: maturity must be positive");
  Pieces p{};
  p.a = f.k + f.lambda;
  p.g = std::sqrt(f.h());
  p.u = std::exp(-T * p.g);
  p.w = -std::expm1(-T * p.g);
  p.d = 2.0 * p.g + (p.a - p.g) * p.w;
  p.b = 0.5 * (p.a - p.g) * T - std::log1p((p.a - p.g) * p.w / (2.0 * p.g));
  p.c = 2.0 * f.k * f.theta / (f.sigma * f.sigma);
  return p;
}

}  // namespace

double log_phi(const FactorParams& f, double T) {
  const Pieces p = pieces(f, T);
  return p.c * p.b;
}

double phi(const FactorParams& f, double T) { return std::exp(log_phi(f, T)); }

double psi(const FactorParams& f, double T) {
  const Pieces p = pieces(f, T);
  return 2.0 * p.w / p.d;
}

double log_phi(const CirParams& p, std::size_t j, double T) { return log_phi(p.factors.at(j), T); }
double phi(const CirParams& p, std::size_t j, double T) { return phi(p.factors.at(j), T); }
double psi_fn(const CirParams& p, std::size_t j, double T) { return psi(p.factors.at(j), T); }

FactorSensitivity factor_sensitivity(const FactorParams& f, double T) {
  const Pieces p = pieces(f, T);
  const double s2 = f.sigma * f.sigma;

  // Partials in (a, g) treated as independent.
  const double dw_dg = T * p.u;
  const double dd_da = p.w;
  const double dd_dg = 2.0 - p.w + (p.a - p.g) * dw_dg;
  const double dpsi_da = -2.0 * p.w * dd_da / (p.d * p.d);
  const double dpsi_dg = 2.0 * (dw_dg * p.d - p.w * dd_dg) / (p.d * p.d);
  const double db_da = 0.5 * T - dd_da / p.d;
  const double db_dg = -0.5 * T - dd_dg / p.d + 1.0 / p.g;

  const double dg_da = p.a / p.g;
  const double dg_dsigma = 2.0 * f.sigma / p.g;

  const double dpsi_dk = dpsi_da + dpsi_dg * dg_da;
  const double dpsi_dsigma = dpsi_dg * dg_dsigma;
  const double db_dk = db_da + db_dg * dg_da;
  const double db_dsigma = db_dg * dg_dsigma;

  FactorSensitivity s;
  s.log_phi = p.c * p.b;
  s.psi = 2.0 * p.w / p.d;
  s.d_psi = {dpsi_dk, 0.0, dpsi_dsigma, dpsi_dk};
  s.d_log_phi = {2.0 * f.theta / s2 * p.b + p.c * db_dk, 2.0 * f.k / s2 * p.b,
                 -2.0 * p.c / f.sigma * p.b + p.c * db_dsigma, p.c * db_dk};
  return s;
}

Loadings loadings(const CirParams& p, const std::vector<double>& maturities) {
  const auto n = static_cast<Eigen::Index>(maturities.size());
  const auto k = static_cast<Eigen::Index>(p.size());
  Loadings l{Eigen::VectorXd::Zero(n), Eigen::MatrixXd::Zero(n, k)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const double T = maturities[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < k; ++j) {
      const Pieces pc = pieces(p.factors[static_cast<std::size_t>(j)], T);
      l.chi[i] -= pc.c * pc.b / T;
      l.psi(i, j) = 2.0 * pc.w / pc.d / T;
    }
  }
  return l;
}

double model_yield(const CirParams& p, const FactorState& x, double T) {
  if (static_cast<std::size_t>(x.size()) != p.size()) {
    throw std::invalid_argument("model_yield: factor state has the wrong dimension");
  }
  const Loadings l = loadings(p, {T});
  return l.chi[0] + l.psi.row(0).dot(x);
}

double transition_mean(const FactorParams& f, double x, double dt) {
  const double e = std::exp(-f.k * dt);
  return f.theta * (1.0 - e) + e * x;
}

double transition_variance(const FactorParams& f, double x, double dt) {
  const double e = std::exp(-f.k * dt);
  const double one_minus = -std::expm1(-f.k * dt);
  return f.sigma * f.sigma * one_minus / f.k * (0.5 * f.theta * one_minus + e * x);
}

namespace {

// X_{t+dt} = c χ'²_d(λ) with c = σ²(1 − e^{−k dt})/(4k), d = 4kθ/σ²,
// λ = x e^{−k dt}/c; χ'²_d(λ) = χ²_{d+2N}, N ~ Poisson(λ/2).
double sample_transition(const FactorParams& f, double x, double dt, CounterRng& rng) {
  const double e = std::exp(-f.k * dt);
  if (f.sigma == 0.0) return f.theta * (1.0 - e) + e * x;
  const double c = f.sigma * f.sigma * (-std::expm1(-f.k * dt)) / (4.0 * f.k);
  const double d = 4.0 * f.k * f.theta / (f.sigma * f.sigma);
  const double nc = x * e / c;
  double n = 0.0;
  if (nc > 0.0) {
    std::poisson_distribution<long long> poisson(0.5 * nc);
    n = static_cast<double>(poisson(rng));
  }
  std::gamma_distribution<double> gamma(0.5 * d + n, 1.0);
  return c * 2.0 * gamma(rng);
}

}  // namespace

Eigen::MatrixXd simulate_factors(const CirParams& p, const FactorState& x0, double dt,
                                 std::size_t n, std::uint64_t seed) {
  if (!(dt > 0.0)) throw std::invalid_argument("simulate_factors: dt must be positive");
  if (static_cast<std::size_t>(x0.size()) != p.size()) {
    throw std::invalid_argument("simulate_factors: x0 has the wrong dimension");
  }
  for (const auto& f : p.factors) {
    if (!(f.k > 0.0) || !(f.theta > 0.0) || !(f.sigma >= 0.0)) {
      throw std::invalid_argument("simulate_factors: need k, theta > 0 and sigma >= 0");
    }
  }
  if ((x0.array() < 0.0).any()) throw std::invalid_argument("simulate_factors: negative x0");

  const auto k = static_cast<Eigen::Index>(p.size());
  Eigen::MatrixXd path(static_cast<Eigen::Index>(n) + 1, k);
  path.row(0) = x0.transpose();
  const CounterRng root(seed);
  for (Eigen::Index j = 0; j < k; ++j) {
    CounterRng rng = root.split(static_cast<std::uint64_t>(j));
    const FactorParams& f = p.factors[static_cast<std::size_t>(j)];
    for (Eigen::Index t = 1; t <= static_cast<Eigen::Index>(n); ++t) {
      path(t, j) = sample_transition(f, path(t - 1, j), dt, rng);
    }
  }
  return path;
}

YieldObservation observe_yields(const CirParams& p, const FactorState& x,
                                const std::vector<double>& maturities, std::uint64_t seed, int t) {
  YieldObservation obs;
  obs.t = t;
  obs.maturities = maturities;
  const Loadings l = loadings(p, maturities);
  const Eigen::VectorXd y = l.chi + l.psi * x;
  CounterRng rng(seed, static_cast<std::uint64_t>(t));
  std::normal_distribution<double> normal;
  obs.yields.resize(maturities.size());
  for (std::size_t i = 0; i < maturities.size(); ++i) {
    obs.yields[i] = y[static_cast<Eigen::Index>(i)] + p.delta_for(i) * normal(rng);
  }
  return obs;
}

}  // namespace finfilt::cir
