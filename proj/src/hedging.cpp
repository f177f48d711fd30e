#include "finfilt/hedging.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include <unsupported/Eigen/MatrixFunctions>

#include "finfilt/error.hpp"
#include "finfilt/rng.hpp"

namespace finfilt::hedging {

void RegimeModel::validate() const {
  if (sigma.empty()) throw std::invalid_argument("RegimeModel: need at least one regime");
  for (double s : sigma) {
    if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("RegimeModel: sigma must be positive");
  }
  if (!(horizon > 0.0) || !std::isfinite(horizon)) {
    throw std::invalid_argument("RegimeModel: horizon must be positive");
  }
  const auto r = static_cast<Eigen::Index>(sigma.size());
  if (lambda.rows() != r || lambda.cols() != r) {
    throw std::invalid_argument("RegimeModel: intensity matrix must be " + std::to_string(r) + "x" +
                                std::to_string(r));
  }
  for (Eigen::Index i = 0; i < r; ++i) {
    double row = 0.0, scale = 0.0;
    for (Eigen::Index j = 0; j < r; ++j) {
      if (!std::isfinite(lambda(i, j))) throw std::invalid_argument("RegimeModel: non-finite intensity");
      if (i != j && lambda(i, j) < 0.0) {
        throw std::invalid_argument("RegimeModel: negative off-diagonal intensity");
      }
      row += lambda(i, j);
      scale += std::abs(lambda(i, j));
    }
    if (std::abs(row) > 1e-12 * std::max(1.0, scale)) {
      throw std::invalid_argument("RegimeModel: intensity row " + std::to_string(i) + " does not sum to zero");
    }
  }
}

double Claim::operator()(double x) const {
  switch (kind) {
    case PayoffKind::call: return std::max(x - strike, 0.0);
    case PayoffKind::put: return std::max(strike - x, 0.0);
    case PayoffKind::identity: return x;
  }
  return x;
}

std::string to_string(PayoffKind kind) {
  switch (kind) {
    case PayoffKind::call: return "call";
    case PayoffKind::put: return "put";
    case PayoffKind::identity: return "identity";
  }
  return "call";
}

PayoffKind parse_payoff_kind(const std::string& name) {
  if (name == "call") return PayoffKind::call;
  if (name == "put") return PayoffKind::put;
  if (name == "identity") return PayoffKind::identity;
  throw std::invalid_argument("unknown payoff '" + name + "' (expected call, put or identity)");
}

namespace {

// Tridiagonal solve; a is the sub-, b the main, c the super-diagonal.
void thomas(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& c,
            Eigen::VectorXd& d) {
  const Eigen::Index n = b.size();
  Eigen::VectorXd cp(n);
  double denom = b[0];
  cp[0] = c[0] / denom;
  d[0] /= denom;
  for (Eigen::Index i = 1; i < n; ++i) {
    denom = b[i] - a[i] * cp[i - 1];
    cp[i] = c[i] / denom;
    d[i] = (d[i] - a[i] * d[i - 1]) / denom;
  }
  for (Eigen::Index i = n - 2; i >= 0; --i) d[i] -= cp[i] * d[i + 1];
}

// ½σ²x² ∂²/∂x² on the non-uniform price grid, zero in the end rows.
struct Stencil {
  Eigen::VectorXd lo, mid, hi;
};

Stencil diffusion(const std::vector<double>& x, double sigma) {
  const auto n = static_cast<Eigen::Index>(x.size());
  Stencil s{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  for (Eigen::Index j = 1; j + 1 < n; ++j) {
    const auto k = static_cast<std::size_t>(j);
    const double hm = x[k] - x[k - 1];
    const double hp = x[k + 1] - x[k];
    const double coef = sigma * sigma * x[k] * x[k] / (hm + hp);
    s.lo[j] = coef / hm;
    s.hi[j] = coef / hp;
    s.mid[j] = -s.lo[j] - s.hi[j];
  }
  return s;
}

Eigen::VectorXd apply(const Stencil& s, const Eigen::VectorXd& u) {
  const Eigen::Index n = u.size();
  Eigen::VectorXd out = s.mid.cwiseProduct(u);
  for (Eigen::Index j = 1; j + 1 < n; ++j) out[j] += s.lo[j] * u[j - 1] + s.hi[j] * u[j + 1];
  return out;
}

Eigen::VectorXd derivative(const std::vector<double>& x, const Eigen::VectorXd& u) {
  const Eigen::Index n = u.size();
  Eigen::VectorXd d(n);
  d[0] = (u[1] - u[0]) / (x[1] - x[0]);
  d[n - 1] = (u[n - 1] - u[n - 2]) / (x[static_cast<std::size_t>(n - 1)] - x[static_cast<std::size_t>(n - 2)]);
  for (Eigen::Index j = 1; j + 1 < n; ++j) {
    const auto k = static_cast<std::size_t>(j);
    const double hm = x[k] - x[k - 1];
    const double hp = x[k + 1] - x[k];
    d[j] = (-hp / (hm * (hm + hp))) * u[j - 1] + ((hp - hm) / (hm * hp)) * u[j] +
           (hm / (hp * (hm + hp))) * u[j + 1];
  }
  return d;
}

// One θ-scheme step of size dt for all regimes:
//   (I − θ dt A) u' = (I + (1 − θ) dt A) u,  A = diag(L_i) + Λ ⊗ I.
std::vector<Eigen::VectorXd> theta_step(const std::vector<Stencil>& ops, const Eigen::MatrixXd& lambda,
                                        const std::vector<Eigen::VectorXd>& u, double dt, double theta) {
  const std::size_t r = ops.size();
  std::vector<Eigen::VectorXd> rhs(r);
  for (std::size_t i = 0; i < r; ++i) {
    Eigen::VectorXd au = apply(ops[i], u[i]);
    for (std::size_t j = 0; j < r; ++j) {
      au += lambda(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * u[j];
    }
    rhs[i] = u[i] + (1.0 - theta) * dt * au;
  }

  std::vector<Eigen::VectorXd> next = u;
  const int max_sweeps = r == 1 ? 1 : 500;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double change = 0.0, size = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      Eigen::VectorXd d = rhs[i];
      for (std::size_t j = 0; j < r; ++j) {
        if (j != i) d += theta * dt * lambda(ii, static_cast<Eigen::Index>(j)) * next[j];
      }
      const Eigen::VectorXd a = -theta * dt * ops[i].lo;
      const Eigen::VectorXd c = -theta * dt * ops[i].hi;
      const Eigen::VectorXd b =
          Eigen::VectorXd::Ones(d.size()) - theta * dt * (ops[i].mid.array() + lambda(ii, ii)).matrix();
      thomas(a, b, c, d);
      change = std::max(change, (d - next[i]).cwiseAbs().maxCoeff());
      size = std::max(size, d.cwiseAbs().maxCoeff());
      next[i] = std::move(d);
    }
    if (r == 1 || change <= 1e-15 * std::max(1.0, size)) return next;
  }
  throw ConvergenceError("solve_claim_pde: regime coupling iteration did not converge");
}

struct Bracket {
  std::size_t lo;
  double w;
};

Bracket bracket(const std::vector<double>& grid, double v, const char* what) {
  const double tol = 1e-12 * std::max(1.0, std::abs(grid.back()));
  if (!(v >= grid.front() - tol) || !(v <= grid.back() + tol)) {
    throw DomainError(std::string(what) + " " + std::to_string(v) + " outside the grid [" +
                      std::to_string(grid.front()) + ", " + std::to_string(grid.back()) + "]");
  }
  auto it = std::upper_bound(grid.begin(), grid.end(), v);
  std::size_t hi = static_cast<std::size_t>(it - grid.begin());
  hi = std::clamp<std::size_t>(hi, 1, grid.size() - 1);
  const std::size_t lo = hi - 1;
  const double w = std::clamp((v - grid[lo]) / (grid[hi] - grid[lo]), 0.0, 1.0);
  return {lo, w};
}

double interpolate(const ClaimSolution& sol, const std::vector<Eigen::MatrixXd>& field, double s,
                   std::size_t regime, double t) {
  if (regime >= sol.regimes()) {
    throw std::out_of_range("regime " + std::to_string(regime) + " out of range");
  }
  const Bracket bt = bracket(sol.times, t, "time");
  const Bracket bs = bracket(sol.prices, s, "price");
  const Eigen::MatrixXd& f = field[regime];
  const auto n = static_cast<Eigen::Index>(bt.lo);
  const auto j = static_cast<Eigen::Index>(bs.lo);
  const double at_n = (1.0 - bs.w) * f(n, j) + bs.w * f(n, j + 1);
  const double at_n1 = (1.0 - bs.w) * f(n + 1, j) + bs.w * f(n + 1, j + 1);
  return (1.0 - bt.w) * at_n + bt.w * at_n1;
}

}  // namespace

double ClaimSolution::value(double s, std::size_t regime, double t) const {
  return interpolate(*this, u, s, regime, t);
}

double ClaimSolution::delta(double s, std::size_t regime, double t) const {
  return interpolate(*this, xi, s, regime, t);
}

ClaimSolution solve_claim_pde(const RegimeModel& model, const std::function<double(double)>& payoff,
                              const GridSpec& grid) {
  model.validate();
  if (grid.price_nodes < 5) throw std::invalid_argument("solve_claim_pde: need at least 5 price nodes");
  if (grid.time_steps < 2) throw std::invalid_argument("solve_claim_pde: need at least 2 time steps");
  if (!(grid.center > 0.0)) throw std::invalid_argument("solve_claim_pde: grid center must be positive");
  const double sigma_max = *std::max_element(model.sigma.begin(), model.sigma.end());
  const double half = grid.log_half_width > 0.0 ? grid.log_half_width
                                                 : 6.0 * sigma_max * std::sqrt(model.horizon);

  ClaimSolution sol;
  sol.sigma = model.sigma;
  const std::size_t n = grid.price_nodes;
  const std::size_t center = n / 2;
  const double h = half / static_cast<double>(center);
  const double lo = std::log(grid.center) - half;
  sol.prices.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    sol.prices[j] = j == center ? grid.center : std::exp(lo + static_cast<double>(j) * h);
  }
  const std::size_t m = grid.time_steps;
  const double dt = model.horizon / static_cast<double>(m);
  sol.times.resize(m + 1);
  for (std::size_t k = 0; k <= m; ++k) sol.times[k] = model.horizon * static_cast<double>(k) / static_cast<double>(m);

  // Crank-Nicolson resolves the terminal kink poorly when a step spans many
  // grid cells in the diffusion time scale.
  const double ratio = 0.5 * sigma_max * sigma_max * dt / (h * h);
  if (ratio > 100.0) {
    sol.warnings.push_back("time step is large relative to the price grid (σ² dt / 2h² = " +
                           std::to_string(ratio) + ")");
  }
  if (sigma_max * std::sqrt(model.horizon) / h < 4.0) {
    sol.warnings.push_back("price grid has fewer than 4 nodes per standard deviation");
  }

  const std::size_t r = model.regimes();
  std::vector<Stencil> ops;
  for (double s : model.sigma) ops.push_back(diffusion(sol.prices, s));

  Eigen::VectorXd terminal(static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) terminal[static_cast<Eigen::Index>(j)] = payoff(sol.prices[j]);
  if (!terminal.allFinite()) throw std::invalid_argument("solve_claim_pde: payoff is not finite on the grid");

  std::vector<Eigen::VectorXd> u(r, terminal);
  sol.u.assign(r, Eigen::MatrixXd(static_cast<Eigen::Index>(m + 1), static_cast<Eigen::Index>(n)));
  sol.xi = sol.u;
  const auto store = [&](std::size_t k) {
    for (std::size_t i = 0; i < r; ++i) {
      sol.u[i].row(static_cast<Eigen::Index>(k)) = u[i].transpose();
      sol.xi[i].row(static_cast<Eigen::Index>(k)) = derivative(sol.prices, u[i]).transpose();
    }
  };
  store(m);
  for (std::size_t step = 0; step < m; ++step) {
    if (grid.rannacher && step < 2) {
      u = theta_step(ops, model.lambda, u, 0.5 * dt, 1.0);
      u = theta_step(ops, model.lambda, u, 0.5 * dt, 1.0);
    } else {
      u = theta_step(ops, model.lambda, u, dt, 0.5);
    }
    store(m - step - 1);
  }
  return sol;
}

Strategy strategy_full(const ClaimSolution& sol, double s, std::size_t regime, double t) {
  const double xi = sol.delta(s, regime, t);
  return {xi, sol.value(s, regime, t) - xi * s};
}

void ConditionalDistribution::validate() const {
  if (atoms.empty()) throw std::invalid_argument("ConditionalDistribution: no atoms");
  double total = 0.0;
  for (const Atom& a : atoms) {
    if (!(a.weight >= 0.0) || !std::isfinite(a.weight)) {
      throw std::invalid_argument("ConditionalDistribution: weights must be non-negative");
    }
    if (!(a.s >= 0.0)) throw std::invalid_argument("ConditionalDistribution: negative price");
    total += a.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("ConditionalDistribution: weights must sum to 1");
}

namespace {

struct PartialSums {
  double xi, value, mean_s;
};

PartialSums partial_sums(const ClaimSolution& sol, const ConditionalDistribution& dist, double t) {
  dist.validate();
  const auto var_weight = [&](const Atom& a) {
    if (a.regime >= sol.regimes()) throw std::out_of_range("ConditionalDistribution: regime out of range");
    return sol.sigma[a.regime] * sol.sigma[a.regime] * a.s * a.s * a.weight;
  };
  double den = 0.0;
  for (const Atom& a : dist.atoms) den += var_weight(a);
  if (!(den > 0.0)) throw std::invalid_argument("strategy_partial: all atoms have zero price or weight");
  double num = 0.0, value = 0.0, mean_s = 0.0;
  for (const Atom& a : dist.atoms) {
    num += var_weight(a) * sol.delta(a.s, a.regime, t);
    value += a.weight * sol.value(a.s, a.regime, t);
    mean_s += a.weight * a.s;
  }
  return {num / den, value, mean_s};
}

}  // namespace

Strategy strategy_partial(const ClaimSolution& sol, const ConditionalDistribution& dist, double t) {
  const PartialSums p = partial_sums(sol, dist, t);
  return {p.xi, p.value - p.xi * p.mean_s};
}

Strategy strategy_partial(const ClaimSolution& sol, const ConditionalDistribution& dist, double t,
                          double observed_price) {
  const PartialSums p = partial_sums(sol, dist, t);
  return {p.xi, p.value - p.xi * observed_price};
}

CostStatistics simulate_cost_process(const RegimeModel& model, const ClaimSolution& sol,
                                     const std::function<double(double)>& payoff, const CostSpec& spec) {
  model.validate();
  if (model.regimes() != sol.regimes()) {
    throw std::invalid_argument("simulate_cost_process: model and solution regimes differ");
  }
  if (spec.z0 >= model.regimes()) throw std::invalid_argument("simulate_cost_process: z0 out of range");
  if (spec.steps == 0 || spec.paths == 0) {
    throw std::invalid_argument("simulate_cost_process: need at least one path and one step");
  }
  const std::size_t r = model.regimes();
  const double horizon = sol.horizon();
  const double dt = horizon / static_cast<double>(spec.steps);
  const Eigen::MatrixXd transition = (model.lambda * dt).exp();

  // Unconditional regime law at every hedge date.
  std::vector<Eigen::RowVectorXd> law(spec.steps + 1);
  law[0] = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(r));
  law[0][static_cast<Eigen::Index>(spec.z0)] = 1.0;
  for (std::size_t k = 1; k <= spec.steps; ++k) law[k] = law[k - 1] * transition;

  const auto position = [&](double s, std::size_t z, std::size_t k) {
    const double t = std::min(horizon, static_cast<double>(k) * dt);
    if (spec.observation == Observation::full) return strategy_full(sol, s, z, t);
    ConditionalDistribution dist;
    for (std::size_t i = 0; i < r; ++i) dist.atoms.push_back({s, i, law[k][static_cast<Eigen::Index>(i)]});
    return strategy_partial(sol, dist, t, s);
  };

  CostStatistics stats;
  const CounterRng root(spec.seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform;
  const double lo = sol.prices.front(), hi = sol.prices.back();
  for (std::size_t p = 0; p < spec.paths; ++p) {
    CounterRng rng = root.split(p);
    double s = spec.s0;
    std::size_t z = spec.z0;
    Strategy pos = position(s, z, 0);
    const double v0 = pos.xi * s + pos.eta;
    double gains = 0.0;
    bool inside = true;
    for (std::size_t k = 0; k < spec.steps; ++k) {
      const double sig = model.sigma[z];
      const double next = s * std::exp(sig * std::sqrt(dt) * normal(rng) - 0.5 * sig * sig * dt);
      double draw = uniform(rng);
      std::size_t nz = r - 1;
      for (std::size_t j = 0; j < r; ++j) {
        draw -= transition(static_cast<Eigen::Index>(z), static_cast<Eigen::Index>(j));
        if (draw < 0.0) {
          nz = j;
          break;
        }
      }
      gains += pos.xi * (next - s);
      s = next;
      z = nz;
      if (!(s >= lo && s <= hi)) {
        inside = false;
        break;
      }
      pos = position(s, z, k + 1);
    }
    if (!inside) {
      ++stats.paths_outside;
      continue;
    }
    const double vt = pos.xi * s + pos.eta;
    const double cost = vt - v0 - gains;
    stats.costs.push_back(cost);
    stats.max_abs_cost = std::max(stats.max_abs_cost, std::abs(cost));
    stats.max_replication_error = std::max(stats.max_replication_error, std::abs(vt - payoff(s)));
  }
  stats.paths = stats.costs.size();
  if (stats.paths > 0) {
    double sum = 0.0;
    for (double c : stats.costs) sum += c;
    stats.mean_cost = sum / static_cast<double>(stats.paths);
    double ss = 0.0;
    for (double c : stats.costs) ss += (c - stats.mean_cost) * (c - stats.mean_cost);
    stats.var_cost = stats.paths > 1 ? ss / static_cast<double>(stats.paths - 1) : 0.0;
    stats.se_cost = std::sqrt(stats.var_cost / static_cast<double>(stats.paths));
  }
  return stats;
}

}  // namespace finfilt::hedging
