#pragma once

// Risk-minimising hedging of a European claim on a price driven by a hidden
// Markov regime:
//
//     dS = σ(Z) S dW,   Z a finite-state chain with intensity matrix Λ.
//
// u_t(x, i) = E{H | S_t = x, Z_t = i} solves
//
//     ∂_t u(x, i) + ½σ²(i) x² ∂²_x u(x, i) + Σ_j Λ_ij u(x, j) = 0,  u_T = H,
//
// and the full-information strategy holds ξ = ∂u/∂x shares.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace finfilt::hedging {

struct RegimeModel {
  std::vector<double> sigma;
  Eigen::MatrixXd lambda;
  double horizon = 1.0;

  std::size_t regimes() const { return sigma.size(); }
  /// Positive σ, square Λ of matching size with non-negative off-diagonals
  /// and rows summing to zero, positive horizon.
  void validate() const;
};

enum class PayoffKind { call, put, identity };

struct Claim {
  PayoffKind kind = PayoffKind::call;
  double strike = 100.0;

  double operator()(double x) const;
};

std::string to_string(PayoffKind kind);
PayoffKind parse_payoff_kind(const std::string& name);

struct GridSpec {
  std::size_t price_nodes = 400;
  std::size_t time_steps = 400;
  /// Price placed exactly on a node (normally the strike).
  double center = 100.0;
  /// Half-width of the log-price range; 0 means 6 σ_max sqrt(T).
  double log_half_width = 0.0;
  /// Implicit Euler half-steps replacing the first two Crank-Nicolson steps.
  bool rannacher = true;
};

struct ClaimSolution {
  std::vector<double> times;
  std::vector<double> prices;
  /// u[i](n, j) = u_{times[n]}(prices[j], i).
  std::vector<Eigen::MatrixXd> u;
  /// ∂u/∂x on the same layout.
  std::vector<Eigen::MatrixXd> xi;
  std::vector<double> sigma;
  std::vector<std::string> warnings;

  std::size_t regimes() const { return u.size(); }
  double horizon() const { return times.back(); }
  /// Linear interpolation in time and price; DomainError outside the grid.
  double value(double s, std::size_t regime, double t) const;
  double delta(double s, std::size_t regime, double t) const;
};

/// Backward Crank-Nicolson on a log-spaced price grid with the second
/// derivative taken in the price variable (so linear payoffs are reproduced
/// exactly) and ∂²u/∂x² = 0 at both ends. Regime coupling is implicit and
/// solved by block Gauss-Seidel.
ClaimSolution solve_claim_pde(const RegimeModel& model, const std::function<double(double)>& payoff,
                              const GridSpec& grid);

struct Strategy {
  double xi = 0.0;
  double eta = 0.0;
};

/// ξ = ∂u/∂x(s, i), η = u_t(s, i) − ξ s.
Strategy strategy_full(const ClaimSolution& sol, double s, std::size_t regime, double t);

struct Atom {
  double s = 0.0;
  std::size_t regime = 0;
  double weight = 0.0;
};

struct ConditionalDistribution {
  std::vector<Atom> atoms;

  /// Non-empty, weights non-negative and summing to one within 1e-9.
  void validate() const;
};

/// ξ^Y = Σ w ξ σ² s² / Σ w σ² s². η^Y = Σ w u − ξ^Y · Σ w s.
Strategy strategy_partial(const ClaimSolution& sol, const ConditionalDistribution& dist, double t);
/// As above with η^Y = Σ w u − ξ^Y · observed_price.
Strategy strategy_partial(const ClaimSolution& sol, const ConditionalDistribution& dist, double t,
                          double observed_price);

enum class Observation { full, partial };

struct CostSpec {
  std::size_t paths = 10000;
  std::size_t steps = 1000;
  double s0 = 100.0;
  std::size_t z0 = 0;
  std::uint64_t seed = 1;
  Observation observation = Observation::full;
};

struct CostStatistics {
  /// Paths that stayed on the price grid; the others are dropped.
  std::size_t paths = 0;
  std::size_t paths_outside = 0;
  double mean_cost = 0.0;
  double var_cost = 0.0;
  double se_cost = 0.0;
  double max_abs_cost = 0.0;
  /// max |ξ_T S_T + η_T − H(S_T)|.
  double max_replication_error = 0.0;
  /// C_T − C_0 per retained path.
  std::vector<double> costs;
};

/// Simulates (S, Z) on `steps` equal intervals and accumulates
/// C_T − C_0 = V_T − V_0 − Σ ξ ΔS. Under partial observation the hedger sees
/// the price but not the regime and uses the unconditional regime law
/// p_0 e^{Λt}.
CostStatistics simulate_cost_process(const RegimeModel& model, const ClaimSolution& sol,
                                     const std::function<double(double)>& payoff, const CostSpec& spec);

}  // namespace finfilt::hedging
