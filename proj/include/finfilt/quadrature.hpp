#pragma once

// Mode-centred adaptive quadrature for integrals of the form
//
//     I[g] = ∫ g(x) exp(L(x)) dx
//
// where exp(L) is a (possibly very peaked) unimodal-ish weight on the real
// line. The rule is a uniform trapezoid lattice anchored at the mode of L,
// spaced relative to the local width of the peak, walked outward until the
// weight has dropped by `tail_drop` nats, and halved until the integral of
// the weight (and optionally one even moment) is stable. For analytic,
// rapidly decaying integrands this converges geometrically.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace finfilt::quad {

using LogFunction = std::function<double(double)>;

struct Window {
  double center = 0.0;
  double scale = 1.0;
  // Interval the lattice must span regardless of the tail criterion (for
  // instance all critical points of a polynomial log-weight). Empty when
  // cover_lo > cover_hi.
  double cover_lo = std::numeric_limits<double>::infinity();
  double cover_hi = -std::numeric_limits<double>::infinity();
  // `center` is already the global maximiser of L.
  bool mode_known = false;
};

struct Options {
  double tail_drop = 75.0;
  double rel_tol = 1e-13;
  int points_per_scale = 4;
  int max_halvings = 12;
  std::size_t max_nodes = std::size_t{1} << 21;
  // Also require convergence of ∫ ((x-mode)/scale)^k exp(L) for this even k.
  int moment_check = 0;
};

class NodeRule {
 public:
  NodeRule() = default;
  NodeRule(std::vector<double> nodes, std::vector<double> weights, double log_scale, double step,
           double mode, double scale);

  std::span<const double> nodes() const { return nodes_; }
  /// Weights relative to exp(log_scale()).
  std::span<const double> weights() const { return weights_; }
  double log_scale() const { return log_scale_; }
  double step() const { return step_; }
  double mode() const { return mode_; }
  double scale() const { return scale_; }
  std::size_t size() const { return nodes_.size(); }

  /// Σ w_i, so that ∫ exp(L) = exp(log_scale) * mass().
  double mass() const { return mass_; }
  double log_integral() const { return log_scale_ + std::log(mass_); }

  /// Σ w_i g(x_i); multiply by exp(log_scale()) for the integral.
  template <class F>
  double sum(F&& g) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) acc += weights_[i] * g(nodes_[i]);
    return acc;
  }

  /// ∫ g exp(L) / ∫ exp(L).
  template <class F>
  double mean(F&& g) const {
    return sum(std::forward<F>(g)) / mass_;
  }

 private:
  std::vector<double> nodes_;
  std::vector<double> weights_;
  double log_scale_ = 0.0;
  double step_ = 0.0;
  double mode_ = 0.0;
  double scale_ = 1.0;
  double mass_ = 0.0;
};

/// Throws QuadratureError when no finite maximum is found, the node budget
/// is exhausted, or halving does not converge.
NodeRule build_rule(const LogFunction& log_f, const Window& window, const Options& options = {});

/// Local maximiser of `log_f` near `window.center` (coarse scan, then
/// safeguarded Newton on finite differences).
double locate_mode(const LogFunction& log_f, const Window& window);

/// Evaluates c[0] + c[1] x + ... + c[d] x^d.
double polyval(std::span<const double> coeffs, double x);

/// Window for exp(polynomial) with even degree and negative leading
/// coefficient: the global mode and the span of all real critical points,
/// from the roots of the derivative.
Window polynomial_window(std::span<const double> coeffs);

}  // namespace finfilt::quad
