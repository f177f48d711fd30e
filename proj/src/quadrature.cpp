#include "finfilt/quadrature.hpp"

#include <algorithm>
#include <complex>
#include <string>

#include <unsupported/Eigen/Polynomials>

#include "finfilt/error.hpp"

namespace finfilt::quad {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_eval(const LogFunction& f, double x) {
  const double v = f(x);
  return std::isnan(v) ? kNegInf : v;
}

// Distance from the mode at which log_f has dropped by 1/2 (one standard
// deviation for a Gaussian), smaller of the two sides.
double drop_scale(const LogFunction& f, double mode, double lmode, double guess) {
  const double target = lmode - 0.5;
  double best = std::numeric_limits<double>::infinity();
  const double floor = 1e-12 * std::max(1.0, std::abs(mode));
  for (double side : {1.0, -1.0}) {
    double lo = 0.0;
    double hi = std::max(guess, floor);
    if (safe_eval(f, mode + side * hi) >= target) {
      lo = hi;
      int it = 0;
      while (safe_eval(f, mode + side * hi) >= target) {
        lo = hi;
        hi *= 2.0;
        if (++it > 200) break;
      }
      if (it > 200) continue;  // flat on this side; the other side decides
    } else {
      int it = 0;
      lo = hi / 2.0;
      while (safe_eval(f, mode + side * lo) < target && lo > floor) {
        hi = lo;
        lo /= 2.0;
        if (++it > 200) break;
      }
      if (lo <= floor) {
        best = std::min(best, hi);
        continue;
      }
    }
    for (int k = 0; k < 12; ++k) {
      const double mid = std::sqrt(lo * hi);
      if (safe_eval(f, mode + side * mid) >= target) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    best = std::min(best, std::sqrt(lo * hi));
  }
  if (!std::isfinite(best)) {
    throw QuadratureError("quadrature: log-integrand does not decay away from its mode");
  }
  return best;
}

struct Lattice {
  double origin;
  double step;
  std::vector<double> x;
  std::vector<double> l;
};

double lattice_sum(const Lattice& lat, double lmax, double mode, double scale, int k,
                   double* moment_sum) {
  double s0 = 0.0;
  double sk = 0.0;
  for (std::size_t i = 0; i < lat.x.size(); ++i) {
    const double w = std::exp(lat.l[i] - lmax);
    s0 += w;
    if (k > 0) sk += w * std::pow((lat.x[i] - mode) / scale, k);
  }
  if (moment_sum != nullptr) *moment_sum = sk * lat.step;
  return s0 * lat.step;
}

}  // namespace

NodeRule::NodeRule(std::vector<double> nodes, std::vector<double> weights, double log_scale,
                   double step, double mode, double scale)
    : nodes_(std::move(nodes)),
      weights_(std::move(weights)),
      log_scale_(log_scale),
      step_(step),
      mode_(mode),
      scale_(scale) {
  mass_ = 0.0;
  for (double w : weights_) mass_ += w;
}

double polyval(std::span<const double> coeffs, double x) {
  double acc = 0.0;
  for (std::size_t k = coeffs.size(); k-- > 0;) acc = acc * x + coeffs[k];
  return acc;
}

double locate_mode(const LogFunction& log_f, const Window& window) {
  const double s0 = window.scale > 0.0 ? window.scale : 1.0;
  double x = window.center;
  double fx = safe_eval(log_f, x);
  for (int k = -20; k <= 20; ++k) {
    const double xk = window.center + 0.5 * k * s0;
    const double fk = safe_eval(log_f, xk);
    if (fk > fx) {
      x = xk;
      fx = fk;
    }
  }
  if (!std::isfinite(fx)) {
    throw QuadratureError("quadrature: no finite value of the log-integrand near the window");
  }
  double s = s0;
  for (int it = 0; it < 100; ++it) {
    const double e = 1e-4 * s;
    const double fp = safe_eval(log_f, x + e);
    const double fm = safe_eval(log_f, x - e);
    const double d1 = (fp - fm) / (2.0 * e);
    const double d2 = (fp - 2.0 * fx + fm) / (e * e);
    double step;
    if (std::isfinite(d1) && std::isfinite(d2) && d2 < 0.0) {
      s = std::min(1.0 / std::sqrt(-d2), 1e3 * s0);
      step = std::clamp(-d1 / d2, -4.0 * s, 4.0 * s);
    } else if (std::isfinite(d1)) {
      step = (d1 > 0.0 ? 1.0 : -1.0) * s;
    } else {
      step = (fp > fm ? 1.0 : -1.0) * s;
    }
    bool improved = false;
    for (int bt = 0; bt < 60; ++bt) {
      const double fn = safe_eval(log_f, x + step);
      if (fn >= fx) {
        x += step;
        fx = fn;
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved || std::abs(step) < 1e-12 * (s + std::abs(x))) break;
  }
  return x;
}

Window polynomial_window(std::span<const double> coeffs) {
  const std::size_t degree = coeffs.size() - 1;
  if (coeffs.size() < 3 || degree % 2 != 0 || !(coeffs.back() < 0.0)) {
    throw std::invalid_argument(
        "polynomial_window: need even degree >= 2 and a negative leading coefficient");
  }
  Eigen::VectorXd deriv(static_cast<Eigen::Index>(degree));
  for (std::size_t k = 0; k < degree; ++k) deriv[k] = static_cast<double>(k + 1) * coeffs[k + 1];

  std::vector<double> critical;
  if (degree == 2) {
    critical.push_back(-deriv[0] / deriv[1]);
  } else {
    Eigen::PolynomialSolver<double, Eigen::Dynamic> solver;
    solver.compute(deriv);
    for (const auto& r : solver.roots()) {
      if (std::abs(r.imag()) <= 1e-3 * (1.0 + std::abs(r.real()))) critical.push_back(r.real());
    }
    // An odd-degree real polynomial always has a real root.
    if (critical.empty()) {
      double best = 0.0;
      double bi = std::numeric_limits<double>::infinity();
      for (const auto& r : solver.roots()) {
        if (std::abs(r.imag()) < bi) {
          bi = std::abs(r.imag());
          best = r.real();
        }
      }
      critical.push_back(best);
    }
  }

  Window w;
  w.mode_known = true;
  double best = kNegInf;
  for (double c : critical) {
    const double v = polyval(coeffs, c);
    if (v > best) {
      best = v;
      w.center = c;
    }
  }
  w.cover_lo = *std::min_element(critical.begin(), critical.end());
  w.cover_hi = *std::max_element(critical.begin(), critical.end());

  double curv = 0.0;
  for (std::size_t k = 2; k <= degree; ++k) {
    curv += static_cast<double>(k * (k - 1)) * coeffs[k] * std::pow(w.center, static_cast<double>(k - 2));
  }
  w.scale = curv < 0.0 ? 1.0 / std::sqrt(-curv)
                       : std::pow(-coeffs.back(), -1.0 / static_cast<double>(degree));
  return w;
}

NodeRule build_rule(const LogFunction& log_f, const Window& window, const Options& options) {
  const double mode = window.mode_known ? window.center : locate_mode(log_f, window);
  const double lmode = safe_eval(log_f, mode);
  if (!std::isfinite(lmode)) {
    throw QuadratureError("quadrature: log-integrand is not finite at its mode");
  }
  const double scale = drop_scale(log_f, mode, lmode, window.scale > 0.0 ? window.scale : 1.0);
  const double h0 = scale / options.points_per_scale;

  // Walk outward from the mode until the weight is negligible, the cover
  // interval is spanned and the log-weight is decreasing.
  std::vector<double> right_x, right_l, left_x, left_l;
  double lmax = lmode;
  const auto walk = [&](double dir, std::vector<double>& xs, std::vector<double>& ls) {
    double prev = lmode;
    for (std::size_t i = 1;; ++i) {
      const double x = mode + dir * static_cast<double>(i) * h0;
      const double l = safe_eval(log_f, x);
      xs.push_back(x);
      ls.push_back(l);
      lmax = std::max(lmax, l);
      const bool covered = dir > 0 ? x >= window.cover_hi : x <= window.cover_lo;
      if (covered && l < lmax - options.tail_drop && l <= prev) break;
      if (xs.size() > options.max_nodes / 2) {
        throw QuadratureError("quadrature: node budget exhausted while walking the tail (scale " +
                              std::to_string(scale) + ")");
      }
      prev = l;
    }
  };
  walk(1.0, right_x, right_l);
  walk(-1.0, left_x, left_l);

  Lattice lat;
  lat.step = h0;
  lat.x.reserve(left_x.size() + right_x.size() + 1);
  lat.l.reserve(lat.x.capacity());
  for (std::size_t i = left_x.size(); i-- > 0;) {
    lat.x.push_back(left_x[i]);
    lat.l.push_back(left_l[i]);
  }
  lat.x.push_back(mode);
  lat.l.push_back(lmode);
  for (std::size_t i = 0; i < right_x.size(); ++i) {
    lat.x.push_back(right_x[i]);
    lat.l.push_back(right_l[i]);
  }
  lat.origin = lat.x.front();

  const int k = options.moment_check;
  double mom = 0.0;
  double total = lattice_sum(lat, lmax, mode, scale, k, &mom);
  bool converged = false;
  for (int halving = 0; halving < options.max_halvings; ++halving) {
    if (2 * lat.x.size() > options.max_nodes) break;
    Lattice fine;
    fine.step = lat.step / 2.0;
    fine.origin = lat.origin;
    fine.x.reserve(2 * lat.x.size());
    fine.l.reserve(2 * lat.x.size());
    for (std::size_t i = 0; i < lat.x.size(); ++i) {
      fine.x.push_back(lat.x[i]);
      fine.l.push_back(lat.l[i]);
      if (i + 1 < lat.x.size()) {
        const double xm = lat.x[i] + fine.step;
        const double lm = safe_eval(log_f, xm);
        lmax = std::max(lmax, lm);
        fine.x.push_back(xm);
        fine.l.push_back(lm);
      }
    }
    double fine_mom = 0.0;
    const double fine_total = lattice_sum(fine, lmax, mode, scale, k, &fine_mom);
    // `total` may have been computed against a smaller lmax; rescale.
    const double coarse_total = lattice_sum(lat, lmax, mode, scale, k, &mom);
    const bool ok0 = std::abs(fine_total - coarse_total) <= options.rel_tol * fine_total;
    const bool okk = k == 0 || std::abs(fine_mom - mom) <= options.rel_tol * std::abs(fine_mom) +
                                                              options.rel_tol * fine_total;
    lat = std::move(fine);
    total = fine_total;
    mom = fine_mom;
    if (ok0 && okk) {
      converged = true;
      break;
    }
  }
  if (!converged || !(total > 0.0)) {
    throw QuadratureError("quadrature: trapezoid refinement did not converge (nodes " +
                          std::to_string(lat.x.size()) + ")");
  }

  std::vector<double> nodes;
  std::vector<double> weights;
  nodes.reserve(lat.x.size());
  weights.reserve(lat.x.size());
  const double cutoff = -(options.tail_drop + 40.0);
  for (std::size_t i = 0; i < lat.x.size(); ++i) {
    const double rel = lat.l[i] - lmax;
    if (rel < cutoff) continue;
    nodes.push_back(lat.x[i]);
    weights.push_back(lat.step * std::exp(rel));
  }
  return NodeRule(std::move(nodes), std::move(weights), lmax, lat.step, mode, scale);
}

}  // namespace finfilt::quad
