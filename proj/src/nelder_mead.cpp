#include "finfilt/nelder_mead.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace finfilt::optim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& start, const NelderMeadOptions& options) {
  const Eigen::Index n = start.size();
  if (n == 0) throw std::invalid_argument("nelder_mead: empty start vector");
  Eigen::VectorXd step(n);
  if (options.initial_step.size() == 1) {
    step.setConstant(options.initial_step[0]);
  } else if (options.initial_step.size() == n) {
    step = options.initial_step;
  } else {
    throw std::invalid_argument("nelder_mead: initial_step has the wrong size");
  }

  NelderMeadResult result;
  const auto eval = [&](const Eigen::VectorXd& x) {
    ++result.evaluations;
    double v;
    try {
      v = f(x);
    } catch (const std::exception&) {
      v = kInf;
    }
    return std::isfinite(v) ? v : kInf;
  };

  Eigen::VectorXd best = start;
  double best_value = eval(start);
  if (!std::isfinite(best_value)) throw std::invalid_argument("nelder_mead: f is not finite at the start");

  // Standard coefficients.
  const double alpha = 1.0, gamma = 2.0, rho = 0.5, shrink = 0.5;

  bool converged = false;
  for (int round = 0; round <= options.restarts; ++round) {
    std::vector<Eigen::VectorXd> simplex(static_cast<std::size_t>(n + 1), best);
    std::vector<double> values(static_cast<std::size_t>(n + 1), best_value);
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& v = simplex[static_cast<std::size_t>(i + 1)];
      v[i] += step[i];
      values[static_cast<std::size_t>(i + 1)] = eval(v);
    }
    std::vector<std::size_t> order(simplex.size());

    converged = false;
    while (result.evaluations < options.max_evaluations) {
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
      const std::size_t lo = order.front();
      const std::size_t hi = order.back();
      const std::size_t second = order[order.size() - 2];

      double diameter = 0.0;
      for (const auto& v : simplex) diameter = std::max(diameter, (v - simplex[lo]).cwiseAbs().maxCoeff());
      if (std::abs(values[hi] - values[lo]) <= options.ftol && diameter <= options.xtol) {
        converged = true;
        break;
      }
      ++result.iterations;

      Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
      for (std::size_t i = 0; i < simplex.size(); ++i) {
        if (i != hi) centroid += simplex[i];
      }
      centroid /= static_cast<double>(n);

      const Eigen::VectorXd reflected = centroid + alpha * (centroid - simplex[hi]);
      const double fr = eval(reflected);
      if (fr < values[lo]) {
        const Eigen::VectorXd expanded = centroid + gamma * (reflected - centroid);
        const double fe = eval(expanded);
        if (fe < fr) {
          simplex[hi] = expanded;
          values[hi] = fe;
        } else {
          simplex[hi] = reflected;
          values[hi] = fr;
        }
        continue;
      }
      if (fr < values[second]) {
        simplex[hi] = reflected;
        values[hi] = fr;
        continue;
      }
      // Contraction, outside or inside.
      const bool outside = fr < values[hi];
      const Eigen::VectorXd contracted =
          outside ? Eigen::VectorXd(centroid + rho * (reflected - centroid))
                  : Eigen::VectorXd(centroid + rho * (simplex[hi] - centroid));
      const double fc = eval(contracted);
      if (fc < (outside ? fr : values[hi])) {
        simplex[hi] = contracted;
        values[hi] = fc;
        continue;
      }
      for (std::size_t i = 0; i < simplex.size(); ++i) {
        if (i == lo) continue;
        simplex[i] = simplex[lo] + shrink * (simplex[i] - simplex[lo]);
        values[i] = eval(simplex[i]);
      }
    }

    const auto it = std::min_element(values.begin(), values.end());
    const Eigen::VectorXd round_best = simplex[static_cast<std::size_t>(it - values.begin())];
    const double improvement = best_value - *it;
    if (*it <= best_value) {
      best = round_best;
      best_value = *it;
    }
    if (!converged) break;
    // A restart that gains nothing confirms the optimum.
    if (round > 0 && improvement <= options.ftol) break;
  }

  result.x = best;
  result.value = best_value;
  result.converged = converged;
  return result;
}

}  // namespace finfilt::optim
