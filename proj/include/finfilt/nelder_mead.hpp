#pragma once

// Derivative-free minimisation by the Nelder-Mead simplex method with
// restarts from the best vertex.

#include <functional>

#include <Eigen/Dense>

namespace finfilt::optim {

struct NelderMeadOptions {
  /// Edge lengths of the initial simplex, one per coordinate (scalar if size 1).
  Eigen::VectorXd initial_step = Eigen::VectorXd::Constant(1, 0.1);
  int max_evaluations = 5000;
  /// Stop when the spread of function values over the simplex falls below
  /// ftol (absolute) and its diameter below xtol.
  double ftol = 1e-9;
  double xtol = 1e-7;
  /// Fresh simplices built around the best point after convergence.
  int restarts = 2;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

/// Minimises f. Non-finite values (or exceptions) are treated as +inf.
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& start, const NelderMeadOptions& options = {});

}  // namespace finfilt::optim
