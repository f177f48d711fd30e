#include "finfilt/expfam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "finfilt/error.hpp"
#include "finfilt/nelder_mead.hpp"

namespace finfilt::expfam {

namespace {

std::vector<double> log_density_coeffs(const Theta& theta) {
  std::vector<double> c(theta.size() + 1, 0.0);
  std::copy(theta.begin(), theta.end(), c.begin() + 1);
  return c;
}

void check_theta(const Theta& theta) {
  if (theta.size() < 2 || theta.size() % 2 != 0) {
    throw std::invalid_argument("EP(m): order must be even and >= 2, got " +
                                std::to_string(theta.size()));
  }
  for (double t : theta) {
    if (!std::isfinite(t)) throw std::invalid_argument("EP(m): non-finite canonical parameter");
  }
  if (!(theta.back() < 0.0)) {
    throw std::invalid_argument("EP(m): leading canonical parameter must be negative, got " +
                                std::to_string(theta.back()));
  }
}

double dot(const Theta& theta, const std::vector<double>& eta) {
  double acc = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) acc += theta[i] * eta[i];
  return acc;
}

}  // namespace

void MomentVector::validate() const {
  if (values.empty()) throw std::invalid_argument("MomentVector: empty");
  if (!normalized) {
    if (!(values[0] > 0.0)) throw std::invalid_argument("MomentVector: alpha_0 must be positive");
    return;
  }
  if (values.size() >= 2) {
    const double var = values[1] - values[0] * values[0];
    if (var < -1e-12 * std::max(1.0, std::abs(values[1]))) {
      throw std::invalid_argument("MomentVector: eta_2 < eta_1^2");
    }
  }
}

MomentVector MomentVector::normalize() const {
  if (normalized) return *this;
  validate();
  MomentVector out;
  out.normalized = true;
  out.values.reserve(values.size() - 1);
  for (std::size_t i = 1; i < values.size(); ++i) out.values.push_back(values[i] / values[0]);
  return out;
}

HankelMatrix::HankelMatrix(const MomentVector& moments) {
  const MomentVector eta = moments.normalize();
  if (eta.size() < 2 || eta.size() % 2 != 0) {
    throw std::invalid_argument("HankelMatrix: need 2m normalized moments");
  }
  const Eigen::Index m = static_cast<Eigen::Index>(eta.size() / 2);
  entries_.resize(m, m);
  // 1-based η_{i+j} lives at 0-based index i + j - 1.
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) entries_(i, j) = eta.values[static_cast<std::size_t>(i + j + 1)];
  }
}

double HankelMatrix::min_eigenvalue() const {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(entries_, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double HankelMatrix::condition() const {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(entries_, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

ExpFamilyDensity::ExpFamilyDensity(Theta theta, const quad::Options& options)
    : theta_(std::move(theta)) {
  check_theta(theta_);
  const std::vector<double> coeffs = log_density_coeffs(theta_);
  const quad::Window window = quad::polynomial_window(coeffs);
  quad::Options opts = options;
  opts.moment_check = std::max(opts.moment_check, 2 * order());
  rule_ = std::make_shared<const quad::NodeRule>(quad::build_rule(
      [coeffs](double x) { return quad::polyval(coeffs, x); }, window, opts));
  psi_ = rule_->log_integral();
}

double ExpFamilyDensity::log_density(double x) const {
  double acc = 0.0;
  for (std::size_t k = theta_.size(); k-- > 0;) acc = (acc + theta_[k]) * x;
  return acc - psi_;
}

double ExpFamilyDensity::density(double x) const { return std::exp(log_density(x)); }

MomentVector ExpFamilyDensity::moments(int count) const {
  if (count < 1) throw std::invalid_argument("moments: count must be >= 1");
  std::vector<double> acc(static_cast<std::size_t>(count), 0.0);
  const auto nodes = rule_->nodes();
  const auto weights = rule_->weights();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    double p = weights[i];
    for (auto& a : acc) {
      p *= nodes[i];
      a += p;
    }
  }
  for (auto& a : acc) a /= rule_->mass();
  return MomentVector{std::move(acc), true};
}

Eigen::MatrixXd ExpFamilyDensity::fisher() const {
  const Eigen::Index m = order();
  const MomentVector eta = moments(order());
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(m, m);
  Eigen::VectorXd c(m);
  const auto nodes = rule_->nodes();
  const auto weights = rule_->weights();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    double p = 1.0;
    for (Eigen::Index k = 0; k < m; ++k) {
      p *= nodes[i];
      c[k] = p - eta.values[static_cast<std::size_t>(k)];
    }
    f.noalias() += weights[i] * (c * c.transpose());
  }
  return f / rule_->mass();
}

DensityEvaluator evaluator(const ExpFamilyDensity& q) {
  const double lo = q.rule().nodes().front();
  const double hi = q.rule().nodes().back();
  return DensityEvaluator{[q](double x) { return q.log_density(x); }, lo, hi};
}

double log_normalizer(const Theta& theta) { return ExpFamilyDensity(theta).log_normalizer(); }

MomentVector moments_from_theta(const Theta& theta, int count) {
  return ExpFamilyDensity(theta).moments(count);
}

Theta gaussian_theta(double mean, double variance, int order) {
  if (!(variance > 0.0)) throw std::invalid_argument("gaussian_theta: variance must be positive");
  if (order < 2 || order % 2 != 0) throw std::invalid_argument("gaussian_theta: bad order");
  Theta theta(static_cast<std::size_t>(order), 0.0);
  theta[0] = mean / variance;
  theta[1] = -0.5 / variance;
  if (order > 2) theta.back() = -1e-6 / std::pow(variance + mean * mean, order / 2.0);
  return theta;
}

Theta theta_from_moments_algebraic(const MomentVector& moments, const AlgebraicOptions& options) {
  const MomentVector eta = moments.normalize();
  const HankelMatrix hankel(eta);
  const Eigen::MatrixXd& m_eta = hankel.entries();
  const Eigen::Index m = m_eta.rows();

  const double cond = hankel.condition();
  if (!(cond <= options.max_condition)) {
    std::ostringstream os;
    os << "theta_from_moments_algebraic: M(eta) ill-conditioned, condition " << cond;
    throw IllConditionedError(os.str(), cond);
  }

  // The full moment matrix [η_{i+j}]_{i,j=0..m} (η_0 = 1) is singular for
  // moment sequences of atomic measures; no EP(m) member has those moments.
  Eigen::MatrixXd full(m + 1, m + 1);
  for (Eigen::Index i = 0; i <= m; ++i) {
    for (Eigen::Index j = 0; j <= m; ++j) {
      full(i, j) = (i + j == 0) ? 1.0 : eta.values[static_cast<std::size_t>(i + j - 1)];
    }
  }
  const Eigen::VectorXd d = full.diagonal().cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd full_scaled = d.asDiagonal() * full * d.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(full_scaled, Eigen::EigenvaluesOnly);
  const double full_lo = es.eigenvalues().minCoeff();
  const double full_cond = full_lo > 0.0 ? es.eigenvalues().maxCoeff() / full_lo
                                         : std::numeric_limits<double>::infinity();
  if (!(full_lo > 1e-12 * es.eigenvalues().maxCoeff())) {
    std::ostringstream os;
    os << "theta_from_moments_algebraic: moments are degenerate (not those of a density), "
          "scaled moment-matrix condition "
       << full_cond;
    throw IllConditionedError(os.str(), full_cond);
  }

  Eigen::VectorXd rhs(m);
  for (Eigen::Index i = 0; i < m; ++i) rhs[i] = static_cast<double>(i + 2) * eta.values[static_cast<std::size_t>(i)];

  // Jacobi-equilibrated Cholesky solve.
  const Eigen::VectorXd s = m_eta.diagonal().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd a = s.asDiagonal() * m_eta * s.asDiagonal();
  if (options.tikhonov) a.diagonal().array() += 1e-10 * a.trace() / static_cast<double>(m);
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) {
    throw IllConditionedError("theta_from_moments_algebraic: M(eta) not positive definite", cond);
  }
  const Eigen::VectorXd v = s.asDiagonal() * llt.solve(s.asDiagonal() * rhs);

  Theta theta(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) theta[static_cast<std::size_t>(i)] = -v[i] / static_cast<double>(i + 1);
  if (!(theta.back() < 0.0)) {
    throw BoundaryError("theta_from_moments_algebraic: recovered leading coefficient " +
                            std::to_string(theta.back()) + " >= 0 (density not integrable)",
                        theta.back());
  }
  return theta;
}

NewtonReport newton_moment_match(const MomentVector& moments, const Theta& initial,
                                 const NewtonOptions& options) {
  const MomentVector eta = moments.normalize();
  check_theta(initial);
  const std::size_t m = initial.size();
  if (eta.size() != m) {
    throw std::invalid_argument("newton_moment_match: need exactly m moments for EP(m)");
  }

  NewtonReport report;
  report.min_fisher_eigenvalue = std::numeric_limits<double>::infinity();
  Theta theta = initial;
  ExpFamilyDensity dens(theta);
  for (int it = 0;; ++it) {
    const MomentVector mom = dens.moments(static_cast<int>(m));
    Eigen::VectorXd g(static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < m; ++i) g[static_cast<Eigen::Index>(i)] = mom.values[i] - eta.values[i];
    report.residual = g.cwiseAbs().maxCoeff();
    report.iterations = it;
    if (report.residual < options.tolerance) break;
    if (it >= options.max_iterations) {
      throw ConvergenceError("newton_moment_match: no convergence after " +
                             std::to_string(it) + " iterations, residual " +
                             std::to_string(report.residual));
    }

    const Eigen::MatrixXd fisher = dens.fisher();
    report.max_fisher_asymmetry =
        std::max(report.max_fisher_asymmetry, (fisher - fisher.transpose()).cwiseAbs().maxCoeff());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fisher, Eigen::EigenvaluesOnly);
    report.min_fisher_eigenvalue = std::min(report.min_fisher_eigenvalue, es.eigenvalues().minCoeff());

    // Scale to unit diagonal before factoring; monomial covariances span
    // many orders of magnitude.
    const Eigen::VectorXd s = fisher.diagonal().cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd fs = s.asDiagonal() * fisher * s.asDiagonal();
    const Eigen::VectorXd step = -(s.asDiagonal() * fs.ldlt().solve(s.asDiagonal() * g));
    if (!step.allFinite()) throw ConvergenceError("newton_moment_match: singular Fisher matrix");

    const double objective = dens.log_normalizer() - dot(theta, eta.values);
    const double slope = g.dot(step);
    double t = 1.0;
    int boundary_hits = 0;
    bool accepted = false;
    for (int bt = 0; bt < 80; ++bt, t *= 0.5) {
      Theta cand(m);
      for (std::size_t i = 0; i < m; ++i) cand[i] = theta[i] + t * step[static_cast<Eigen::Index>(i)];
      if (!(cand.back() < 0.0)) {
        ++boundary_hits;
        continue;
      }
      try {
        ExpFamilyDensity trial(cand);
        const double obj = trial.log_normalizer() - dot(cand, eta.values);
        if (obj <= objective + 1e-4 * t * slope + 1e-13 * (1.0 + std::abs(objective))) {
          theta = std::move(cand);
          dens = std::move(trial);
          accepted = true;
          break;
        }
      } catch (const QuadratureError&) {
        // Too extreme a trial point; shorten, unless even tiny steps fail,
        // which happens when the iterate itself sits next to the boundary.
        if (t < 1e-6) break;
      }
    }
    if (!accepted) {
      if (boundary_hits > 40) {
        throw BoundaryError("newton_moment_match: iterates driven to the manifold boundary",
                            theta.back());
      }
      throw ConvergenceError("newton_moment_match: line search failed, residual " +
                             std::to_string(report.residual));
    }
  }
  report.theta = theta;
  if (!std::isfinite(report.min_fisher_eigenvalue)) report.min_fisher_eigenvalue = 0.0;
  return report;
}

Theta theta_from_moments_iterative(const MomentVector& moments, const Theta& initial,
                                   const NewtonOptions& options) {
  return newton_moment_match(moments, initial, options).theta;
}

Theta theta_from_moments_dual(const MomentVector& moments, const NewtonOptions& options) {
  const MomentVector eta = moments.normalize();
  const std::size_t m = eta.size();
  if (m < 2 || m % 2 != 0) throw std::invalid_argument("theta_from_moments_dual: need an even number of moments");
  const double mu = eta[0];
  const double var = eta[1] - mu * mu;
  if (!(var > 0.0)) throw DomainError("theta_from_moments_dual: moments have non-positive variance");
  const double sd = std::sqrt(var);

  // Binomial table and moments of z = (x - mu) / sd.
  std::vector<std::vector<double>> binom(m + 1, std::vector<double>(m + 1, 0.0));
  for (std::size_t i = 0; i <= m; ++i) {
    binom[i][0] = 1.0;
    for (std::size_t j = 1; j <= i; ++j) binom[i][j] = binom[i - 1][j - 1] + (j < i ? binom[i - 1][j] : 0.0);
  }
  std::vector<double> zeta(m, 0.0);
  for (std::size_t k = 1; k <= m; ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j <= k; ++j) {
      const double raw = j == 0 ? 1.0 : eta[j - 1];
      acc += binom[k][j] * raw * std::pow(-mu, static_cast<double>(k - j));
    }
    zeta[k - 1] = acc / std::pow(sd, static_cast<double>(k));
  }

  // Leading coefficient as -exp(a) keeps every simplex vertex inside EP(m).
  const auto unpack = [m](const Eigen::VectorXd& a) {
    Theta phi(m);
    for (std::size_t i = 0; i + 1 < m; ++i) phi[i] = a[static_cast<Eigen::Index>(i)];
    phi[m - 1] = -std::exp(a[static_cast<Eigen::Index>(m - 1)]);
    return phi;
  };
  const auto dual = [&](const Eigen::VectorXd& a) {
    const Theta phi = unpack(a);
    return log_normalizer(phi) - dot(phi, zeta);
  };
  Eigen::VectorXd start = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
  if (m == 2) {
    start[1] = std::log(0.5);
  } else {
    start[1] = -0.5;
    start[static_cast<Eigen::Index>(m - 1)] = std::log(0.05);
  }
  optim::NelderMeadOptions nm;
  nm.initial_step = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(m), 0.3);
  nm.max_evaluations = static_cast<int>(400 * m * m);
  nm.ftol = 1e-12;
  nm.xtol = 1e-7;
  const optim::NelderMeadResult best = optim::nelder_mead(dual, start, nm);
  const Theta phi = newton_moment_match(MomentVector{zeta, true}, unpack(best.x), options).theta;

  // Back to x: Σ φ_i ((x - mu)/sd)^i expanded in powers of x.
  Theta theta(m, 0.0);
  for (std::size_t i = 1; i <= m; ++i) {
    const double c = phi[i - 1] / std::pow(sd, static_cast<double>(i));
    for (std::size_t j = 1; j <= i; ++j) {
      theta[j - 1] += c * binom[i][j] * std::pow(-mu, static_cast<double>(i - j));
    }
  }
  return newton_moment_match(eta, theta, options).theta;
}

namespace {

quad::NodeRule evaluator_rule(const DensityEvaluator& p, int moment_check) {
  if (!(p.hi > p.lo)) throw std::invalid_argument("DensityEvaluator: empty support window");
  quad::Window w;
  w.center = 0.5 * (p.lo + p.hi);
  w.scale = (p.hi - p.lo) / 20.0;
  w.cover_lo = p.lo;
  w.cover_hi = p.hi;
  quad::Options opts;
  opts.moment_check = moment_check;
  return quad::build_rule(p.log_density, w, opts);
}

}  // namespace

double kl_divergence(const DensityEvaluator& p, const ExpFamilyDensity& q) {
  const quad::NodeRule rule = evaluator_rule(p, 0);
  const double mass = std::exp(rule.log_integral());
  if (std::abs(mass - 1.0) > 1e-6) {
    throw DomainError("kl_divergence: p integrates to " + std::to_string(mass) +
                      " over the quadrature window, expected 1");
  }
  const double d = rule.mean([&](double x) {
    const double lp = p.log_density(x);
    if (!std::isfinite(lp)) return 0.0;
    return lp - q.log_density(x);
  });
  return d;
}

ExpFamilyDensity kl_project(const DensityEvaluator& p, int order, const NewtonOptions& options) {
  if (order < 2 || order % 2 != 0) throw std::invalid_argument("kl_project: order must be even");
  const quad::NodeRule rule = evaluator_rule(p, 2 * order);
  std::vector<double> eta(static_cast<std::size_t>(2 * order));
  for (std::size_t j = 0; j < eta.size(); ++j) {
    const double power = static_cast<double>(j + 1);
    eta[j] = rule.mean([power](double x) { return std::pow(x, power); });
  }
  const MomentVector target{std::vector<double>(eta.begin(), eta.begin() + order), true};

  Theta start = gaussian_theta(eta[0], eta[1] - eta[0] * eta[0], order);
  if (order > 2) {
    try {
      start = theta_from_moments_algebraic(MomentVector{eta, true});
    } catch (const NumericalError&) {
      // keep the Gaussian start
    }
  }
  try {
    return ExpFamilyDensity(theta_from_moments_iterative(target, start, options));
  } catch (const NumericalError&) {
    if (order == 2) throw;
  }
  try {
    return ExpFamilyDensity(theta_from_moments_iterative(
        target, gaussian_theta(eta[0], eta[1] - eta[0] * eta[0], order), options));
  } catch (const NumericalError&) {
    return ExpFamilyDensity(theta_from_moments_dual(target, options));
  }
}

double expectation(const ExpFamilyDensity& q, const std::function<double(double)>& f) {
  const double value = q.rule().mean(f);
  // Cross-check on a wider, finer lattice.
  quad::Options wide;
  wide.tail_drop = 115.0;
  wide.points_per_scale = 8;
  const std::vector<double> coeffs = log_density_coeffs(q.theta());
  const quad::NodeRule check = quad::build_rule(
      [&coeffs](double x) { return quad::polyval(coeffs, x); }, quad::polynomial_window(coeffs),
      wide);
  const double reference = check.mean(f);
  if (!(std::abs(reference - value) <= 1e-9 * std::max(1.0, std::abs(reference)))) {
    throw QuadratureError("expectation: integral did not converge (" + std::to_string(value) +
                          " vs " + std::to_string(reference) + ")");
  }
  return reference;
}

}  // namespace finfilt::expfam
