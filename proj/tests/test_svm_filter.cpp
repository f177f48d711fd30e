#include <doctest.h>

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "finfilt/error.hpp"
#include "finfilt/exact_oracle.hpp"
#include "finfilt/svm_filter.hpp"
#include "oracles.hpp"

using namespace finfilt;
using namespace finfilt::svm;

namespace {

double rmse(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc / static_cast<double>(a.size()));
}

std::vector<double> tail(const std::vector<double>& v) { return {v.begin() + 1, v.end()}; }

}  // namespace

TEST_SUITE("svm_filter") {
  TEST_CASE("degenerate AR path stays put") {
    SvmParams p{1.0, 0.0, 0.0};
    const SvmPath path = simulate_svm(p, 50, GaussianPrior{0.7, 0.0}, 3);
    for (double x : path.x) CHECK(x == 0.7);
  }

  TEST_CASE("simulated state has the stationary AR(1) variance") {
    const SvmParams p{0.95, 0.3, 0.0};
    const double v = p.stationary_variance();
    CHECK(v == doctest::Approx(0.923).epsilon(1e-3));
    const std::size_t n = 100000;
    const SvmPath path = simulate_svm(p, n, GaussianPrior{0.0, v}, 11);
    const double mean = std::accumulate(path.x.begin(), path.x.end(), 0.0) / n;
    double s2 = 0.0;
    for (double x : path.x) s2 += (x - mean) * (x - mean);
    s2 /= static_cast<double>(n - 1);
    // Var of the sample variance of a Gaussian AR(1): 2 v^2 (1 + ρ²)/(1 − ρ²) / n.
    const double se = std::sqrt(2.0 * v * v * (1.0 + p.rho * p.rho) / (1.0 - p.rho * p.rho) / n);
    CHECK(std::abs(s2 - v) < 3.0 * se);
  }

  TEST_CASE("level shift scales returns and seeds reproduce paths") {
    const SvmParams p{0.9, 0.2, -1.0};
    SvmParams q = p;
    q.gamma += 2.0;
    const SvmPath a = simulate_svm(p, 200, GaussianPrior{0.0, 1.0}, 42);
    const SvmPath b = simulate_svm(q, 200, GaussianPrior{0.0, 1.0}, 42);
    const SvmPath c = simulate_svm(p, 200, GaussianPrior{0.0, 1.0}, 42);
    for (std::size_t t = 0; t < a.y.size(); ++t) {
      CHECK(b.y[t] == doctest::Approx(a.y[t] * std::exp(1.0)).epsilon(1e-14));
      CHECK(c.y[t] == a.y[t]);
      CHECK(c.x[t] == a.x[t]);
    }
    CHECK(simulate_svm(p, 200, GaussianPrior{0.0, 1.0}, 43).y[5] != a.y[5]);
  }

  TEST_CASE("rho = 0 makes the step independent of the prior") {
    const SvmParams p{0.0, 0.4, -1.0};
    for (int m : {2, 4}) {
      const auto s1 = projection_step(initial_state(GaussianPrior{0.0, 1.0}, m, RecoveryMode::moments_2m), 0.3, p);
      const auto s2 = projection_step(initial_state(GaussianPrior{3.0, 0.5}, m, RecoveryMode::moments_2m), 0.3, p);
      for (std::size_t i = 0; i < s1.eta().size(); ++i) {
        CHECK(s1.eta()[i] == doctest::Approx(s2.eta()[i]).epsilon(1e-11));
      }
      // The predicted density is N(0, σ²): check the posterior against it.
      const double g = p.gamma;
      const auto post = ref::trapezoid(
          [&](double x) {
            return x * std::exp(-0.5 * (x + g) - 0.045 * std::exp(-x - g)) *
                   ref::normal_pdf(x, 0.0, 0.16);
          },
          -6, 6, 20000);
      const auto norm = ref::trapezoid(
          [&](double x) {
            return std::exp(-0.5 * (x + g) - 0.045 * std::exp(-x - g)) *
                   ref::normal_pdf(x, 0.0, 0.16);
          },
          -6, 6, 20000);
      CHECK(s1.eta()[0] == doctest::Approx(post / norm).epsilon(1e-10));
    }
  }

  TEST_CASE("one step from a Gaussian prior matches the grid oracle") {
    const SvmParams p{0.9, 0.2, -1.0};
    const GaussianPrior prior{0.0, 0.04};
    const double y = 0.05;
    const auto grid = oracle::GridDensity::tabulate(-5.0, 5.0, 4000,
                                                    [](double x) { return -0.5 * x * x / 0.04; });
    const auto post = oracle::bayes_step(grid, y, p);
    const auto eta = oracle::grid_moments(post, 2);

    const auto s2 = projection_step(initial_state(prior, 2, RecoveryMode::moments_2m), y, p);
    CHECK(s2.eta()[0] == doctest::Approx(eta[0]).epsilon(1e-4));
    CHECK(std::abs(s2.eta()[0] - eta[0]) < 1e-4);
    CHECK(std::abs(s2.eta()[1] - eta[1]) < 1e-4);

    const auto s4 = projection_step(initial_state(prior, 4, RecoveryMode::moments_2m), y, p);
    const double kl2 = oracle::kl_to_grid(post, s2.density());
    const double kl4 = oracle::kl_to_grid(post, s4.density());
    CHECK(kl2 > 0.0);
    CHECK(kl4 <= kl2);
  }

  TEST_CASE("volatility estimate") {
    const auto gauss = initial_state(expfam::Theta{0.0, -0.5}, RecoveryMode::moments_m);
    CHECK(volatility_estimate(gauss, SvmParams{0.9, 0.2, 0.0}) ==
          doctest::Approx(std::exp(0.125)).epsilon(1e-10));
    CHECK(volatility_estimate(gauss, SvmParams{0.9, 0.2, -2.0}) ==
          doctest::Approx(std::exp(0.125 - 1.0)).epsilon(1e-10));
    CHECK(std::exp(0.125) == doctest::Approx(1.1331).epsilon(1e-4));

    const auto quartic = initial_state(expfam::Theta{0.0, 0.0, 0.0, -1.0}, RecoveryMode::moments_m);
    const double num = ref::trapezoid([](double x) { return std::exp(0.5 * x - std::pow(x, 4)); }, -6, 6, 60000);
    const double den = ref::trapezoid([](double x) { return std::exp(-std::pow(x, 4)); }, -6, 6, 60000);
    CHECK(std::abs(volatility_estimate(quartic, SvmParams{0.9, 0.2, 0.0}) - num / den) < 1e-8);
  }

  TEST_CASE("near-deterministic state reproduces the closed-form volatility") {
    const SvmParams p{1.0, 1e-4, -2.0};
    const double c = 0.4;
    const SvmPath path = simulate_svm(p, 21, GaussianPrior{c, 0.0}, 5);
    const auto run = run_filter(tail(path.y), p, initial_state(GaussianPrior{c, 1e-6}, 2, RecoveryMode::moments_2m));
    REQUIRE_FALSE(run.failed_at.has_value());
    for (const auto& r : run.records) {
      CHECK(r.volatility == doctest::Approx(std::exp(0.5 * (c + p.gamma))).epsilon(1e-3));
    }
  }

  TEST_CASE("projection filter against the grid filter on a simulated path") {
    const SvmParams p{0.95, 0.26, -9.0};
    const GaussianPrior prior{0.0, p.stationary_variance()};
    const SvmPath path = simulate_svm(p, 51, prior, 2024);
    const std::vector<double> obs = tail(path.y);

    const auto run2 = run_filter(obs, p, initial_state(prior, 2, RecoveryMode::moments_2m));
    const auto run4 = run_filter(obs, p, initial_state(prior, 4, RecoveryMode::moments_2m));
    const auto exact = oracle::run_oracle(obs, p, oracle::default_grid(p, prior));
    REQUIRE_FALSE(run2.failed_at.has_value());
    REQUIRE_FALSE(run4.failed_at.has_value());

    std::vector<double> truth, vol2, vol_exact;
    double kl2 = 0.0, kl4 = 0.0;
    for (std::size_t t = 0; t < obs.size(); ++t) {
      truth.push_back(std::exp(0.5 * (path.x[t + 1] + p.gamma)));
      vol2.push_back(run2.records[t].volatility);
      vol_exact.push_back(exact.volatility[t]);
      kl2 += oracle::kl_to_grid(exact.posteriors[t], run2.records[t].state.density());
      kl4 += oracle::kl_to_grid(exact.posteriors[t], run4.records[t].state.density());
      CHECK(run2.records[t].state.conversion_residual() < 1e-6);
      CHECK(run4.records[t].state.conversion_residual() < 1e-6);
      CHECK(run4.records[t].state.time() == static_cast<int>(t + 1));
    }
    CHECK(rmse(vol2, truth) <= 1.05 * rmse(vol_exact, truth));
    CHECK(kl4 <= kl2);
  }

  TEST_CASE("posterior moments agree with the grid filter when steps are Gaussian-like") {
    // Narrow state noise keeps each posterior close to Gaussian.
    const SvmParams p{0.95, 0.05, -9.0};
    const GaussianPrior prior{0.0, p.stationary_variance()};
    const SvmPath path = simulate_svm(p, 51, prior, 77);
    const std::vector<double> obs = tail(path.y);
    const auto run = run_filter(obs, p, initial_state(prior, 2, RecoveryMode::moments_2m));
    const auto exact = oracle::run_oracle(obs, p, oracle::default_grid(p, prior));
    REQUIRE_FALSE(run.failed_at.has_value());
    for (std::size_t t = 0; t < obs.size(); ++t) {
      const auto eta = oracle::grid_moments(exact.posteriors[t], 2);
      CHECK(std::abs(run.records[t].state.eta()[0] - eta[0]) < 1e-3);
      CHECK(std::abs(run.records[t].state.eta()[1] - eta[1]) < 1e-3);
    }
  }

  TEST_CASE("unnormalised recursion is homogeneous in the mass") {
    const SvmParams p{0.9, 0.3, -1.0};
    for (int m : {2, 4}) {
      const auto base = initial_state(GaussianPrior{0.2, 0.5}, m, RecoveryMode::moments_2m);
      const ProjFilterState scaled(0, 7.5, base.eta(), base.theta(), base.mode());
      const auto a = projection_step(base, -0.4, p);
      const auto b = projection_step(scaled, -0.4, p);
      CHECK(b.log_mass() == doctest::Approx(a.log_mass() + 7.5).epsilon(1e-12));
      for (std::size_t i = 0; i < a.eta().size(); ++i) CHECK(b.eta()[i] == doctest::Approx(a.eta()[i]).epsilon(1e-12));
      for (std::size_t i = 0; i < a.theta().size(); ++i) CHECK(b.theta()[i] == doctest::Approx(a.theta()[i]).epsilon(1e-9));
      const auto alpha = b.alpha();
      CHECK(alpha[0] == doctest::Approx(std::exp(b.log_mass())));
      CHECK(alpha[1] / alpha[0] == doctest::Approx(b.eta()[0]));
    }
  }

  TEST_CASE("zero observation drops the singular term") {
    const SvmParams p{0.9, 0.3, -1.0};
    const auto s = projection_step(initial_state(GaussianPrior{0.0, 1.0}, 2, RecoveryMode::moments_m), 0.0, p);
    // Likelihood e^{-(x+γ)/2} tilts N(0, 0.81 + 0.09) by -1/2.
    CHECK(s.eta()[0] == doctest::Approx(-0.45).epsilon(1e-10));
    CHECK(s.eta()[1] - s.eta()[0] * s.eta()[0] == doctest::Approx(0.9).epsilon(1e-10));
    CHECK(s.conversion_residual() < 1e-6);
  }

  TEST_CASE("moment-count modes agree for m = 2") {
    const SvmParams p{0.95, 0.26, -9.0};
    const auto a = projection_step(initial_state(GaussianPrior{0.0, 1.0}, 2, RecoveryMode::moments_m), 0.01, p);
    const auto b = projection_step(initial_state(GaussianPrior{0.0, 1.0}, 2, RecoveryMode::moments_2m), 0.01, p);
    CHECK(a.eta().size() == 2);
    CHECK(b.eta().size() == 4);
    for (std::size_t i = 0; i < 2; ++i) CHECK(a.theta()[i] == doctest::Approx(b.theta()[i]).epsilon(1e-8));
  }

  TEST_CASE("m = 4 with m moments tracks the 2m run") {
    const SvmParams p{0.95, 0.26, -9.0};
    const GaussianPrior prior{0.0, p.stationary_variance()};
    const std::vector<double> obs = tail(simulate_svm(p, 51, prior, 3).y);
    const auto start = std::chrono::steady_clock::now();
    const auto a = run_filter(obs, p, initial_state(prior, 4, RecoveryMode::moments_m));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto b = run_filter(obs, p, initial_state(prior, 4, RecoveryMode::moments_2m));
    REQUIRE_FALSE(a.failed_at.has_value());
    REQUIRE_FALSE(b.failed_at.has_value());
    CHECK(seconds < 10.0);
    for (std::size_t t = 0; t < obs.size(); ++t) {
      CHECK(a.records[t].state.eta().size() == 4);
      CHECK(a.records[t].state.conversion_residual() < 1e-6);
      for (std::size_t i = 0; i < 4; ++i) {
        CHECK(a.records[t].state.eta()[i] == doctest::Approx(b.records[t].state.eta()[i]).epsilon(1e-6));
      }
    }
  }

  TEST_CASE("first failing step is reported with partial output") {
    const SvmParams p{0.95, 0.26, -9.0};
    const std::vector<double> obs{0.01, -0.02, 0.005, std::numeric_limits<double>::quiet_NaN(), 0.01};
    const auto run = run_filter(obs, p, initial_state(GaussianPrior{0.0, 10.0}, 2, RecoveryMode::moments_2m));
    REQUIRE(run.failed_at.has_value());
    CHECK(*run.failed_at == 3);
    CHECK(run.records.size() == 3);
    CHECK(run.error.find("step 3") != std::string::npos);
    CHECK_THROWS_AS(run_filter({}, p, initial_state(GaussianPrior{}, 2, RecoveryMode::moments_m)),
                    std::invalid_argument);
  }

  TEST_CASE("parameter validation") {
    CHECK_THROWS_AS(SvmParams({0.9, 0.0, 0.0}).validate(), std::invalid_argument);
    CHECK_FALSE(SvmParams({1.0, 0.1, 0.0}).stationary());
    CHECK(parse_recovery_mode("2m") == RecoveryMode::moments_2m);
    CHECK_THROWS_AS(parse_recovery_mode("3m"), std::invalid_argument);
  }
}
