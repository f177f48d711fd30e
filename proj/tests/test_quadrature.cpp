#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "finfilt/error.hpp"
#include "finfilt/quadrature.hpp"
#include "oracles.hpp"

using namespace finfilt;

TEST_SUITE("quadrature") {
  TEST_CASE("gaussian weight integrates exactly") {
    const auto rule = quad::build_rule([](double x) { return -0.5 * (x - 3.0) * (x - 3.0); },
                                       quad::Window{0.0, 1.0});
    CHECK(rule.log_integral() == doctest::Approx(0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-13));
    CHECK(rule.mean([](double x) { return x; }) == doctest::Approx(3.0).epsilon(1e-13));
    CHECK(rule.mode() == doctest::Approx(3.0).epsilon(1e-8));
  }

  TEST_CASE("very peaked weight far from the hint") {
    const double mu = 250.0;
    const double sd = 1e-5;
    const auto rule = quad::build_rule(
        [&](double x) { return -0.5 * (x - mu) * (x - mu) / (sd * sd); }, quad::Window{240.0, 5.0});
    CHECK(rule.log_integral() ==
          doctest::Approx(std::log(sd * std::sqrt(2.0 * std::numbers::pi))).epsilon(1e-9));
    const double var = rule.mean([&](double x) { return (x - mu) * (x - mu); });
    CHECK(var == doctest::Approx(sd * sd).epsilon(1e-10));
  }

  TEST_CASE("quartic weight against a fine trapezoid oracle") {
    const double ref = ref::trapezoid([](double x) { return std::exp(-x * x * x * x); }, -8, 8, 200000);
    const std::vector<double> c{0.0, 0.0, 0.0, 0.0, -1.0};
    const auto rule = quad::build_rule([&](double x) { return quad::polyval(c, x); },
                                       quad::polynomial_window(c));
    CHECK(std::exp(rule.log_integral()) == doctest::Approx(ref).epsilon(1e-12));
  }

  TEST_CASE("bimodal polynomial weight is fully covered") {
    // exp(4x^2 - x^4): modes at ±sqrt(2), deep valley at 0.
    const std::vector<double> c{0.0, 0.3, 4.0, 0.0, -1.0};
    const auto w = quad::polynomial_window(c);
    CHECK(w.cover_lo < -1.0);
    CHECK(w.cover_hi > 1.0);
    const auto rule = quad::build_rule([&](double x) { return quad::polyval(c, x); }, w);
    const double ref = ref::trapezoid([&](double x) { return std::exp(quad::polyval(c, x)); }, -8, 8, 400000);
    CHECK(std::exp(rule.log_integral()) == doctest::Approx(ref).epsilon(1e-11));
  }

  TEST_CASE("polynomial window rejects non-integrable weights") {
    CHECK_THROWS_AS(quad::polynomial_window(std::vector<double>{0.0, 1.0, 0.5}), std::invalid_argument);
    CHECK_THROWS_AS(quad::polynomial_window(std::vector<double>{0.0, 1.0, 0.0, -1.0}), std::invalid_argument);
  }

  TEST_CASE("non-decaying integrand is reported") {
    CHECK_THROWS_AS(quad::build_rule([](double x) { return 0.0 * x; }, quad::Window{0.0, 1.0}),
                    QuadratureError);
  }

  TEST_CASE("polyval is Horner") {
    const std::vector<double> c{1.0, -2.0, 3.0};
    CHECK(quad::polyval(c, 2.0) == doctest::Approx(1.0 - 4.0 + 12.0));
  }
}
