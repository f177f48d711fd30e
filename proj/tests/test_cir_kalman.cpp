#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "finfilt/cir_kalman.hpp"
#include "finfilt/error.hpp"

using namespace finfilt::cir;

namespace {

double mvn_logpdf(const Eigen::VectorXd& r, const Eigen::MatrixXd& s) {
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(s);
  const double n = static_cast<double>(r.size());
  return -0.5 * (n * std::log(2.0 * std::numbers::pi) + std::log(lu.determinant()) +
                 r.dot(lu.solve(r)));
}

Eigen::MatrixXd random_spd(std::mt19937_64& gen, Eigen::Index k, double scale) {
  std::normal_distribution<double> n;
  Eigen::MatrixXd a(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) a(i, j) = n(gen);
  return scale * (a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(k, k));
}

CirParams two_factor() {
  return CirParams{{FactorParams{0.5, 0.04, 0.12, -0.1}, FactorParams{1.5, 0.02, 0.1, 0.05}}, {5e-4}};
}

KalmanState predicted_state(const Eigen::VectorXd& x, const Eigen::MatrixXd& v) {
  return KalmanState{x, v, Stage::predicted, 1};
}

std::vector<YieldObservation> simulate_panel(const CirParams& p, const std::vector<double>& mats,
                                             std::size_t n, std::uint64_t seed) {
  FactorState x0(static_cast<Eigen::Index>(p.size()));
  for (std::size_t j = 0; j < p.size(); ++j) x0[static_cast<Eigen::Index>(j)] = p.factors[j].theta;
  const Eigen::MatrixXd path = simulate_factors(p, x0, 1.0, n, seed);
  std::vector<YieldObservation> panel;
  for (std::size_t t = 1; t <= n; ++t) {
    panel.push_back(observe_yields(p, path.row(static_cast<Eigen::Index>(t)).transpose(), mats,
                                   seed + 1, static_cast<int>(t)));
  }
  return panel;
}

double min_eig(const Eigen::MatrixXd& m) {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

}  // namespace

TEST_SUITE("cir_kalman") {
  TEST_CASE("prediction fixed point and example") {
    CirParams p{{FactorParams{1.0, 0.05, 0.1, 0.0}}, {1e-3}};
    KalmanState s{Eigen::VectorXd::Constant(1, 0.05), Eigen::MatrixXd::Zero(1, 1), Stage::corrected, 0};
    const KalmanState out = predict(s, p);
    CHECK(out.xhat[0] == doctest::Approx(0.05).epsilon(1e-15));
    CHECK(out.v(0, 0) == doctest::Approx(0.00021616617919084682).epsilon(1e-13));
    CHECK(out.stage == Stage::predicted);
    CHECK(out.time == 1);
    CHECK_THROWS_AS(predict(out, p), std::invalid_argument);

    // Stationary state is a fixed point of the mean and variance recursion.
    const KalmanState st = stationary_state(p);
    const KalmanState next = predict(st, p);
    CHECK(next.xhat[0] == doctest::Approx(st.xhat[0]).epsilon(1e-14));
    CHECK(next.v(0, 0) == doctest::Approx(st.v(0, 0)).epsilon(1e-12));
  }

  TEST_CASE("cross covariances decay with both mean reversions") {
    const CirParams p = two_factor();
    KalmanState s{(Eigen::VectorXd(2) << 0.03, 0.02).finished(),
                  (Eigen::MatrixXd(2, 2) << 1e-4, 3e-5, 3e-5, 2e-4).finished(), Stage::corrected, 0};
    const KalmanState out = predict(s, p, 0.5);
    CHECK(out.v(0, 1) == doctest::Approx(3e-5 * std::exp(-(0.5 + 1.5) * 0.5)).epsilon(1e-14));
    CHECK(out.v(1, 0) == out.v(0, 1));
    CHECK(out.v(0, 0) ==
          doctest::Approx(1e-4 * std::exp(-0.5) + transition_variance(p.factors[0], 0.03, 0.5)).epsilon(1e-14));
  }

  TEST_CASE("predicted moments match the exact transition") {
    std::mt19937_64 gen(41);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int draws = 200000;
    for (int rep = 0; rep < 3; ++rep) {
      const FactorParams f{0.2 + u(gen), 0.02 + 0.06 * u(gen), 0.05 + 0.15 * u(gen), 0.0};
      const double x0 = 0.01 + 0.08 * u(gen);
      CirParams p{{f}, {1e-3}};
      KalmanState s{Eigen::VectorXd::Constant(1, x0), Eigen::MatrixXd::Zero(1, 1), Stage::corrected, 0};
      const KalmanState out = predict(s, p);
      double m1 = 0.0, m2 = 0.0;
      for (int i = 0; i < draws; ++i) {
        const double x = simulate_factors(p, s.xhat, 1.0, 1, 500000 * rep + i)(1, 0);
        m1 += x;
        m2 += x * x;
      }
      m1 /= draws;
      const double var = m2 / draws - m1 * m1;
      const double v = out.v(0, 0);
      // Gamma-like fourth moment bound: Var(s²) <= v² (2 + 6 / shape), shape >= mean²/v.
      const double shape = out.xhat[0] * out.xhat[0] / v;
      CHECK(std::abs(m1 - out.xhat[0]) < 3.0 * std::sqrt(v / draws));
      CHECK(std::abs(var - v) < 3.0 * v * std::sqrt((2.0 + 6.0 / shape) / draws));
    }
  }

  TEST_CASE("uninformative observation leaves the state unchanged") {
    std::mt19937_64 gen(3);
    CirParams p = two_factor();
    p.delta = {1e6};
    for (int i = 0; i < 20; ++i) {
      const KalmanState s = predicted_state((Eigen::VectorXd(2) << 0.03, 0.02).finished(), random_spd(gen, 2, 1e-4));
      const YieldObservation obs{1, {0.5, 2.0, 10.0}, {0.05, 0.06, 0.07}};
      const KalmanState out = correct(s, obs, p);
      CHECK((out.xhat - s.xhat).cwiseAbs().maxCoeff() < 1e-8);
      CHECK((out.v - s.v).cwiseAbs().maxCoeff() < 1e-8);
    }
  }

  TEST_CASE("near exact observation inverts the affine map") {
    CirParams p{{FactorParams{0.5, 0.06, 0.15, -0.1}}, {1e-8}};
    const double x = 0.0437;
    const YieldObservation obs{1, {3.0}, {model_yield(p, FactorState::Constant(1, x), 3.0)}};
    const KalmanState s = predicted_state(Eigen::VectorXd::Constant(1, 0.06), Eigen::MatrixXd::Constant(1, 1, 1e-4));
    for (auto form : {CorrectionForm::gain, CorrectionForm::information}) {
      const KalmanState out = correct(s, obs, p, form);
      CHECK(std::abs(out.xhat[0] - x) < 1e-4);
      CHECK(out.v(0, 0) < 1e-12);
    }
  }

  TEST_CASE("correction invariants on random instances") {
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const CirParams p = two_factor();
    for (int i = 0; i < 100; ++i) {
      const KalmanState s = predicted_state((Eigen::VectorXd(2) << 0.08 * u(gen), 0.05 * u(gen)).finished(),
                                            random_spd(gen, 2, 1e-5 + 1e-3 * u(gen)));
      const YieldObservation obs{1, {0.25, 1.0, 5.0}, {0.03 + 0.03 * u(gen), 0.04 + 0.03 * u(gen), 0.05 + 0.03 * u(gen)}};
      const KalmanState g = correct(s, obs, p, CorrectionForm::gain);
      const KalmanState inf = correct(s, obs, p, CorrectionForm::information);
      CHECK((g.v - g.v.transpose()).cwiseAbs().maxCoeff() == 0.0);
      CHECK(min_eig(g.v) >= -1e-10);
      CHECK(min_eig(s.v - g.v) >= -1e-10);
      CHECK(min_eig(s.v - inf.v) >= -1e-10);
      CHECK((g.v - inf.v).cwiseAbs().maxCoeff() < 1e-8);
      CHECK((g.xhat - inf.xhat).cwiseAbs().maxCoeff() < 1e-8);
      CHECK(g.xhat.minCoeff() >= 0.0);
    }
  }

  TEST_CASE("positive part clips the corrected mean only") {
    CirParams p{{FactorParams{0.5, 0.06, 0.15, 0.0}}, {1e-4}};
    const KalmanState s = predicted_state(Eigen::VectorXd::Constant(1, 0.01), Eigen::MatrixXd::Constant(1, 1, 1e-3));
    // A yield far below the model's intercept drives the unclipped mean negative.
    const YieldObservation obs{1, {1.0}, {-0.2}};
    const KalmanState out = correct(s, obs, p);
    CHECK(out.xhat[0] == 0.0);
    CHECK(out.v(0, 0) > 0.0);
    CHECK(out.v(0, 0) < 1e-3);
  }

  TEST_CASE("singular prior covariance falls back to the gain form") {
    const CirParams p = two_factor();
    const KalmanState s = predicted_state((Eigen::VectorXd(2) << 0.03, 0.02).finished(), Eigen::MatrixXd::Zero(2, 2));
    const YieldObservation obs{1, {1.0, 5.0}, {0.05, 0.06}};
    const KalmanState out = correct(s, obs, p);
    CHECK(out.xhat == s.xhat);
    CHECK(out.v.cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(correct(s, obs, p, CorrectionForm::information), finfilt::NumericalError);
  }

  TEST_CASE("a huge delta on one maturity equals dropping it") {
    std::mt19937_64 gen(19);
    CirParams wide = two_factor();
    wide.delta = {5e-4, 1e8, 5e-4};
    CirParams narrow = two_factor();
    narrow.delta = {5e-4, 5e-4};
    for (int i = 0; i < 20; ++i) {
      const KalmanState s = predicted_state((Eigen::VectorXd(2) << 0.03, 0.02).finished(), random_spd(gen, 2, 1e-4));
      const KalmanState a = correct(s, YieldObservation{1, {0.5, 2.0, 7.0}, {0.04, 0.09, 0.05}}, wide);
      const KalmanState b = correct(s, YieldObservation{1, {0.5, 7.0}, {0.04, 0.05}}, narrow);
      CHECK((a.xhat - b.xhat).cwiseAbs().maxCoeff() < 1e-8);
      CHECK((a.v - b.v).cwiseAbs().maxCoeff() < 1e-8);
    }
  }

  TEST_CASE("innovation log-likelihood") {
    CirParams p{{FactorParams{0.5, 0.06, 0.15, 0.0}}, {2e-3}};
    const KalmanState zero_v = predicted_state(Eigen::VectorXd::Constant(1, 0.05), Eigen::MatrixXd::Zero(1, 1));
    const double y = model_yield(p, zero_v.xhat, 2.0);
    CHECK(innovation_loglik(zero_v, YieldObservation{1, {2.0}, {y}}, p) ==
          doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi * 4e-6)).epsilon(1e-13));

    // Diagonal S factorises.
    const double y2 = model_yield(p, zero_v.xhat, 5.0);
    const double both = innovation_loglik(zero_v, YieldObservation{1, {2.0, 5.0}, {y + 1e-3, y2 - 3e-3}}, p);
    const double lone = -0.5 * std::log(2.0 * std::numbers::pi * 4e-6);
    CHECK(both == doctest::Approx(2.0 * lone - 0.5 * (0.25 + 2.25)).epsilon(1e-13));

    std::mt19937_64 gen(2);
    const CirParams q = two_factor();
    for (int i = 0; i < 10; ++i) {
      const KalmanState s = predicted_state((Eigen::VectorXd(2) << 0.03, 0.02).finished(), random_spd(gen, 2, 1e-4));
      const YieldObservation obs{1, {0.25, 1.0, 3.0, 10.0}, {0.04, 0.045, 0.05, 0.052}};
      const Loadings l = loadings(q, obs.maturities);
      const Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(obs.yields.data(), 4) - l.chi - l.psi * s.xhat;
      const Eigen::MatrixXd cov = l.psi * s.v * l.psi.transpose() + 25e-8 * Eigen::MatrixXd::Identity(4, 4);
      CHECK(innovation_loglik(s, obs, q) == doctest::Approx(mvn_logpdf(r, cov)).epsilon(1e-10));
    }
  }

  TEST_CASE("quasi log-likelihood reductions and symmetries") {
    const CirParams p = two_factor();
    const std::vector<double> mats{0.25, 1.0, 3.0, 10.0};
    const auto panel = simulate_panel(p, mats, 40, 9);
    const KalmanState init = stationary_state(p);

    const double single = quasi_loglik({panel[0]}, p, init);
    CHECK(single == doctest::Approx(innovation_loglik(predict(init, p), panel[0], p)).epsilon(1e-14));

    const LoglikTrace trace = quasi_loglik_trace(panel, p, init);
    CHECK_FALSE(trace.failed_at);
    CHECK(trace.steps.size() == panel.size());
    double sum = 0.0;
    for (const auto& s : trace.steps) {
      sum += s.loglik;
      CHECK(s.xhat.minCoeff() >= 0.0);
      CHECK(s.v_diag.minCoeff() >= 0.0);
    }
    CHECK(trace.loglik == doctest::Approx(sum).epsilon(1e-14));
    CHECK(quasi_loglik(panel, p, init) == trace.loglik);

    // Label symmetry.
    CirParams swapped = p;
    std::swap(swapped.factors[0], swapped.factors[1]);
    KalmanState init_swapped = stationary_state(swapped);
    CHECK(quasi_loglik(panel, swapped, init_swapped) == doctest::Approx(trace.loglik).epsilon(1e-12));

    // Reordering maturities (with their deltas) leaves every innovation
    // density unchanged. Observations must list increasing maturities, so the
    // permuted evaluation is done by hand.
    CirParams slots = p;
    slots.delta = {4e-4, 5e-4, 6e-4, 7e-4};
    const double direct = quasi_loglik(panel, slots, init);
    const std::vector<int> order{2, 0, 3, 1};
    double by_hand = 0.0;
    KalmanState cur = init;
    for (const auto& obs : panel) {
      const KalmanState pr = predict(cur, slots);
      std::vector<double> m, y;
      for (int i : order) {
        m.push_back(obs.maturities[static_cast<std::size_t>(i)]);
        y.push_back(obs.yields[static_cast<std::size_t>(i)]);
      }
      const Loadings l = loadings(slots, m);
      const Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(y.data(), 4) - l.chi - l.psi * pr.xhat;
      Eigen::MatrixXd s = l.psi * pr.v * l.psi.transpose();
      for (std::size_t i = 0; i < 4; ++i) {
        const double d = slots.delta[static_cast<std::size_t>(order[i])];
        s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += d * d;
      }
      by_hand += mvn_logpdf(r, s);
      cur = correct(pr, obs, slots);
    }
    CHECK(by_hand == doctest::Approx(direct).epsilon(1e-10));
  }

  TEST_CASE("doubling delta on noise-free data lowers the likelihood") {
    CirParams p{{FactorParams{0.5, 0.06, 0.15, -0.1}}, {0.0}};
    const auto panel = simulate_panel(p, {0.5, 2.0, 5.0}, 50, 4);
    p.delta = {1e-4};
    const double base = quasi_loglik(panel, p, stationary_state(p));
    p.delta = {2e-4};
    CHECK(quasi_loglik(panel, p, stationary_state(p)) < base);
  }

  TEST_CASE("failing step is reported") {
    const CirParams p = two_factor();
    auto panel = simulate_panel(p, {1.0, 5.0}, 5, 1);
    panel[3].maturities = {5.0, 1.0};
    const LoglikTrace trace = quasi_loglik_trace(panel, p, stationary_state(p));
    REQUIRE(trace.failed_at);
    CHECK(*trace.failed_at == 3);
    CHECK(trace.steps.size() == 3);
    CHECK(trace.error.find("step 3") == 0);
    CHECK_THROWS_AS(quasi_loglik(panel, p, stationary_state(p)), finfilt::NumericalError);
  }

  TEST_CASE("estimation started at the truth ascends") {
    const CirParams truth{{FactorParams{0.5, 0.06, 0.15, -0.1}}, {5e-4}};
    const auto panel = simulate_panel(truth, {0.25, 0.5, 1.0, 2.0, 5.0, 10.0}, 120, 21);
    const double start = quasi_loglik(panel, truth, stationary_state(truth));
    QmlOptions opts;
    opts.max_evaluations = 3000;
    const QmlEstimate est = estimate_qml(panel, truth, opts);
    CHECK(est.converged);
    CHECK(std::isfinite(est.loglik));
    CHECK(est.loglik >= start);
    CHECK_NOTHROW(est.beta.validate());
    CHECK(est.loglik == doctest::Approx(quasi_loglik(panel, est.beta, stationary_state(est.beta))).epsilon(1e-12));
  }

  TEST_CASE("yield map Jacobian matches central differences") {
    std::mt19937_64 gen(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::vector<double> mats{0.25, 2.0, 10.0};
    for (int rep = 0; rep < 20; ++rep) {
      CirParams p{{FactorParams{0.2 + u(gen), 0.02 + 0.06 * u(gen), 0.05 + 0.15 * u(gen), -0.1 + 0.2 * u(gen)},
                   FactorParams{0.2 + u(gen), 0.02 + 0.06 * u(gen), 0.05 + 0.15 * u(gen), -0.1 + 0.2 * u(gen)}},
                  {5e-4}};
      const FactorState x = (FactorState(2) << 0.1 * u(gen), 0.1 * u(gen)).finished();
      const Eigen::MatrixXd jac = yield_map_jacobian(p, x, mats);
      REQUIRE(jac.cols() == 11);
      const auto yields = [&](const CirParams& q, const FactorState& z) {
        const Loadings l = loadings(q, mats);
        return Eigen::VectorXd(l.chi + l.psi * z);
      };
      for (Eigen::Index c = 0; c < 10; ++c) {
        CirParams up = p, dn = p;
        FactorState xu = x, xd = x;
        const Eigen::Index j = c % 2;
        const auto slot = static_cast<std::size_t>(j);
        double* pu = nullptr;
        double* pd = nullptr;
        switch (c / 2) {
          case 0: pu = &xu[j]; pd = &xd[j]; break;
          case 1: pu = &up.factors[slot].k; pd = &dn.factors[slot].k; break;
          case 2: pu = &up.factors[slot].theta; pd = &dn.factors[slot].theta; break;
          case 3: pu = &up.factors[slot].sigma; pd = &dn.factors[slot].sigma; break;
          default: pu = &up.factors[slot].lambda; pd = &dn.factors[slot].lambda; break;
        }
        const double h = 1e-6;
        *pu += h;
        *pd -= h;
        const Eigen::VectorXd fd = (yields(up, xu) - yields(dn, xd)) / (2.0 * h);
        for (Eigen::Index i = 0; i < 3; ++i) {
          CHECK(jac(i, c) == doctest::Approx(fd[i]).epsilon(1e-5).scale(1e-9));
        }
      }
      CHECK(jac.col(10).cwiseAbs().maxCoeff() == 0.0);
    }
  }

  TEST_CASE("pinned augmented filter reproduces the Kalman filter") {
    const CirParams p = two_factor();
    const auto panel = simulate_panel(p, {0.25, 1.0, 3.0, 10.0}, 60, 13);
    const KalmanState init = stationary_state(p);
    const LoglikTrace trace = quasi_loglik_trace(panel, p, init);
    AugmentedState aug = make_augmented(p, init, Eigen::VectorXd::Zero(9));
    const Eigen::VectorXd params0 = aug.mean.tail(9);
    for (std::size_t t = 0; t < panel.size(); ++t) {
      aug = augmented_ekf_step(aug, panel[t]);
      CHECK((aug.factor_mean() - trace.steps[t].xhat).cwiseAbs().maxCoeff() < 1e-6);
      CHECK((aug.cov.topLeftCorner(2, 2).diagonal() - trace.steps[t].v_diag).cwiseAbs().maxCoeff() < 1e-10);
      CHECK(aug.mean.tail(9) == params0);
      CHECK(aug.cov.bottomRightCorner(9, 9).cwiseAbs().maxCoeff() == 0.0);
      CHECK_FALSE(aug.clamped);
    }
  }

  TEST_CASE("free parameter blocks move and the covariance stays PSD") {
    const CirParams p = two_factor();
    const auto panel = simulate_panel(p, {0.25, 1.0, 3.0, 10.0}, 40, 17);
    Eigen::VectorXd pv = Eigen::VectorXd::Zero(9);
    pv.segment(0, 2).setConstant(1e-4);  // k's
    pv.segment(2, 2).setConstant(1e-6);  // θ's
    AugmentedState aug = make_augmented(p, stationary_state(p), pv);
    for (const auto& obs : panel) {
      aug = augmented_ekf_step(aug, obs);
      CHECK((aug.cov - aug.cov.transpose()).cwiseAbs().maxCoeff() == 0.0);
      CHECK(min_eig(aug.cov) >= -1e-10 * std::max(1.0, aug.cov.cwiseAbs().maxCoeff()));
      CHECK(aug.factor_mean().minCoeff() >= 0.0);
    }
    CHECK(aug.mean[2] != p.factors[0].k);
    // σ's, λ's and δ were pinned.
    CHECK(aug.mean[6] == p.factors[0].sigma);
    CHECK(aug.mean[9] == p.factors[1].lambda);
    CHECK(aug.mean[10] == p.delta[0]);
  }

  TEST_CASE("infeasible parameter means are clamped and flagged") {
    const CirParams p{{FactorParams{0.5, 0.06, 0.15, 0.0}}, {5e-4}};
    AugmentedState aug = make_augmented(p, stationary_state(p), Eigen::VectorXd::Zero(5));
    aug.mean[3] = -0.01;  // σ
    const auto panel = simulate_panel(p, {1.0, 5.0}, 1, 2);
    const AugmentedState out = augmented_ekf_step(aug, panel[0]);
    CHECK(out.clamped);
    CHECK(out.params().factors[0].sigma == doctest::Approx(1e-8));
    CHECK_THROWS_AS(make_augmented(p, stationary_state(p), Eigen::VectorXd::Zero(4)), std::invalid_argument);
  }
}
