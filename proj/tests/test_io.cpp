#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "finfilt/io.hpp"

using namespace finfilt;
using io::FormatError;

namespace {

std::vector<double> returns(const std::string& text) {
  std::istringstream in(text);
  return io::read_returns(in, "test.csv");
}

std::size_t failing_line(const std::string& text, bool panel = false) {
  std::istringstream in(text);
  try {
    if (panel) {
      io::read_yield_panel(in, "test.csv");
    } else {
      io::read_returns(in, "test.csv");
    }
  } catch (const FormatError& e) {
    return e.line();
  }
  return 0;
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("return layouts") {
    CHECK(returns("0.1\n-0.2\n\n# note\n0.3\n") == std::vector<double>{0.1, -0.2, 0.3});
    CHECK(returns("1,0.5\n2,-0.5\n") == std::vector<double>{0.5, -0.5});
    CHECK(returns("t,return\n0,0.25\n1,0.5\n") == std::vector<double>{0.25, 0.5});
    CHECK(returns("t,x,y\n1,-9.1,0.001\n2,-9.0,-0.002\n") == std::vector<double>{0.001, -0.002});
    const auto r = returns("date,price\n2024-01-02,100\n2024-01-03,110\n2024-01-04,99\n");
    REQUIRE(r.size() == 2);
    CHECK(r[0] == doctest::Approx(std::log(1.1)).epsilon(1e-15));
    CHECK(r[1] == doctest::Approx(std::log(99.0 / 110.0)).epsilon(1e-15));
  }

  TEST_CASE("malformed rows name their line") {
    CHECK(failing_line("0.1\n0.2\nabc\n") == 3);
    CHECK(failing_line("t,return\n0,0.1\n\n1\n") == 4);
    CHECK(failing_line("date,price\nd1,100\nd2,-3\n") == 3);
    CHECK(failing_line("t,maturity,yield\n1,1.0,0.05\n1,0.5,0.04\n", true) == 3);
    CHECK(failing_line("t,maturity,yield\n2,1.0,0.05\n1,1.0,0.04\n", true) == 3);
    CHECK(failing_line("t,maturity,yield\n1.5,1.0,0.05\n", true) == 2);
    CHECK(failing_line("t,maturity,yield\n1,1.0,x\n", true) == 2);
    std::istringstream in("0.1\nnan\n");
    try {
      io::read_returns(in, "r.csv");
      FAIL("expected a FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("r.csv:2:") == 0);
    }
    CHECK_THROWS_AS(returns(""), FormatError);
    CHECK_THROWS_AS(returns("a,b\n1,2\n"), FormatError);
  }

  TEST_CASE("yield panels round trip") {
    std::vector<cir::YieldObservation> panel{{1, {0.5, 2.0}, {0.031, 0.0425}},
                                             {2, {0.25, 1.0, 10.0}, {0.1 + 0.2, 1.0 / 3.0, -1e-5}}};
    std::ostringstream out;
    io::write_yield_panel(out, panel);
    std::istringstream in(out.str());
    const auto back = io::read_yield_panel(in);
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(back[i].t == panel[i].t);
      CHECK(back[i].maturities == panel[i].maturities);
      CHECK(back[i].yields == panel[i].yields);
    }
  }

  TEST_CASE("parameter JSON round trips and validation") {
    const cir::CirParams p{{cir::FactorParams{0.5, 0.06, 0.15, -0.1}, cir::FactorParams{1.2, 0.02, 0.1, 0.0}},
                           {5e-4, 6e-4}};
    const cir::CirParams q = io::cir_params_from_json(io::json::parse(io::to_json(p).dump()));
    CHECK(q.factors[0].lambda == -0.1);
    CHECK(q.factors[1].k == 1.2);
    CHECK(q.delta == p.delta);
    CHECK(io::cir_params_from_json(io::json::parse(R"({"factors":[{"k":1,"theta":0.05,"sigma":0.1}],"delta":1e-3})"))
              .delta == std::vector<double>{1e-3});
    CHECK_THROWS_AS(io::cir_params_from_json(io::json::parse(R"({"factors":[{"k":1,"theta":0.05}],"delta":1e-3})")),
                    FormatError);
    CHECK_THROWS_AS(
        io::cir_params_from_json(io::json::parse(R"({"factors":[{"k":-1,"theta":0.05,"sigma":0.1}],"delta":1e-3})")),
        FormatError);

    const svm::SvmParams s = io::svm_params_from_json(io::to_json(svm::SvmParams{0.9, 0.3, -8.0}));
    CHECK(s.rho == 0.9);
    CHECK_THROWS_AS(io::svm_params_from_json(io::json::parse(R"({"rho":0.9,"sigma":"x","gamma":1})")), FormatError);

    hedging::RegimeModel m{{0.1, 0.3}, (Eigen::MatrixXd(2, 2) << -1, 1, 2, -2).finished(), 0.5};
    const hedging::RegimeModel m2 = io::regime_model_from_json(io::to_json(m), 0.5);
    CHECK(m2.lambda == m.lambda);
    CHECK(m2.sigma == m.sigma);
    CHECK_THROWS_AS(io::regime_model_from_json(io::json::parse(R"({"sigma":[0.1,0.2],"lambda":[[-1,1],[1,0]]})"), 1.0),
                    FormatError);
    const auto [claim, T] = io::claim_from_json(io::to_json(hedging::Claim{hedging::PayoffKind::put, 90.0}, 2.0));
    CHECK(claim.kind == hedging::PayoffKind::put);
    CHECK(claim.strike == 90.0);
    CHECK(T == 2.0);
    CHECK_THROWS_AS(io::claim_from_json(io::json::parse(R"({"payoff":"digital","strike":1,"T":1})")), FormatError);
  }

  TEST_CASE("doubles format to the shortest round-trip form") {
    CHECK(io::format_double(0.1) == "0.1");
    CHECK(io::format_double(-2.5e-7) == "-2.5e-07");
    const double v = 1.0 / 3.0;
    CHECK(std::stod(io::format_double(v)) == v);
  }

  TEST_CASE("atomic write replaces the target") {
    const auto dir = std::filesystem::temp_directory_path() / "finfilt_io_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "out.txt";
    io::write_atomic(path, "first\n");
    io::write_atomic(path, "second\n");
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "second");
    CHECK_FALSE(std::filesystem::exists(dir / "out.txt.tmp"));
    std::filesystem::remove_all(dir);
  }
}
