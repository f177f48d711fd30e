// finfilt: simulation, filtering, estimation and hedging from the command
// line. Every command writes its artifacts plus manifest.json into --out.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "finfilt/cir_kalman.hpp"
#include "finfilt/cir_model.hpp"
#include "finfilt/error.hpp"
#include "finfilt/exact_oracle.hpp"
#include "finfilt/hedging.hpp"
#include "finfilt/io.hpp"
#include "finfilt/rng.hpp"
#include "finfilt/svm_filter.hpp"

#ifndef FINFILT_VERSION
#define FINFILT_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace finfilt;
using io::format_double;

namespace {

struct Options {
  std::string command;
  std::string config_path;
  std::string input;
  std::string compare;
  std::string out = ".";
  std::uint64_t seed = 1;
  int order = 4;
  std::string mode = "2m";
  std::optional<std::size_t> grid_nodes;
  std::optional<std::size_t> steps;
  bool oracle = false;
  bool augmented = false;
};

/// Artifacts of one command, written together at the end.
class Output {
 public:
  explicit Output(fs::path dir) : dir_(std::move(dir)) {}

  void add(const std::string& name, std::string contents) { files_.emplace_back(name, std::move(contents)); }
  void add_json(const std::string& name, const json& j) { add(name, j.dump(2) + "\n"); }

  void flush(const json& manifest_base, double seconds) {
    fs::create_directories(dir_);
    json manifest = manifest_base;
    json artifacts = json::array();
    for (const auto& [name, contents] : files_) {
      io::write_atomic(dir_ / name, contents);
      artifacts.push_back({{"name", name}, {"bytes", contents.size()}, {"fnv1a", fnv1a(contents)}});
      spdlog::info("wrote {}", (dir_ / name).string());
    }
    manifest["artifacts"] = artifacts;
    manifest["timings"] = {{"seconds", seconds}};
    io::write_atomic(dir_ / "manifest.json", manifest.dump(2) + "\n");
  }

  static std::string fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    std::ostringstream o;
    o << std::hex << h;
    return o.str();
  }

 private:
  fs::path dir_;
  std::vector<std::pair<std::string, std::string>> files_;
};

/// A command failed after producing partial results.
struct PartialFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const json& section(const json& config, const std::string& key) {
  static const json empty = json::object();
  const auto it = config.find(key);
  return it == config.end() ? empty : *it;
}

double num(const json& j, const std::string& key, double fallback) {
  const auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number()) throw io::FormatError("config", 0, key + ": expected a number");
  return it->get<double>();
}

std::size_t count(const json& j, const std::string& key, std::size_t fallback) {
  const double v = num(j, key, static_cast<double>(fallback));
  if (!(v >= 1.0) || v != static_cast<double>(static_cast<std::size_t>(v))) {
    throw io::FormatError("config", 0, key + ": expected a positive integer");
  }
  return static_cast<std::size_t>(v);
}

svm::SvmParams svm_params(const json& config) {
  return config.contains("svm") ? io::svm_params_from_json(config["svm"]) : svm::SvmParams{};
}

// Stationary law of the log-variance unless the config names a prior.
svm::GaussianPrior svm_prior(const json& config, const svm::SvmParams& p) {
  if (config.contains("prior")) return io::prior_from_json(config["prior"]);
  return {0.0, p.stationary() ? p.stationary_variance() : 10.0};
}

cir::CirParams cir_params(const json& config, const std::string& key = "cir") {
  if (config.contains(key)) return io::cir_params_from_json(config[key]);
  return cir::CirParams{{cir::FactorParams{0.5, 0.06, 0.15, -0.1}}, {5e-4}};
}

std::vector<double> maturities(const json& config) {
  if (!config.contains("maturities")) return {0.25, 0.5, 1.0, 2.0, 5.0, 10.0};
  std::vector<double> m;
  for (const auto& v : config["maturities"]) {
    if (!v.is_number()) throw io::FormatError("config", 0, "maturities: expected numbers");
    m.push_back(v.get<double>());
  }
  return m;
}

std::vector<double> read_series(const Options& o) {
  if (o.input.empty()) throw std::invalid_argument(o.command + " needs --input");
  return io::read_returns(fs::path(o.input));
}

json vec(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

// ---------------------------------------------------------------- SVM

void simulate_svm(const Options& o, const json& config, Output& out) {
  const svm::SvmParams p = svm_params(config);
  const std::size_t n = o.steps ? *o.steps : count(config, "steps", 500);
  const svm::SvmPath path = svm::simulate_svm(p, n, svm_prior(config, p), o.seed);
  std::string csv = "t,x,y\n";
  for (std::size_t t = 0; t < n; ++t) {
    csv += std::to_string(t + 1) + "," + format_double(path.x[t]) + "," + format_double(path.y[t]) + "\n";
  }
  out.add("svm_path.csv", std::move(csv));
}

json oracle_records(const oracle::OracleRun& run) {
  json records = json::array();
  for (std::size_t i = 0; i < run.posteriors.size(); ++i) {
    const auto m = oracle::grid_moments(run.posteriors[i], 2);
    records.push_back({{"t", i + 1},
                       {"mean", m[0]},
                       {"variance", m[1] - m[0] * m[0]},
                       {"vol_estimate", run.volatility[i]}});
  }
  return records;
}

void filter_svm(const Options& o, const json& config, Output& out) {
  const svm::SvmParams p = svm_params(config);
  const svm::GaussianPrior prior = svm_prior(config, p);
  const auto y = read_series(o);
  const svm::RecoveryMode mode = svm::parse_recovery_mode(o.mode);
  const svm::FilterRun run = svm::run_filter(y, p, svm::initial_state(prior, o.order, mode));

  json records = json::array();
  std::string csv = "t,mean,variance,vol_estimate\n";
  for (const auto& r : run.records) {
    const auto& eta = r.state.eta();
    const double mean = eta[0], var = eta[1] - eta[0] * eta[0];
    records.push_back({{"t", r.state.time()},
                       {"eta", eta},
                       {"theta", r.state.theta()},
                       {"log_mass", r.state.log_mass()},
                       {"residual", r.state.conversion_residual()},
                       {"vol_estimate", r.volatility}});
    csv += std::to_string(r.state.time()) + "," + format_double(mean) + "," + format_double(var) + "," +
           format_double(r.volatility) + "\n";
  }
  json doc = {{"order", o.order},
              {"mode", o.mode},
              {"svm", io::to_json(p)},
              {"prior", io::to_json(prior)},
              {"records", records},
              {"failed_at", run.failed_at ? json(*run.failed_at) : json(nullptr)},
              {"error", run.error}};

  if (o.oracle) {
    const std::size_t nodes = o.grid_nodes.value_or(4001);
    const std::vector<double> seen(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(run.records.size()));
    const oracle::OracleRun ref = oracle::run_oracle(seen, p, oracle::default_grid(p, prior, nodes));
    json side = json::array();
    for (std::size_t i = 0; i < run.records.size(); ++i) {
      const auto m = oracle::grid_moments(ref.posteriors[i], 2);
      const auto& eta = run.records[i].state.eta();
      side.push_back({{"t", i + 1},
                      {"filter", {{"mean", eta[0]}, {"variance", eta[1] - eta[0] * eta[0]},
                                  {"vol_estimate", run.records[i].volatility}}},
                      {"oracle", {{"mean", m[0]}, {"variance", m[1] - m[0] * m[0]},
                                  {"vol_estimate", ref.volatility[i]}}},
                      {"kl", oracle::kl_to_grid(ref.posteriors[i], run.records[i].state.density())}});
    }
    doc["oracle"] = side;
    doc["grid_nodes"] = nodes;
  }
  out.add_json("filter_svm.json", doc);
  out.add("filter_svm.csv", std::move(csv));
  if (run.failed_at) throw PartialFailure("filter-svm: " + run.error);
}

void oracle_svm(const Options& o, const json& config, Output& out) {
  const svm::SvmParams p = svm_params(config);
  const svm::GaussianPrior prior = svm_prior(config, p);
  const auto y = read_series(o);
  const std::size_t nodes = o.grid_nodes.value_or(4001);
  const oracle::OracleRun run = oracle::run_oracle(y, p, oracle::default_grid(p, prior, nodes));
  const json records = oracle_records(run);
  std::string csv = "t,mean,variance,vol_estimate\n";
  for (const auto& r : records) {
    csv += std::to_string(r["t"].get<int>()) + "," + format_double(r["mean"].get<double>()) + "," +
           format_double(r["variance"].get<double>()) + "," + format_double(r["vol_estimate"].get<double>()) + "\n";
  }
  out.add_json("oracle_svm.json",
               {{"svm", io::to_json(p)}, {"prior", io::to_json(prior)}, {"grid_nodes", nodes}, {"records", records}});
  out.add("oracle_svm.csv", std::move(csv));

  if (!o.compare.empty()) {
    const json filt = io::read_json(o.compare);
    if (!filt.contains("records") || !filt["records"].is_array()) {
      throw io::FormatError(o.compare, 0, "expected filter-svm output with a records array");
    }
    json rows = json::array();
    std::string ccsv = "t,filter_mean,oracle_mean,filter_variance,oracle_variance,filter_vol,oracle_vol\n";
    const auto& fr = filt["records"];
    const std::size_t n = std::min(fr.size(), records.size());
    for (std::size_t i = 0; i < n; ++i) {
      const auto& eta = fr[i].at("eta");
      const double fm = eta.at(0).get<double>();
      const double fv = eta.at(1).get<double>() - fm * fm;
      const double fvol = fr[i].at("vol_estimate").get<double>();
      const auto& orc = records[i];
      rows.push_back({{"t", orc["t"]},
                      {"filter", {{"mean", fm}, {"variance", fv}, {"vol_estimate", fvol}}},
                      {"oracle", {{"mean", orc["mean"]}, {"variance", orc["variance"]},
                                  {"vol_estimate", orc["vol_estimate"]}}},
                      {"abs_diff_mean", std::abs(fm - orc["mean"].get<double>())},
                      {"abs_diff_variance", std::abs(fv - orc["variance"].get<double>())}});
      ccsv += std::to_string(i + 1) + "," + format_double(fm) + "," + format_double(orc["mean"].get<double>()) + "," +
              format_double(fv) + "," + format_double(orc["variance"].get<double>()) + "," + format_double(fvol) +
              "," + format_double(orc["vol_estimate"].get<double>()) + "\n";
    }
    out.add_json("compare.json", {{"records", rows}});
    out.add("compare.csv", std::move(ccsv));
  }
}

// ---------------------------------------------------------------- CIR

void simulate_cir(const Options& o, const json& config, Output& out) {
  const cir::CirParams p = cir_params(config);
  p.validate();
  const auto mats = maturities(config);
  const std::size_t n = o.steps ? *o.steps : count(config, "steps", 250);
  const double dt = num(config, "dt", 1.0);
  cir::FactorState x0(static_cast<Eigen::Index>(p.size()));
  for (std::size_t j = 0; j < p.size(); ++j) x0[static_cast<Eigen::Index>(j)] = p.factors[j].theta;
  const CounterRng root(o.seed);
  const Eigen::MatrixXd path = cir::simulate_factors(p, x0, dt, n, root.split(0).key());

  std::string factors = "t";
  for (std::size_t j = 0; j < p.size(); ++j) factors += ",x" + std::to_string(j + 1);
  factors += "\n";
  std::vector<cir::YieldObservation> panel;
  for (std::size_t t = 1; t <= n; ++t) {
    const Eigen::VectorXd x = path.row(static_cast<Eigen::Index>(t)).transpose();
    factors += std::to_string(t);
    for (Eigen::Index j = 0; j < x.size(); ++j) factors += "," + format_double(x[j]);
    factors += "\n";
    panel.push_back(cir::observe_yields(p, x, mats, root.split(1).key(), static_cast<int>(t)));
  }
  std::ostringstream yields;
  io::write_yield_panel(yields, panel);
  out.add("cir_factors.csv", std::move(factors));
  out.add("cir_yields.csv", yields.str());
}

json step_json(const cir::StepTrace& s) {
  return {{"t", s.t}, {"xhat", vec(s.xhat)}, {"v_diag", vec(s.v_diag)}, {"innovation", vec(s.innovation)},
          {"loglik", s.loglik}};
}

std::vector<cir::YieldObservation> read_panel(const Options& o) {
  if (o.input.empty()) throw std::invalid_argument(o.command + " needs --input");
  return io::read_yield_panel(fs::path(o.input));
}

void estimate_cir(const Options& o, const json& config, Output& out) {
  const auto panel = read_panel(o);
  const cir::CirParams start = config.contains("cir_start") ? cir_params(config, "cir_start") : cir_params(config);
  cir::QmlOptions qo;
  const json& q = section(config, "qml");
  qo.dt = num(config, "dt", 1.0);
  qo.max_evaluations = static_cast<int>(count(q, "max_evaluations", 6000));
  qo.restarts = static_cast<int>(num(q, "restarts", 3));
  qo.ftol = num(q, "ftol", 1e-7);
  const cir::QmlEstimate est = cir::estimate_qml(panel, start, qo);
  spdlog::info("estimate-cir: loglik {} after {} evaluations", est.loglik, est.evaluations);
  const cir::LoglikTrace trace = cir::quasi_loglik_trace(panel, est.beta, cir::stationary_state(est.beta), qo.dt);
  json steps = json::array();
  for (const auto& s : trace.steps) steps.push_back(step_json(s));
  out.add_json("estimate_cir.json", {{"beta", io::to_json(est.beta)},
                                     {"start", io::to_json(start)},
                                     {"loglik", est.loglik},
                                     {"iterations", est.iterations},
                                     {"evaluations", est.evaluations},
                                     {"converged", est.converged},
                                     {"per_step", steps}});
}

void filter_cir(const Options& o, const json& config, Output& out) {
  const auto panel = read_panel(o);
  const cir::CirParams p = cir_params(config);
  const double dt = num(config, "dt", 1.0);
  if (o.augmented) {
    const std::size_t k = p.size();
    const std::size_t dim = 4 * k + p.delta.size();
    // Default: 10% prior standard deviation on each factor parameter, δ fixed.
    Eigen::VectorXd pv = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    for (std::size_t j = 0; j < k; ++j) {
      const cir::FactorParams& f = p.factors[j];
      const double vals[4] = {f.k, f.theta, f.sigma, f.lambda};
      for (std::size_t b = 0; b < 4; ++b) {
        const double sd = 0.1 * std::max(std::abs(vals[b]), 1e-2);
        pv[static_cast<Eigen::Index>(b * k + j)] = sd * sd;
      }
    }
    const json& e = section(config, "ekf");
    if (e.contains("parameter_variances")) {
      const auto& v = e["parameter_variances"];
      if (!v.is_array() || v.size() != dim) {
        throw io::FormatError("config", 0, "ekf.parameter_variances: expected " + std::to_string(dim) + " numbers");
      }
      for (std::size_t i = 0; i < dim; ++i) pv[static_cast<Eigen::Index>(i)] = v[i].get<double>();
    }
    cir::AugmentedState s = cir::make_augmented(p, cir::stationary_state(p), pv);
    json steps = json::array();
    std::string csv = "t";
    for (std::size_t j = 0; j < k; ++j) csv += ",x" + std::to_string(j + 1);
    for (const char* name : {"k", "theta", "sigma", "lambda"}) {
      for (std::size_t j = 0; j < k; ++j) csv += std::string(",") + name + std::to_string(j + 1);
    }
    csv += ",clamped\n";
    for (const auto& obs : panel) {
      s = cir::augmented_ekf_step(s, obs, dt);
      steps.push_back({{"t", obs.t}, {"mean", vec(s.mean)}, {"cov_diag", vec(Eigen::VectorXd(s.cov.diagonal()))},
                       {"clamped", s.clamped}});
      csv += std::to_string(obs.t);
      for (std::size_t j = 0; j < 5 * k; ++j) csv += "," + format_double(s.mean[static_cast<Eigen::Index>(j)]);
      csv += std::string(",") + (s.clamped ? "1" : "0") + "\n";
    }
    out.add_json("filter_cir_augmented.json", {{"prior", io::to_json(p)}, {"posterior", io::to_json(s.params())},
                                               {"per_step", steps}});
    out.add("filter_cir_augmented.csv", std::move(csv));
    return;
  }
  const cir::LoglikTrace trace = cir::quasi_loglik_trace(panel, p, cir::stationary_state(p), dt);
  json steps = json::array();
  std::string csv = "t";
  for (std::size_t j = 0; j < p.size(); ++j) csv += ",xhat" + std::to_string(j + 1);
  for (std::size_t j = 0; j < p.size(); ++j) csv += ",v" + std::to_string(j + 1);
  csv += ",loglik\n";
  for (const auto& s : trace.steps) {
    steps.push_back(step_json(s));
    csv += std::to_string(s.t);
    for (Eigen::Index j = 0; j < s.xhat.size(); ++j) csv += "," + format_double(s.xhat[j]);
    for (Eigen::Index j = 0; j < s.v_diag.size(); ++j) csv += "," + format_double(s.v_diag[j]);
    csv += "," + format_double(s.loglik) + "\n";
  }
  out.add_json("filter_cir.json", {{"beta", io::to_json(p)},
                                   {"loglik", trace.loglik},
                                   {"per_step", steps},
                                   {"failed_at", trace.failed_at ? json(*trace.failed_at) : json(nullptr)},
                                   {"error", trace.error}});
  out.add("filter_cir.csv", std::move(csv));
  if (trace.failed_at) throw PartialFailure("filter-cir: " + trace.error);
}

// ---------------------------------------------------------------- hedging

struct ClaimSetup {
  hedging::Claim claim;
  hedging::RegimeModel model;
  hedging::GridSpec grid;
};

ClaimSetup claim_setup(const Options& o, const json& config) {
  ClaimSetup c;
  double T = 1.0;
  if (config.contains("claim")) {
    std::tie(c.claim, T) = io::claim_from_json(config["claim"]);
  }
  c.model = config.contains("regime") ? io::regime_model_from_json(config["regime"], T)
                                      : hedging::RegimeModel{{0.2}, Eigen::MatrixXd::Zero(1, 1), T};
  const json& g = section(config, "grid");
  c.grid.price_nodes = o.grid_nodes ? *o.grid_nodes : count(g, "price_nodes", 400);
  c.grid.time_steps = count(g, "time_steps", 400);
  c.grid.center = num(g, "center", c.claim.kind == hedging::PayoffKind::identity ? 100.0 : c.claim.strike);
  c.grid.log_half_width = num(g, "log_half_width", 0.0);
  return c;
}

void price_claim(const Options& o, const json& config, Output& out) {
  const ClaimSetup c = claim_setup(o, config);
  const hedging::ClaimSolution sol = hedging::solve_claim_pde(c.model, c.claim, c.grid);
  for (const auto& w : sol.warnings) spdlog::warn("price-claim: {}", w);

  const std::size_t m = sol.times.size() - 1;
  const std::size_t stride = std::max<std::size_t>(1, m / 10);
  std::string surface = "t,s,regime,u,xi\n";
  std::string strategy = "t,s,regime,xi,eta\n";
  std::vector<std::size_t> slices;
  for (std::size_t n = 0; n < m; n += stride) slices.push_back(n);
  slices.push_back(m);
  for (std::size_t n : slices) {
    for (std::size_t i = 0; i < sol.regimes(); ++i) {
      for (std::size_t j = 0; j < sol.prices.size(); ++j) {
        const double u = sol.u[i](static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(j));
        const double xi = sol.xi[i](static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(j));
        const std::string head = format_double(sol.times[n]) + "," + format_double(sol.prices[j]) + "," +
                                 std::to_string(i) + ",";
        surface += head + format_double(u) + "," + format_double(xi) + "\n";
        strategy += head + format_double(xi) + "," + format_double(u - xi * sol.prices[j]) + "\n";
      }
    }
  }
  const double s0 = num(section(config, "hedge"), "s0", c.grid.center);
  json values = json::array(), deltas = json::array();
  for (std::size_t i = 0; i < sol.regimes(); ++i) {
    values.push_back(sol.value(s0, i, 0.0));
    deltas.push_back(sol.delta(s0, i, 0.0));
  }
  out.add_json("price_claim.json", {{"claim", io::to_json(c.claim, c.model.horizon)},
                                    {"regime", io::to_json(c.model)},
                                    {"grid", {{"price_nodes", c.grid.price_nodes}, {"time_steps", c.grid.time_steps}}},
                                    {"s0", s0},
                                    {"value", values},
                                    {"delta", deltas},
                                    {"warnings", sol.warnings}});
  out.add("claim_surface.csv", std::move(surface));
  out.add("strategy.csv", std::move(strategy));
}

void hedge(const Options& o, const json& config, Output& out) {
  const ClaimSetup c = claim_setup(o, config);
  const hedging::ClaimSolution sol = hedging::solve_claim_pde(c.model, c.claim, c.grid);
  for (const auto& w : sol.warnings) spdlog::warn("hedge: {}", w);
  const json& h = section(config, "hedge");
  hedging::CostSpec spec;
  spec.paths = count(h, "paths", 10000);
  spec.steps = o.steps ? *o.steps : count(h, "steps", 250);
  spec.s0 = num(h, "s0", c.grid.center);
  spec.z0 = static_cast<std::size_t>(num(h, "z0", 0));
  spec.seed = o.seed;
  std::string obs = "full";
  if (h.contains("observation")) {
    if (!h["observation"].is_string()) throw io::FormatError("config", 0, "hedge.observation: expected a string");
    obs = h["observation"].get<std::string>();
  }
  if (obs == "full") {
    spec.observation = hedging::Observation::full;
  } else if (obs == "partial") {
    spec.observation = hedging::Observation::partial;
  } else {
    throw io::FormatError("config", 0, "hedge.observation: expected full or partial");
  }
  const hedging::CostStatistics st = hedging::simulate_cost_process(c.model, sol, c.claim, spec);
  if (st.paths_outside > 0) spdlog::warn("hedge: {} paths left the price grid and were dropped", st.paths_outside);
  std::string csv = "path,cost\n";
  for (std::size_t i = 0; i < st.costs.size(); ++i) csv += std::to_string(i) + "," + format_double(st.costs[i]) + "\n";
  out.add_json("hedge.json", {{"claim", io::to_json(c.claim, c.model.horizon)},
                              {"regime", io::to_json(c.model)},
                              {"observation", obs},
                              {"paths", st.paths},
                              {"paths_outside", st.paths_outside},
                              {"steps", spec.steps},
                              {"mean_cost", st.mean_cost},
                              {"var_cost", st.var_cost},
                              {"se_cost", st.se_cost},
                              {"max_abs_cost", st.max_abs_cost},
                              {"max_replication_error", st.max_replication_error}});
  out.add("hedge_costs.csv", std::move(csv));
}

// ---------------------------------------------------------------- driver

json error_json(const std::string& command, const std::string& kind, const std::string& message,
                std::optional<std::size_t> line = std::nullopt) {
  json e = {{"command", command}, {"kind", kind}, {"message", message}};
  if (line && *line > 0) e["line"] = *line;
  return {{"error", e}};
}

void configure_logging() {
  auto logger = spdlog::stderr_logger_mt("finfilt");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("FINFILT_LOG")) spdlog::set_level(spdlog::level::from_str(env));
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  Options o;
  CLI::App app{"Projection filters, CIR term-structure filtering and regime-switching hedging"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", o.config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Random seed")->capture_default_str();
  app.add_option("--order", o.order, "Exponential family order m (even)")->capture_default_str();
  app.add_option("--mode", o.mode, "Moment recovery: m or 2m")->check(CLI::IsMember({"m", "2m"}))->capture_default_str();
  app.add_option("--grid-nodes", o.grid_nodes, "Oracle grid nodes or PDE price nodes");
  app.add_option("--steps", o.steps, "Simulation length or hedge rebalancing steps");
  app.add_option("--out", o.out, "Output directory")->capture_default_str();
  app.add_option("--input", o.input, "Input CSV");

  const std::vector<std::pair<std::string, std::string>> commands{
      {"simulate-svm", "Simulate a stochastic volatility path (svm_path.csv)"},
      {"filter-svm", "Projection filter on a return series"},
      {"oracle-svm", "Grid filter on a return series"},
      {"simulate-cir", "Simulate CIR factors and a noisy yield panel"},
      {"estimate-cir", "Quasi-maximum-likelihood estimation on a yield panel"},
      {"filter-cir", "Kalman filter on a yield panel"},
      {"price-claim", "Solve the regime-switching pricing PDE"},
      {"hedge", "Simulate the hedging cost process"}};
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) subs[name] = app.add_subcommand(name, help);
  subs["filter-svm"]->add_flag("--oracle", o.oracle, "Also run the grid filter and report both");
  subs["oracle-svm"]->add_option("--compare", o.compare, "filter-svm JSON to compare against")
      ->check(CLI::ExistingFile);
  subs["filter-cir"]->add_flag("--augmented", o.augmented, "Extended Kalman filter on factors and parameters");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) o.command = name;
  }

  const auto started = std::chrono::steady_clock::now();
  Output out{fs::path(o.out)};
  json config = json::object();
  const auto fail = [&](const std::string& kind, const std::string& message, int code,
                        std::optional<std::size_t> line = std::nullopt) {
    const json e = error_json(o.command, kind, message, line);
    std::cerr << e.dump() << "\n";
    std::error_code ec;
    if (fs::is_directory(o.out, ec)) {
      try {
        io::write_atomic(fs::path(o.out) / "error.json", e.dump(2) + "\n");
      } catch (const std::exception&) {
      }
    }
    return code;
  };

  try {
    if (!o.config_path.empty()) config = io::read_json(o.config_path);
    if (!config.is_object()) throw io::FormatError(o.config_path, 0, "configuration must be a JSON object");
    if (o.order < 2 || o.order % 2 != 0) throw std::invalid_argument("--order must be an even integer >= 2");

    if (o.command == "simulate-svm") simulate_svm(o, config, out);
    else if (o.command == "filter-svm") filter_svm(o, config, out);
    else if (o.command == "oracle-svm") oracle_svm(o, config, out);
    else if (o.command == "simulate-cir") simulate_cir(o, config, out);
    else if (o.command == "estimate-cir") estimate_cir(o, config, out);
    else if (o.command == "filter-cir") filter_cir(o, config, out);
    else if (o.command == "price-claim") price_claim(o, config, out);
    else if (o.command == "hedge") hedge(o, config, out);
  } catch (const PartialFailure& e) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    try {
      out.flush({{"command", o.command}, {"version", FINFILT_VERSION}}, secs);
    } catch (const std::exception&) {
    }
    return fail("numerical", e.what(), 3);
  } catch (const io::FormatError& e) {
    return fail("format", e.what(), 2, e.line());
  } catch (const std::invalid_argument& e) {
    return fail("config", e.what(), 2);
  } catch (const NumericalError& e) {
    return fail("numerical", e.what(), 3);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }

  json resolved = {{"command", o.command}, {"config", config}, {"seed", o.seed}, {"order", o.order},
                   {"mode", o.mode},       {"input", o.input},   {"compare", o.compare},
                   {"oracle", o.oracle},   {"augmented", o.augmented}};
  if (o.grid_nodes) resolved["grid_nodes"] = *o.grid_nodes;
  if (o.steps) resolved["steps"] = *o.steps;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  try {
    out.flush({{"command", o.command},
               {"version", FINFILT_VERSION},
               {"config_hash", Output::fnv1a(resolved.dump())},
               {"resolved_config", resolved}},
              secs);
  } catch (const std::exception& e) {
    return fail("io", e.what(), 1);
  }
  return 0;
}
