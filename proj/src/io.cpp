#include "finfilt/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <system_error>

namespace finfilt::io {

FormatError::FormatError(const std::string& source, std::size_t line, const std::string& what)
    : std::runtime_error(line > 0 ? source + ":" + std::to_string(line) + ": " + what : source + ": " + what),
      line_(line) {}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  const char* b = s.data();
  if (*b == '+') ++b;
  double v = 0.0;
  const auto r = std::from_chars(b, s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

struct Row {
  std::size_t line;
  std::vector<std::string> fields;
};

std::vector<Row> content_rows(std::istream& in) {
  std::vector<Row> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    rows.push_back({n, split(t)});
  }
  return rows;
}

double number_at(const Row& row, std::size_t col, const std::string& source, const std::string& what) {
  if (col >= row.fields.size()) {
    throw FormatError(source, row.line, "expected at least " + std::to_string(col + 1) + " fields");
  }
  const auto v = parse_number(row.fields[col]);
  if (!v || !std::isfinite(*v)) {
    throw FormatError(source, row.line, "malformed " + what + " '" + row.fields[col] + "'");
  }
  return *v;
}

void check_width(const Row& row, std::size_t width, const std::string& source) {
  if (row.fields.size() != width) {
    throw FormatError(source, row.line,
                      "expected " + std::to_string(width) + " fields, found " + std::to_string(row.fields.size()));
  }
}

std::ifstream open(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string(), 0, "cannot open file");
  return in;
}

}  // namespace

std::vector<double> read_returns(std::istream& in, const std::string& source) {
  const std::vector<Row> rows = content_rows(in);
  if (rows.empty()) throw FormatError(source, 0, "no data");

  const Row& first = rows.front();
  const bool numeric = std::all_of(first.fields.begin(), first.fields.end(),
                                   [](const std::string& f) { return parse_number(f).has_value(); });
  std::vector<double> out;
  if (numeric) {
    const std::size_t width = first.fields.size();
    if (width != 1 && width != 2) {
      throw FormatError(source, first.line, "expected one value or a t,return pair per line");
    }
    for (const Row& r : rows) {
      check_width(r, width, source);
      out.push_back(number_at(r, width - 1, source, "return"));
    }
    return out;
  }

  std::vector<std::string> names;
  for (const auto& f : first.fields) names.push_back(lower(f));
  const auto column = [&](const std::string& name) -> std::optional<std::size_t> {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names.begin());
  };
  const std::size_t width = names.size();

  if (const auto price = column("price")) {
    std::optional<double> prev;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      check_width(rows[i], width, source);
      const double p = number_at(rows[i], *price, source, "price");
      if (!(p > 0.0)) throw FormatError(source, rows[i].line, "price must be positive");
      if (prev) out.push_back(std::log(p) - std::log(*prev));
      prev = p;
    }
    if (out.empty()) throw FormatError(source, 0, "need at least two prices");
    return out;
  }

  std::optional<std::size_t> col = column("return");
  if (!col) col = column("y");
  if (!col && width == 1) col = 0;
  if (!col) throw FormatError(source, first.line, "header has no return, y or price column");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    check_width(rows[i], width, source);
    out.push_back(number_at(rows[i], *col, source, "return"));
  }
  if (out.empty()) throw FormatError(source, 0, "no data");
  return out;
}

std::vector<double> read_returns(const std::filesystem::path& path) {
  std::ifstream in = open(path);
  return read_returns(in, path.string());
}

std::vector<cir::YieldObservation> read_yield_panel(std::istream& in, const std::string& source) {
  const std::vector<Row> rows = content_rows(in);
  if (rows.empty()) throw FormatError(source, 0, "no data");
  std::vector<std::string> names;
  for (const auto& f : rows.front().fields) names.push_back(lower(f));
  const auto column = [&](const std::string& name) {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw FormatError(source, rows.front().line, "header must name t, maturity and yield");
    return static_cast<std::size_t>(it - names.begin());
  };
  const std::size_t ct = column("t"), cm = column("maturity"), cy = column("yield");

  std::vector<cir::YieldObservation> panel;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const Row& r = rows[i];
    check_width(r, names.size(), source);
    const double tv = number_at(r, ct, source, "t");
    if (tv != std::floor(tv) || std::abs(tv) > 1e9) {
      throw FormatError(source, r.line, "t must be an integer");
    }
    const int t = static_cast<int>(tv);
    const double m = number_at(r, cm, source, "maturity");
    const double y = number_at(r, cy, source, "yield");
    if (!(m > 0.0)) throw FormatError(source, r.line, "maturity must be positive");
    if (panel.empty() || panel.back().t != t) {
      if (!panel.empty() && t <= panel.back().t) {
        throw FormatError(source, r.line, "dates must increase (t = " + std::to_string(t) + " after " +
                                              std::to_string(panel.back().t) + ")");
      }
      panel.push_back(cir::YieldObservation{t, {}, {}});
    } else if (m <= panel.back().maturities.back()) {
      throw FormatError(source, r.line, "maturities must increase within a date");
    }
    panel.back().maturities.push_back(m);
    panel.back().yields.push_back(y);
  }
  if (panel.empty()) throw FormatError(source, 0, "no data");
  return panel;
}

std::vector<cir::YieldObservation> read_yield_panel(const std::filesystem::path& path) {
  std::ifstream in = open(path);
  return read_yield_panel(in, path.string());
}

void write_yield_panel(std::ostream& out, const std::vector<cir::YieldObservation>& panel) {
  out << "t,maturity,yield\n";
  for (const auto& o : panel) {
    for (std::size_t i = 0; i < o.size(); ++i) {
      out << o.t << ',' << format_double(o.maturities[i]) << ',' << format_double(o.yields[i]) << '\n';
    }
  }
}

json to_json(const svm::SvmParams& p) { return {{"rho", p.rho}, {"sigma", p.sigma}, {"gamma", p.gamma}}; }

json to_json(const svm::GaussianPrior& p) { return {{"mean", p.mean}, {"variance", p.variance}}; }

json to_json(const cir::CirParams& p) {
  json factors = json::array();
  for (const auto& f : p.factors) {
    factors.push_back({{"k", f.k}, {"theta", f.theta}, {"sigma", f.sigma}, {"lambda", f.lambda}});
  }
  return {{"factors", factors}, {"delta", p.delta}};
}

json to_json(const hedging::RegimeModel& m) {
  json lambda = json::array();
  for (Eigen::Index i = 0; i < m.lambda.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.lambda.cols(); ++j) row.push_back(m.lambda(i, j));
    lambda.push_back(row);
  }
  return {{"sigma", m.sigma}, {"lambda", lambda}};
}

json to_json(const hedging::Claim& c, double horizon) {
  return {{"payoff", hedging::to_string(c.kind)}, {"strike", c.strike}, {"T", horizon}};
}

namespace {

const std::string kConfig = "config";

const json& member(const json& j, const std::string& key, const std::string& where) {
  if (!j.is_object()) throw FormatError(kConfig, 0, where + ": expected an object");
  const auto it = j.find(key);
  if (it == j.end()) throw FormatError(kConfig, 0, where + ": missing key '" + key + "'");
  return *it;
}

double number(const json& j, const std::string& key, const std::string& where) {
  const json& v = member(j, key, where);
  if (!v.is_number()) throw FormatError(kConfig, 0, where + "." + key + ": expected a number");
  return v.get<double>();
}

double number_or(const json& j, const std::string& key, double fallback, const std::string& where) {
  if (j.is_object() && !j.contains(key)) return fallback;
  return number(j, key, where);
}

std::vector<double> numbers(const json& v, const std::string& where) {
  if (!v.is_array()) throw FormatError(kConfig, 0, where + ": expected an array of numbers");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) throw FormatError(kConfig, 0, where + ": expected an array of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

template <class F>
auto validated(F&& make, const std::string& where) {
  try {
    return make();
  } catch (const std::invalid_argument& e) {
    throw FormatError(kConfig, 0, where + ": " + e.what());
  }
}

}  // namespace

svm::SvmParams svm_params_from_json(const json& j) {
  return validated(
      [&] {
        svm::SvmParams p{number(j, "rho", "svm"), number(j, "sigma", "svm"), number(j, "gamma", "svm")};
        p.validate();
        return p;
      },
      "svm");
}

svm::GaussianPrior prior_from_json(const json& j) {
  svm::GaussianPrior p{number_or(j, "mean", 0.0, "prior"), number_or(j, "variance", 10.0, "prior")};
  if (!(p.variance >= 0.0)) throw FormatError(kConfig, 0, "prior.variance: must be non-negative");
  return p;
}

cir::CirParams cir_params_from_json(const json& j) {
  return validated(
      [&] {
        cir::CirParams p;
        const json& factors = member(j, "factors", "cir");
        if (!factors.is_array()) throw FormatError(kConfig, 0, "cir.factors: expected an array");
        for (std::size_t i = 0; i < factors.size(); ++i) {
          const std::string where = "cir.factors[" + std::to_string(i) + "]";
          p.factors.push_back(cir::FactorParams{number(factors[i], "k", where), number(factors[i], "theta", where),
                                                number(factors[i], "sigma", where),
                                                number_or(factors[i], "lambda", 0.0, where)});
        }
        const json& delta = member(j, "delta", "cir");
        p.delta = delta.is_number() ? std::vector<double>{delta.get<double>()} : numbers(delta, "cir.delta");
        p.validate();
        return p;
      },
      "cir");
}

hedging::RegimeModel regime_model_from_json(const json& j, double horizon) {
  return validated(
      [&] {
        hedging::RegimeModel m;
        m.sigma = numbers(member(j, "sigma", "regime"), "regime.sigma");
        m.horizon = horizon;
        const auto r = static_cast<Eigen::Index>(m.sigma.size());
        if (!j.contains("lambda") && r == 1) {
          m.lambda = Eigen::MatrixXd::Zero(1, 1);
        } else {
          const json& l = member(j, "lambda", "regime");
          if (!l.is_array() || static_cast<Eigen::Index>(l.size()) != r) {
            throw FormatError(kConfig, 0, "regime.lambda: expected " + std::to_string(r) + " rows");
          }
          m.lambda.resize(r, r);
          for (Eigen::Index i = 0; i < r; ++i) {
            const std::vector<double> row =
                numbers(l[static_cast<std::size_t>(i)], "regime.lambda[" + std::to_string(i) + "]");
            if (static_cast<Eigen::Index>(row.size()) != r) {
              throw FormatError(kConfig, 0, "regime.lambda[" + std::to_string(i) + "]: expected " +
                                                std::to_string(r) + " entries");
            }
            for (Eigen::Index k = 0; k < r; ++k) m.lambda(i, k) = row[static_cast<std::size_t>(k)];
          }
        }
        m.validate();
        return m;
      },
      "regime");
}

std::pair<hedging::Claim, double> claim_from_json(const json& j) {
  return validated(
      [&] {
        const json& kind = member(j, "payoff", "claim");
        if (!kind.is_string()) throw FormatError(kConfig, 0, "claim.payoff: expected a string");
        hedging::Claim c{hedging::parse_payoff_kind(kind.get<std::string>()), number_or(j, "strike", 100.0, "claim")};
        const double T = number(j, "T", "claim");
        if (!(T > 0.0)) throw FormatError(kConfig, 0, "claim.T: must be positive");
        if (c.kind != hedging::PayoffKind::identity && !(c.strike > 0.0)) {
          throw FormatError(kConfig, 0, "claim.strike: must be positive");
        }
        return std::pair{c, T};
      },
      "claim");
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in = open(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string(), 0, std::string("invalid JSON: ") + e.what());
  }
}

void write_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace finfilt::io
