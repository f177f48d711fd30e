#pragma once

// CSV and JSON formats used by the command-line tool.

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "finfilt/cir_model.hpp"
#include "finfilt/hedging.hpp"
#include "finfilt/svm_filter.hpp"

namespace finfilt::io {

using nlohmann::json;

/// Malformed input; line is 1-based, 0 when not tied to a line.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& source, std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Shortest representation that parses back to the same double.
std::string format_double(double v);

/// Return series. Accepted layouts (blank lines and lines starting with '#'
/// are skipped):
///   - one number per line;
///   - a header naming a `return` or `y` column, e.g. `t,return` or `t,x,y`;
///   - `date,price`: returns are log differences of consecutive prices.
std::vector<double> read_returns(std::istream& in, const std::string& source = "<input>");
std::vector<double> read_returns(const std::filesystem::path& path);

/// Rows `t,maturity,yield`, grouped into observations by t. Rows of one date
/// must be contiguous with increasing maturities; dates must increase.
std::vector<cir::YieldObservation> read_yield_panel(std::istream& in, const std::string& source = "<input>");
std::vector<cir::YieldObservation> read_yield_panel(const std::filesystem::path& path);
void write_yield_panel(std::ostream& out, const std::vector<cir::YieldObservation>& panel);

json to_json(const svm::SvmParams& p);
json to_json(const svm::GaussianPrior& p);
json to_json(const cir::CirParams& p);
json to_json(const hedging::RegimeModel& m);
json to_json(const hedging::Claim& c, double horizon);

/// The readers check keys and types and rethrow problems as FormatError
/// naming the offending key.
svm::SvmParams svm_params_from_json(const json& j);
svm::GaussianPrior prior_from_json(const json& j);
cir::CirParams cir_params_from_json(const json& j);
/// {sigma[], lambda[][]}; the horizon comes from the claim.
hedging::RegimeModel regime_model_from_json(const json& j, double horizon);
/// {payoff, strike, T}; returns the claim and T.
std::pair<hedging::Claim, double> claim_from_json(const json& j);

json read_json(const std::filesystem::path& path);

/// Writes via a temporary file in the same directory and renames it into
/// place.
void write_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace finfilt::io
