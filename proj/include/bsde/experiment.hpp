#pragma once

// Experiment configuration (JSON), single runs and benchmark-table runs.

#include "bsde/backward_scheme.hpp"
#include "bsde/market.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bsde {

inline constexpr int kReportSchemaVersion = 1;

/// Uniform market parameters shared by every asset.
struct MarketParams {
  double rate = 0.02;
  double dividend = 0.0;
  double volatility = 0.2;
  double correlation = 0.0;
  double spot = 100.0;
  double strike = 100.0;
  double maturity = 1.0;
};

struct ExperimentConfig {
  PayoffKind payoff = PayoffKind::geometric_put;
  Style style = Style::european;
  int dim = 1;
  MarketParams market;
  int n = 100;
  int exercise_dates = 10;
  TrainConfig train;
  /// Samples for the basket-call reference price.
  std::int64_t oracle_samples = 1'000'000;
  std::string output_dir;
  std::uint64_t seed = 1;

  BlackScholesMarket black_scholes() const;
  Partition partition() const;
};

/// Bad config: names the offending field (dotted path).
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message);
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// $BSDE_OUTPUT_DIR, or "bsde_out" when unset.
std::string default_output_dir();

/// Parses and validates JSON text. `overrides` are "key.path=value" strings
/// applied before validation; values parse as JSON, falling back to a string.
/// Parse errors report line and column; unknown keys are rejected.
ExperimentConfig parse_config(const std::string& text,
                              const std::vector<std::string>& overrides = {},
                              const std::string& origin = "<config>");
ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides = {});
/// Defaults plus overrides.
ExperimentConfig default_config(const std::vector<std::string>& overrides = {});

/// Every field, defaults included.
std::string config_to_json(const ExperimentConfig& config, int indent = 2);

/// Throws ConfigError for any field that breaks a module precondition.
void validate_config(const ExperimentConfig& config);

struct ExperimentResult {
  ExperimentConfig config;
  TrainingReport report;
  double price = 0.0;
  double std_error = 0.0;
  /// Closed form (geometric put) or Monte Carlo oracle (basket call) of the
  /// European price.
  double reference = 0.0;
  std::optional<double> relative_error;  // European only
  std::optional<std::pair<double, double>> interval;  // Bermudan benchmark
  /// Relative error as text (European), or "inside[lo,hi]" / "outside[lo,hi]"
  /// / "no-benchmark" (Bermudan).
  std::string flag;
};

/// Trains and evaluates; writes report.json, loss.csv and result.csv into
/// config.output_dir when it is non-empty. Throws TrainingError on divergence.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// European reference for the config's market and payoff.
double reference_price(const ExperimentConfig& config);

/// Bermudan benchmark interval from the bundled fixture when the market is the
/// fixture's parameter block.
std::optional<std::pair<double, double>> benchmark_interval(const ExperimentConfig& config);

/// The bundled benchmark fixture (JSON text).
const char* benchmarks_json();

struct TableOptions {
  std::uint64_t seed = 1;
  int jobs = 1;
  /// Applied to every row's config.
  std::vector<std::string> overrides;
  /// Empty: both styles.
  std::vector<Style> styles;
  /// Restrict to these dims (tables 1, 3) or step counts (table 2); empty: all.
  std::vector<int> only;
  std::string output_dir;
};

struct TableRow {
  int table = 0;
  PayoffKind payoff = PayoffKind::geometric_put;
  Style style = Style::european;
  int dim = 0;
  int n = 0;
  double price = 0.0;
  double std_error = 0.0;
  double reference = 0.0;
  double relative_error = 0.0;
  std::optional<std::pair<double, double>> interval;
  std::optional<double> reported;
  /// "pass", "fail", "no-benchmark" or "error".
  std::string status;
  std::string message;
};

struct TableResult {
  int table = 0;
  std::vector<TableRow> rows;
  /// Every row is "pass" or "no-benchmark".
  bool all_passed() const;
};

/// Rows run concurrently up to options.jobs; each row's result depends only
/// on its own config. Writes table<id>.csv into options.output_dir when set.
TableResult run_table(int table, const TableOptions& options);

/// Header of the table CSV.
inline constexpr const char* kTableCsvHeader =
    "table,payoff,style,d1,n,price,std_err,reference,rel_err,interval_lo,interval_hi,reported,"
    "status";
inline constexpr const char* kResultCsvHeader =
    "payoff,style,d1,n,price,std_err,reference,rel_err_or_interval_flag";

}  // namespace bsde
