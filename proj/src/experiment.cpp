#include "bsde/experiment.hpp"

#include "bsde/benchmarks_data.hpp"
#include "bsde/rng.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace bsde {

using nlohmann::json;

namespace {

json parse_json(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    std::size_t line = 1, column = 1;
    for (std::size_t k = 0; k < end; ++k) {
      if (text[k] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    std::string what = e.what();
    if (const auto pos = what.find("parse error"); pos != std::string::npos) what = what.substr(pos);
    throw ConfigError("", origin + ":" + std::to_string(line) + ":" + std::to_string(column) +
                              ": invalid JSON (" + what + ")");
  }
}

void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError(assignment, "override must look like key.path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError(path, "empty key in override path");
    if (!node->is_object()) throw ConfigError(path, "override path crosses a non-object value");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    json& child = (*node)[key];
    if (child.is_null()) child = json::object();
    node = &child;
    start = dot + 1;
  }
}

void reject_unknown(const json& object, const std::string& prefix,
                    const std::set<std::string>& allowed) {
  if (!object.is_object())
    throw ConfigError(prefix.empty() ? "<root>" : prefix, "expected a JSON object");
  for (const auto& [key, _] : object.items()) {
    if (!allowed.contains(key))
      throw ConfigError(prefix.empty() ? key : prefix + "." + key, "unknown key");
  }
}

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

double read_number(const json& object, const std::string& prefix, const std::string& key,
                   double fallback) {
  if (!object.contains(key)) return fallback;
  const auto& v = object.at(key);
  if (!v.is_number()) throw ConfigError(join(prefix, key), "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError(join(prefix, key), "must be finite");
  return x;
}

std::int64_t read_integer(const json& object, const std::string& prefix, const std::string& key,
                          std::int64_t fallback) {
  if (!object.contains(key)) return fallback;
  const auto& v = object.at(key);
  if (!v.is_number_integer()) throw ConfigError(join(prefix, key), "expected an integer");
  return v.get<std::int64_t>();
}

int read_int(const json& object, const std::string& prefix, const std::string& key, int fallback) {
  const std::int64_t v = read_integer(object, prefix, key, fallback);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw ConfigError(join(prefix, key), "out of range");
  return static_cast<int>(v);
}

bool read_bool(const json& object, const std::string& prefix, const std::string& key,
               bool fallback) {
  if (!object.contains(key)) return fallback;
  const auto& v = object.at(key);
  if (!v.is_boolean()) throw ConfigError(join(prefix, key), "expected true or false");
  return v.get<bool>();
}

std::string read_string(const json& object, const std::string& key, const std::string& fallback) {
  if (!object.contains(key)) return fallback;
  const auto& v = object.at(key);
  if (!v.is_string()) throw ConfigError(key, "expected a string");
  return v.get<std::string>();
}

ExperimentConfig from_json(const json& root) {
  reject_unknown(root, "",
                 {"payoff", "style", "dim", "market", "n", "exercise_dates", "train",
                  "oracle_samples", "output_dir", "seed"});
  ExperimentConfig c;
  try {
    c.payoff = parse_payoff(read_string(root, "payoff", to_string(c.payoff)));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError("payoff", e.what());
  }
  try {
    c.style = parse_style(read_string(root, "style", to_string(c.style)));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError("style", e.what());
  }
  c.dim = read_int(root, "", "dim", c.dim);
  c.n = read_int(root, "", "n", c.n);
  c.exercise_dates = read_int(root, "", "exercise_dates", c.exercise_dates);
  c.oracle_samples = read_integer(root, "", "oracle_samples", c.oracle_samples);
  c.output_dir = read_string(root, "output_dir", default_output_dir());
  if (root.contains("seed")) {
    const auto& v = root.at("seed");
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      throw ConfigError("seed", "expected a non-negative integer");
    c.seed = v.get<std::uint64_t>();
  }

  if (root.contains("market")) {
    const auto& m = root.at("market");
    reject_unknown(m, "market",
                   {"rate", "dividend", "volatility", "correlation", "spot", "strike", "maturity"});
    c.market.rate = read_number(m, "market", "rate", c.market.rate);
    c.market.dividend = read_number(m, "market", "dividend", c.market.dividend);
    c.market.volatility = read_number(m, "market", "volatility", c.market.volatility);
    c.market.correlation = read_number(m, "market", "correlation", c.market.correlation);
    c.market.spot = read_number(m, "market", "spot", c.market.spot);
    c.market.strike = read_number(m, "market", "strike", c.market.strike);
    c.market.maturity = read_number(m, "market", "maturity", c.market.maturity);
  }

  auto& t = c.train;
  t.batch = c.style == Style::bermudan ? 4096 : 256;
  t.seed = c.seed;
  if (root.contains("train")) {
    const auto& j = root.at("train");
    reject_unknown(j, "train",
                   {"batch", "iterations", "learning_rate", "beta1", "beta2", "epsilon",
                    "eval_batch", "plateau_tolerance", "plateau_window", "resample_paths",
                    "hidden_width", "workers"});
    t.batch = read_integer(j, "train", "batch", t.batch);
    t.iterations = read_int(j, "train", "iterations", t.iterations);
    t.adam.step_size = read_number(j, "train", "learning_rate", t.adam.step_size);
    t.adam.beta1 = read_number(j, "train", "beta1", t.adam.beta1);
    t.adam.beta2 = read_number(j, "train", "beta2", t.adam.beta2);
    t.adam.epsilon = read_number(j, "train", "epsilon", t.adam.epsilon);
    t.eval_batch = read_integer(j, "train", "eval_batch", t.eval_batch);
    t.plateau_tolerance = read_number(j, "train", "plateau_tolerance", t.plateau_tolerance);
    t.plateau_window = read_int(j, "train", "plateau_window", t.plateau_window);
    t.resample_paths = read_bool(j, "train", "resample_paths", t.resample_paths);
    t.hidden_width = read_int(j, "train", "hidden_width", t.hidden_width);
    t.workers = read_int(j, "train", "workers", t.workers);
  }
  validate_config(c);
  return c;
}

json to_json(const ExperimentConfig& c) {
  const auto& t = c.train;
  return {{"payoff", to_string(c.payoff)},
          {"style", to_string(c.style)},
          {"dim", c.dim},
          {"market",
           {{"rate", c.market.rate},
            {"dividend", c.market.dividend},
            {"volatility", c.market.volatility},
            {"correlation", c.market.correlation},
            {"spot", c.market.spot},
            {"strike", c.market.strike},
            {"maturity", c.market.maturity}}},
          {"n", c.n},
          {"exercise_dates", c.exercise_dates},
          {"train",
           {{"batch", t.batch},
            {"iterations", t.iterations},
            {"learning_rate", t.adam.step_size},
            {"beta1", t.adam.beta1},
            {"beta2", t.adam.beta2},
            {"epsilon", t.adam.epsilon},
            {"eval_batch", t.eval_batch},
            {"plateau_tolerance", t.plateau_tolerance},
            {"plateau_window", t.plateau_window},
            {"resample_paths", t.resample_paths},
            {"hidden_width", t.hidden_width},
            {"workers", t.workers}}},
          {"oracle_samples", c.oracle_samples},
          {"output_dir", c.output_dir},
          {"seed", c.seed}};
}

const json& fixture() {
  static const json data = json::parse(detail::kBenchmarksJson);
  return data;
}

std::optional<std::pair<double, double>> read_interval(const json& v) {
  if (v.is_null()) return std::nullopt;
  return std::make_pair(v.at(0).get<double>(), v.at(1).get<double>());
}

bool matches_fixture_market(const ExperimentConfig& c) {
  const auto& p = fixture().at("parameters");
  const auto& m = c.market;
  return m.rate == p.at("rate").get<double>() && m.dividend == p.at("dividend").get<double>() &&
         m.volatility == p.at("volatility").get<double>() &&
         m.correlation == p.at("correlation").get<double>() && m.spot == p.at("spot").get<double>() &&
         m.strike == p.at("strike").get<double>() && m.maturity == p.at("maturity").get<double>() &&
         c.exercise_dates == p.at("exercise_dates").get<int>();
}

std::string format_interval(const std::pair<double, double>& interval) {
  std::ostringstream out;
  out << '[' << interval.first << ';' << interval.second << ']';
  return out.str();
}

std::string comment_line(const json& j) { return "# " + j.dump() + "\n"; }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string result_csv(const ExperimentResult& r) {
  std::ostringstream out;
  out << comment_line(to_json(r.config)) << kResultCsvHeader << '\n';
  out << std::setprecision(10) << to_string(r.config.payoff) << ',' << to_string(r.config.style)
      << ',' << r.config.dim << ',' << r.config.n << ',' << r.price << ',' << r.std_error << ','
      << r.reference << ',' << r.flag << '\n';
  return out.str();
}

std::string loss_csv(const ExperimentResult& r) {
  std::ostringstream out;
  out << comment_line(to_json(r.config)) << "iteration,loss\n" << std::setprecision(12);
  for (std::size_t k = 0; k < r.report.loss_history.size(); ++k)
    out << k << ',' << r.report.loss_history[k] << '\n';
  return out.str();
}

json report_json(const ExperimentResult& r) {
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["config"] = to_json(r.config);
  j["seed"] = r.config.seed;
  j["result"] = {{"price", r.price},
                 {"std_error", r.std_error},
                 {"reference", r.reference},
                 {"flag", r.flag}};
  j["result"]["relative_error"] = r.relative_error ? json(*r.relative_error) : json(nullptr);
  j["result"]["interval"] =
      r.interval ? json::array({r.interval->first, r.interval->second}) : json(nullptr);
  j["training"] = {{"iterations_run", r.report.iterations_run},
                   {"stopped_on_plateau", r.report.stopped_on_plateau},
                   {"final_variance", r.report.final_variance},
                   {"wall_time_seconds", r.report.wall_time_seconds},
                   {"loss_history", r.report.loss_history}};
  return j;
}

}  // namespace

ConfigError::ConfigError(std::string field, const std::string& message)
    : std::invalid_argument(field.empty() ? message : "config field '" + field + "': " + message),
      field_(std::move(field)) {}

std::string default_output_dir() {
  if (const char* env = std::getenv("BSDE_OUTPUT_DIR"); env && *env) return env;
  return "bsde_out";
}

BlackScholesMarket ExperimentConfig::black_scholes() const {
  return BlackScholesMarket::uniform(dim, market.rate, market.dividend, market.volatility,
                                     market.correlation, market.spot, market.strike,
                                     market.maturity);
}

Partition ExperimentConfig::partition() const {
  if (style == Style::bermudan)
    return build_partition(n, market.maturity,
                           ExerciseSchedule::uniform(exercise_dates, market.maturity));
  return build_partition(n, market.maturity);
}

void validate_config(const ExperimentConfig& c) {
  if (c.dim < 1) throw ConfigError("dim", "must be >= 1");
  if (c.n < 1) throw ConfigError("n", "must be >= 1");
  if (c.exercise_dates < 1) throw ConfigError("exercise_dates", "must be >= 1");
  if (c.style == Style::bermudan && c.n % c.exercise_dates != 0)
    throw ConfigError("n", "n = " + std::to_string(c.n) + " is not a multiple of exercise_dates = " +
                               std::to_string(c.exercise_dates));
  if (c.oracle_samples < 1) throw ConfigError("oracle_samples", "must be >= 1");
  const auto& m = c.market;
  if (!(m.maturity > 0.0)) throw ConfigError("market.maturity", "must be > 0");
  if (m.volatility < 0.0) throw ConfigError("market.volatility", "must be >= 0");
  if (!(m.spot > 0.0)) throw ConfigError("market.spot", "must be > 0");
  if (m.strike < 0.0) throw ConfigError("market.strike", "must be >= 0");
  if (m.correlation > 1.0 || (c.dim > 1 && m.correlation < -1.0 / (c.dim - 1)))
    throw ConfigError("market.correlation", "constant correlation matrix is not positive semi-definite");
  try {
    c.black_scholes().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("market", e.what());
  }
  const auto& t = c.train;
  if (t.batch < 2) throw ConfigError("train.batch", "must be >= 2");
  if (t.iterations < 1) throw ConfigError("train.iterations", "must be >= 1");
  if (t.eval_batch < 2) throw ConfigError("train.eval_batch", "must be >= 2");
  if (!(t.adam.step_size > 0.0)) throw ConfigError("train.learning_rate", "must be > 0");
  if (!(t.adam.beta1 >= 0.0 && t.adam.beta1 < 1.0)) throw ConfigError("train.beta1", "must lie in [0, 1)");
  if (!(t.adam.beta2 >= 0.0 && t.adam.beta2 < 1.0)) throw ConfigError("train.beta2", "must lie in [0, 1)");
  if (!(t.adam.epsilon > 0.0)) throw ConfigError("train.epsilon", "must be > 0");
  if (t.plateau_tolerance < 0.0) throw ConfigError("train.plateau_tolerance", "must be >= 0");
  if (t.plateau_window < 1) throw ConfigError("train.plateau_window", "must be >= 1");
  if (t.hidden_width != -1 && t.hidden_width < 1)
    throw ConfigError("train.hidden_width", "must be >= 1 (or -1 for d1 + 10)");
  if (t.workers < 1) throw ConfigError("train.workers", "must be >= 1");
}

ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides,
                              const std::string& origin) {
  json root = parse_json(text, origin);
  if (!root.is_object()) throw ConfigError("<root>", "expected a JSON object");
  for (const auto& o : overrides) apply_override(root, o);
  return from_json(root);
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), overrides, path);
}

ExperimentConfig default_config(const std::vector<std::string>& overrides) {
  return parse_config("{}", overrides, "<defaults>");
}

std::string config_to_json(const ExperimentConfig& config, int indent) {
  return to_json(config).dump(indent);
}

const char* benchmarks_json() { return detail::kBenchmarksJson; }

double reference_price(const ExperimentConfig& config) {
  const auto market = config.black_scholes();
  if (config.payoff == PayoffKind::geometric_put) return geometric_put_closed_form(market);
  return basket_call_mc_oracle(market, config.oracle_samples, mix_seed(config.seed ^ 0x0AC1Eull),
                               config.train.workers)
      .price;
}

std::optional<std::pair<double, double>> benchmark_interval(const ExperimentConfig& config) {
  if (!matches_fixture_market(config)) return std::nullopt;
  const auto& tables = fixture().at("tables");
  const char* id = config.payoff == PayoffKind::geometric_put ? "1" : "3";
  for (const auto& row : tables.at(id).at("rows"))
    if (row.at("dim").get<int>() == config.dim) return read_interval(row.at("bermudan_interval"));
  return std::nullopt;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  validate_config(config);
  ExperimentResult r;
  r.config = config;
  TrainConfig train_config = config.train;
  train_config.seed = config.seed;
  r.config.train.seed = config.seed;

  const auto market = config.black_scholes();
  const FbsdeProblem problem = make_problem(config.payoff, market);
  const Partition partition = config.partition();
  auto trained = train(problem, partition, train_config, config.style);
  r.report = std::move(trained.report);
  r.price = r.report.price;
  r.std_error = r.report.price_std_error;
  r.reference = reference_price(config);

  if (config.style == Style::european) {
    r.relative_error = (r.price - r.reference) / r.reference;
    std::ostringstream flag;
    flag << std::setprecision(6) << *r.relative_error;
    r.flag = flag.str();
  } else {
    r.interval = benchmark_interval(config);
    if (!r.interval) {
      r.flag = "no-benchmark";
    } else {
      const bool inside = r.price >= r.interval->first && r.price <= r.interval->second;
      r.flag = (inside ? "inside" : "outside") + format_interval(*r.interval);
    }
  }

  if (!config.output_dir.empty()) {
    const std::filesystem::path dir(config.output_dir);
    std::filesystem::create_directories(dir);
    write_text(dir / "report.json", report_json(r).dump(2) + "\n");
    write_text(dir / "loss.csv", loss_csv(r));
    write_text(dir / "result.csv", result_csv(r));
  }
  return r;
}

bool TableResult::all_passed() const {
  for (const auto& row : rows)
    if (row.status != "pass" && row.status != "no-benchmark") return false;
  return true;
}

namespace {

struct RowPlan {
  ExperimentConfig config;
  TableRow row;
  double european_tolerance = 0.01;
};

bool wanted(const std::vector<int>& only, int key) {
  return only.empty() || std::find(only.begin(), only.end(), key) != only.end();
}

bool wanted(const std::vector<Style>& styles, Style style) {
  return styles.empty() || std::find(styles.begin(), styles.end(), style) != styles.end();
}

std::vector<RowPlan> plan_table(int table, const TableOptions& options) {
  const auto& root = fixture();
  const std::string id = std::to_string(table);
  if (!root.at("tables").contains(id))
    throw std::invalid_argument("run_table: unknown table " + id + " (expected 1, 2 or 3)");
  const auto& entry = root.at("tables").at(id);
  const auto& p = root.at("parameters");
  const double tolerance = root.at("tolerances").at("european_relative").get<double>();
  const int exercise = p.at("exercise_dates").get<int>();

  auto base = [&](Style style, int dim, std::optional<int> n) {
    std::vector<std::string> sets = {
        "payoff=\"" + entry.at("payoff").get<std::string>() + "\"",
        "style=\"" + to_string(style) + "\"",
        "dim=" + std::to_string(dim),
        "seed=" + std::to_string(options.seed),
        "output_dir=\"\"",
        "exercise_dates=" + std::to_string(exercise),
    };
    for (const char* key : {"rate", "dividend", "volatility", "correlation", "spot", "strike", "maturity"})
      sets.push_back(std::string("market.") + key + "=" + p.at(key).dump());
    if (n) sets.push_back("n=" + std::to_string(*n));
    sets.insert(sets.end(), options.overrides.begin(), options.overrides.end());
    return default_config(sets);
  };

  std::vector<RowPlan> plans;
  auto add = [&](Style style, int dim, std::optional<int> n,
                 std::optional<std::pair<double, double>> interval, std::optional<double> reported,
                 double european_tolerance) {
    RowPlan plan;
    plan.config = base(style, dim, n);
    plan.row.table = table;
    plan.row.payoff = plan.config.payoff;
    plan.row.style = style;
    plan.row.dim = dim;
    plan.row.n = plan.config.n;
    plan.row.interval = interval;
    plan.row.reported = reported;
    plan.european_tolerance = european_tolerance;
    plans.push_back(std::move(plan));
  };
  auto optional_number = [](const json& row, const char* key) -> std::optional<double> {
    if (!row.contains(key) || row.at(key).is_null()) return std::nullopt;
    return row.at(key).get<double>();
  };

  if (table == 2) {
    const int dim = entry.at("dim").get<int>();
    const auto interval = read_interval(entry.at("bermudan_interval"));
    const int min_n = entry.at("bermudan_min_n").get<int>();
    for (const auto& row : entry.at("rows")) {
      const int n = row.at("n").get<int>();
      if (!wanted(options.only, n)) continue;
      // Tolerance widens by the reported discretization error of the row.
      const double reported_err = std::abs(row.at("reported_rel_err").get<double>());
      if (wanted(options.styles, Style::european))
        add(Style::european, dim, n, std::nullopt, optional_number(row, "reported_european"),
            tolerance + reported_err);
      if (wanted(options.styles, Style::bermudan) && n >= min_n && n % exercise == 0)
        add(Style::bermudan, dim, n, interval, optional_number(row, "reported_bermudan"), tolerance);
    }
  } else {
    for (const auto& row : entry.at("rows")) {
      const int dim = row.at("dim").get<int>();
      if (!wanted(options.only, dim)) continue;
      if (wanted(options.styles, Style::european))
        add(Style::european, dim, std::nullopt, std::nullopt,
            optional_number(row, "reported_european"), tolerance);
      if (wanted(options.styles, Style::bermudan))
        add(Style::bermudan, dim, std::nullopt, read_interval(row.at("bermudan_interval")),
            optional_number(row, "reported_bermudan"), tolerance);
    }
  }
  return plans;
}

std::string table_csv(const TableResult& result, const TableOptions& options) {
  std::ostringstream out;
  json meta = {{"table", result.table},
               {"seed", options.seed},
               {"overrides", options.overrides},
               {"benchmarks", json::parse(detail::kBenchmarksJson).at("tolerances")}};
  out << comment_line(meta) << kTableCsvHeader << '\n' << std::setprecision(10);
  for (const auto& r : result.rows) {
    out << r.table << ',' << to_string(r.payoff) << ',' << to_string(r.style) << ',' << r.dim
        << ',' << r.n << ',' << r.price << ',' << r.std_error << ',' << r.reference << ','
        << r.relative_error << ',';
    if (r.interval)
      out << r.interval->first << ',' << r.interval->second << ',';
    else
      out << ",,";
    if (r.reported) out << *r.reported;
    out << ',' << r.status << '\n';
  }
  return out.str();
}

}  // namespace

TableResult run_table(int table, const TableOptions& options) {
  auto plans = plan_table(table, options);
  const double margin = fixture().at("tolerances").at("bermudan_interval_margin").get<double>();

  TableResult result;
  result.table = table;
  parallel_ranges(plans.size(), options.jobs, [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      auto& plan = plans[k];
      auto& row = plan.row;
      try {
        const auto r = run_experiment(plan.config);
        row.price = r.price;
        row.std_error = r.std_error;
        row.reference = r.reference;
        row.relative_error = (r.price - r.reference) / r.reference;
        if (row.style == Style::european) {
          row.status = std::abs(row.relative_error) <= plan.european_tolerance ? "pass" : "fail";
        } else if (!row.interval) {
          row.status = "no-benchmark";
        } else {
          const double lo = row.interval->first * (1.0 - margin);
          const double hi = row.interval->second * (1.0 + margin);
          row.status = row.price >= lo && row.price <= hi ? "pass" : "fail";
        }
      } catch (const std::exception& e) {
        row.status = "error";
        row.message = e.what();
      }
    }
  });
  for (auto& plan : plans) result.rows.push_back(std::move(plan.row));

  if (!options.output_dir.empty()) {
    const std::filesystem::path dir(options.output_dir);
    std::filesystem::create_directories(dir);
    write_text(dir / ("table" + std::to_string(table) + ".csv"), table_csv(result, options));
  }
  return result;
}

}  // namespace bsde
