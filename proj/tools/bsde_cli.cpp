// Command-line runner: single experiments, benchmark tables, convergence and
// error-bound studies, closed-form prices.

#include "bsde/error_lab.hpp"
#include "bsde/experiment.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace {

constexpr const char* kCsvSchemas = R"(
Output files (CSV files start with one '# {...}' line holding the resolved
config as JSON):
  result.csv       payoff,style,d1,n,price,std_err,reference,rel_err_or_interval_flag
  loss.csv         iteration,loss
  report.json      schema_version, config, seed, result, training
  table<k>.csv     table,payoff,style,d1,n,price,std_err,reference,rel_err,
                   interval_lo,interval_hi,reported,status
  convergence.csv  n,h,price,std_err,reference,rel_err,interval_distance
  errors.csv       n,h,var_y0,y_err_sq,z_err_sq,price,analytic,rel_err,seed
  summary.json     per-run bound/error pairs and the log-log fit

Config keys (defaults): payoff=geometric_put|basket_call, style=european|bermudan,
  dim=1, n=100, exercise_dates=10, seed=1, oracle_samples=1000000,
  output_dir=$BSDE_OUTPUT_DIR or bsde_out,
  market.{rate=0.02,dividend=0,volatility=0.2,correlation=0,spot=100,strike=100,maturity=1},
  train.{batch=256 (4096 bermudan),iterations=4000,learning_rate=0.001,beta1=0.9,
         beta2=0.999,epsilon=1e-8,eval_batch=131072,plateau_tolerance=1e-6,
         plateau_window=200,resample_paths=true,hidden_width=-1 (d1+10),workers=1}
)";

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> n;
  std::optional<int> dim;
  std::optional<std::string> style;
  int jobs = 1;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "JSON experiment config")->check(CLI::ExistingFile);
  app->add_option("--set", f.sets, "Override a config key, e.g. --set train.iterations=500");
  app->add_option("--seed", f.seed, "Random seed");
  app->add_option("--out", f.out, "Output directory");
  app->add_option("--n", f.n, "Time steps");
  app->add_option("--dim", f.dim, "Number of assets d1");
  app->add_option("--style", f.style, "european or bermudan");
  app->add_option("--jobs", f.jobs, "Concurrent runs")->check(CLI::PositiveNumber);
}

bsde::ExperimentConfig resolve(const CommonFlags& f) {
  std::vector<std::string> sets = f.sets;
  if (f.seed) sets.push_back("seed=" + std::to_string(*f.seed));
  if (f.out) sets.push_back("output_dir=" + nlohmann::json(*f.out).dump());
  if (f.n) sets.push_back("n=" + std::to_string(*f.n));
  if (f.dim) sets.push_back("dim=" + std::to_string(*f.dim));
  if (f.style) sets.push_back("style=" + nlohmann::json(*f.style).dump());
  return f.config.empty() ? bsde::default_config(sets) : bsde::load_config(f.config, sets);
}

std::ofstream open_output(const std::string& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  std::ofstream out(std::filesystem::path(dir) / name);
  if (!out) throw std::runtime_error("cannot write " + (std::filesystem::path(dir) / name).string());
  return out;
}

int cmd_price(const CommonFlags& f) {
  const auto config = resolve(f);
  const auto r = bsde::run_experiment(config);
  std::cout << bsde::kResultCsvHeader << '\n'
            << std::setprecision(8) << bsde::to_string(config.payoff) << ','
            << bsde::to_string(config.style) << ',' << config.dim << ',' << config.n << ','
            << r.price << ',' << r.std_error << ',' << r.reference << ',' << r.flag << '\n';
  std::cerr << "iterations " << r.report.iterations_run << (r.report.stopped_on_plateau ? " (plateau)" : "")
            << ", " << std::setprecision(3) << r.report.wall_time_seconds << " s";
  if (!config.output_dir.empty()) std::cerr << ", artifacts in " << config.output_dir;
  std::cerr << '\n';
  return 0;
}

int cmd_table(int id, const CommonFlags& f, const std::vector<int>& only) {
  bsde::TableOptions options;
  options.seed = f.seed.value_or(1);
  options.jobs = f.jobs;
  options.overrides = f.sets;
  options.only = only;
  options.output_dir = f.out.value_or(bsde::default_output_dir());
  if (f.style) options.styles = {bsde::parse_style(*f.style)};
  const auto result = bsde::run_table(id, options);
  std::cout << bsde::kTableCsvHeader << '\n' << std::setprecision(8);
  for (const auto& r : result.rows) {
    std::cout << r.table << ',' << bsde::to_string(r.payoff) << ',' << bsde::to_string(r.style) << ','
              << r.dim << ',' << r.n << ',' << r.price << ',' << r.std_error << ',' << r.reference
              << ',' << r.relative_error << ',';
    if (r.interval)
      std::cout << r.interval->first << ',' << r.interval->second << ',';
    else
      std::cout << ",,";
    if (r.reported) std::cout << *r.reported;
    std::cout << ',' << r.status << '\n';
    if (!r.message.empty()) std::cerr << "row d1=" << r.dim << " n=" << r.n << ": " << r.message << '\n';
  }
  return result.all_passed() ? 0 : 1;
}

int cmd_convergence(const CommonFlags& f, const std::vector<int>& steps) {
  const auto config = resolve(f);
  if (config.payoff != bsde::PayoffKind::geometric_put)
    throw std::invalid_argument("convergence: only the geometric put has an analytic reference");
  const auto rows = bsde::run_convergence_study(config.black_scholes(), steps, config.style,
                                                config.train, config.exercise_dates,
                                                bsde::benchmark_interval(config), f.jobs);
  std::ostringstream csv;
  csv << "# " << bsde::config_to_json(config, -1) << '\n'
      << "n,h,price,std_err,reference,rel_err,interval_distance\n"
      << std::setprecision(10);
  for (const auto& r : rows) {
    csv << r.n << ',' << config.market.maturity / r.n << ',' << r.price << ',' << r.std_error << ','
        << r.reference << ',' << r.relative_error << ',';
    if (r.interval_distance) csv << *r.interval_distance;
    csv << '\n';
  }
  std::cout << csv.str();
  if (!config.output_dir.empty()) open_output(config.output_dir, "convergence.csv") << csv.str();
  return 0;
}

std::vector<bsde::StudyConfig> parse_runs(const std::vector<std::string>& runs) {
  std::vector<bsde::StudyConfig> out;
  for (const auto& text : runs) {
    bsde::StudyConfig c;
    char sep1 = 0, sep2 = 0;
    std::istringstream in(text);
    if (!(in >> c.n >> sep1 >> c.iterations >> sep2 >> c.seed) || sep1 != ':' || sep2 != ':' ||
        !in.eof())
      throw std::invalid_argument("--run expects n:iterations:seed, got '" + text + "'");
    out.push_back(c);
  }
  return out;
}

int cmd_posterior(const CommonFlags& f, const std::vector<std::string>& runs, std::int64_t eval_paths) {
  const auto config = resolve(f);
  std::vector<bsde::StudyConfig> configs;
  if (runs.empty()) {
    for (int n : {2, 5, 10, 20})
      for (int iterations : {1, 400}) configs.push_back({n, iterations, config.seed});
  } else {
    configs = parse_runs(runs);
  }
  const auto study =
      bsde::run_posterior_bound_study(config.black_scholes(), configs, config.train, eval_paths, f.jobs);
  std::ostringstream csv, summary;
  csv << "# " << bsde::config_to_json(config, -1) << '\n';
  bsde::write_error_records_csv(csv, study.records);
  bsde::write_study_summary_json(summary, study);
  std::cout << csv.str();
  if (study.log_fit)
    std::cerr << "log-log correlation " << study.log_fit->correlation << ", slope "
              << study.log_fit->slope << '\n';
  else
    std::cerr << "log-log correlation undefined (no spread)\n";
  if (!config.output_dir.empty()) {
    open_output(config.output_dir, "errors.csv") << csv.str();
    open_output(config.output_dir, "summary.json") << summary.str();
  }
  return 0;
}

int cmd_analytic(const CommonFlags& f) {
  const auto config = resolve(f);
  const auto market = config.black_scholes();
  std::cout << std::setprecision(8);
  if (config.payoff == bsde::PayoffKind::geometric_put) {
    const auto reduced = bsde::reduce_to_one_dim(market);
    std::cout << "payoff,d1,price,mu_hat,sigma_hat,s_hat0\n"
              << "geometric_put," << config.dim << ',' << bsde::geometric_put_closed_form(market)
              << ',' << reduced.mu_hat << ',' << reduced.sigma_hat << ',' << reduced.s_hat0 << '\n';
  } else {
    const auto mc = bsde::basket_call_mc_oracle(market, config.oracle_samples, config.seed, f.jobs);
    std::cout << "payoff,d1,price,std_err,samples\n"
              << "basket_call," << config.dim << ',' << mc.price << ',' << mc.std_error << ','
              << config.oracle_samples << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backward deep BSDE pricer for European and Bermudan basket options"};
  app.footer(kCsvSchemas);
  app.require_subcommand(1);

  CommonFlags flags;

  auto* price = app.add_subcommand("price", "Train and evaluate one configuration");
  add_common(price, flags);

  int table_id = 1;
  std::vector<int> only;
  auto* table = app.add_subcommand("table", "Regenerate a benchmark table (1, 2 or 3)");
  table->add_option("id", table_id, "Table number")->required()->check(CLI::IsMember({1, 2, 3}));
  table->add_option("--only", only, "Restrict to these d1 (tables 1, 3) or n (table 2)")->delimiter(',');
  add_common(table, flags);

  std::vector<int> steps = {2, 5, 10, 20, 50, 100};
  auto* convergence = app.add_subcommand("convergence", "Geometric-put price against n");
  convergence->add_option("--steps", steps, "Comma-separated step counts")->delimiter(',');
  add_common(convergence, flags);

  std::vector<std::string> runs;
  std::int64_t eval_paths = 1 << 15;
  auto* posterior = app.add_subcommand("posterior-bound", "Y/Z errors against h + Var[Y_0]");
  posterior->add_option("--run", runs, "n:iterations:seed (repeatable, at least 6)");
  posterior->add_option("--eval-paths", eval_paths, "Paths for the error measurement");
  add_common(posterior, flags);

  auto* analytic = app.add_subcommand("analytic", "Reference price only, no training");
  add_common(analytic, flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (price->parsed()) return cmd_price(flags);
    if (table->parsed()) return cmd_table(table_id, flags, only);
    if (convergence->parsed()) return cmd_convergence(flags, steps);
    if (posterior->parsed()) return cmd_posterior(flags, runs, eval_paths);
    if (analytic->parsed()) return cmd_analytic(flags);
  } catch (const bsde::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const bsde::TrainingError& e) {
    std::cerr << "training failed: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
