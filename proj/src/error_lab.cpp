#include "bsde/error_lab.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "bsde/stats.hpp"

namespace bsde {

namespace {

constexpr std::int64_t kChunk = 8192;

struct ReferenceModel {
  OneDimReduction reduced;
  Matrix factor;
  double rate = 0.0;
  double strike = 0.0;
  double maturity = 0.0;
  Vector vols;
  int dim = 0;

  explicit ReferenceModel(const BlackScholesMarket& market)
      : reduced(reduce_to_one_dim(market)),
        factor(market.correlation_factor()),
        rate(market.rate),
        strike(market.strike),
        maturity(market.maturity),
        vols(market.vols),
        dim(market.dim()) {}

  ValueAndDelta at(double t, double s) const {
    return reduced_put_value_and_delta(reduced, rate, strike, maturity - t, s);
  }

  // grad(u) sigma = L^T v with v_j = delta * s * sigma_j / d.
  Vector z(double delta, double s) const {
    const Vector v = (delta * s / dim) * vols;
    return factor.transpose() * v;
  }
};

}  // namespace

Vector geometric_put_z_reference(const BlackScholesMarket& market, double t,
                                 const Eigen::Ref<const Vector>& x) {
  market.validate();
  if (x.size() != market.dim())
    throw std::invalid_argument("geometric_put_z_reference: state has wrong size");
  if (!(t >= 0.0 && t < market.maturity))
    throw std::invalid_argument("geometric_put_z_reference: requires 0 <= t < T");
  const ReferenceModel model(market);
  const double s = floored_geometric_mean(x);
  return model.z(model.at(t, s).delta, s);
}

ErrorRecord measure_y_z_errors(const ControlStack& controls, const BlackScholesMarket& market,
                               PayoffKind payoff, const Partition& partition, std::int64_t paths,
                               std::uint64_t seed, int workers) {
  if (payoff != PayoffKind::geometric_put)
    throw std::invalid_argument("measure_y_z_errors: no analytic reference for payoff '" +
                                to_string(payoff) + "'");
  if (paths < 2) throw std::invalid_argument("measure_y_z_errors: needs at least 2 paths");
  if (controls.size() != partition.steps())
    throw std::invalid_argument("measure_y_z_errors: control stack does not match the partition");
  const FbsdeProblem problem = make_problem(payoff, market);
  const ReferenceModel model(market);
  const int n = partition.steps();

  std::vector<double> y_sums(static_cast<std::size_t>(n), 0.0);
  std::vector<double> z_sums(static_cast<std::size_t>(n), 0.0);
  std::vector<double> y0;
  y0.reserve(static_cast<std::size_t>(paths));

  for (std::int64_t first = 0; first < paths; first += kChunk) {
    const std::int64_t count = std::min(kChunk, paths - first);
    const PathBatch batch = simulate_forward_batch(problem, partition, count, seed,
                                                   static_cast<std::uint64_t>(first), workers);
    RolloutTrace trace;
    const Vector y = rollout_backward(problem, partition, batch, controls, Style::european, &trace);
    y0.insert(y0.end(), y.data(), y.data() + y.size());

    for (int i = 0; i < n; ++i) {
      const double t = partition.time(i);
      const auto states = batch.states.step(i);
      double ys = 0.0, zs = 0.0;
      for (Eigen::Index m = 0; m < count; ++m) {
        const double s = floored_geometric_mean(states.col(m));
        const auto ref = model.at(t, s);
        const double dy = trace.y[static_cast<std::size_t>(i)](0, m) - ref.value;
        ys += dy * dy;
        zs += (trace.z[static_cast<std::size_t>(i)].col(m) - model.z(ref.delta, s)).squaredNorm();
      }
      y_sums[static_cast<std::size_t>(i)] += ys;
      z_sums[static_cast<std::size_t>(i)] += zs;
    }
  }

  ErrorRecord record;
  record.n = n;
  record.h = partition.step_size();
  record.seed = seed;
  const auto stats = summarize(y0);
  record.var_y0 = stats.variance();
  record.price = stats.mean();
  record.analytic = geometric_put_closed_form(market);
  record.relative_error = std::abs(record.price - record.analytic) / record.analytic;
  const auto total = static_cast<double>(paths);
  for (int i = 0; i < n; ++i) {
    const double ye = y_sums[static_cast<std::size_t>(i)] / total;
    const double ze = z_sums[static_cast<std::size_t>(i)] / total;
    record.y_profile.push_back(ye);
    record.z_profile.push_back(ze);
    record.y_error_sq = std::max(record.y_error_sq, ye);
    record.z_error_sq += record.h * ze;
  }
  return record;
}

std::optional<LinearFit> fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("fit_line: samples differ in length");
  if (x.size() < 2) return std::nullopt;
  const auto count = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= count;
  my /= count;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    syy += (y[k] - my) * (y[k] - my);
    sxy += (x[k] - mx) * (y[k] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return std::nullopt;
  LinearFit fit;
  fit.correlation = sxy / std::sqrt(sxx * syy);
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

PosteriorStudy run_posterior_bound_study(const BlackScholesMarket& market,
                                         const std::vector<StudyConfig>& configs,
                                         const TrainConfig& base, std::int64_t eval_paths,
                                         int jobs) {
  if (configs.size() < 6)
    throw std::invalid_argument("run_posterior_bound_study: needs at least 6 configurations, got " +
                                std::to_string(configs.size()));
  market.validate();
  const FbsdeProblem problem = make_geometric_put_problem(market);

  PosteriorStudy study;
  study.configs = configs;
  study.records.resize(configs.size());
  parallel_ranges(configs.size(), jobs, [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const auto& c = configs[k];
      TrainConfig config = base;
      config.iterations = c.iterations;
      config.seed = c.seed;
      config.workers = 1;
      const Partition partition = build_partition(c.n, market.maturity);
      const auto trained = train(problem, partition, config, Style::european);
      study.records[k] = measure_y_z_errors(trained.controls, market, PayoffKind::geometric_put,
                                            partition, eval_paths, evaluation_seed(c.seed) + 1);
    }
  });

  std::vector<double> log_bound, log_error;
  for (const auto& r : study.records) {
    study.bound.push_back(r.h + r.var_y0);
    study.error.push_back(r.y_error_sq + r.z_error_sq);
    log_bound.push_back(std::log(study.bound.back()));
    log_error.push_back(std::log(study.error.back()));
  }
  study.log_fit = fit_line(log_bound, log_error);
  return study;
}

std::vector<ConvergenceRow> run_convergence_study(const BlackScholesMarket& market,
                                                  const std::vector<int>& steps, Style style,
                                                  const TrainConfig& base, int exercise_count,
                                                  std::optional<std::pair<double, double>> interval,
                                                  int jobs) {
  if (steps.empty()) throw std::invalid_argument("run_convergence_study: no step counts given");
  if (!std::is_sorted(steps.begin(), steps.end()))
    throw std::invalid_argument("run_convergence_study: step counts must be sorted ascending");
  if (std::adjacent_find(steps.begin(), steps.end()) != steps.end())
    throw std::invalid_argument("run_convergence_study: step counts must be distinct");
  market.validate();
  const FbsdeProblem problem = make_geometric_put_problem(market);
  const double analytic = geometric_put_closed_form(market);

  std::vector<Partition> partitions;
  for (int n : steps) {
    if (style == Style::bermudan)
      partitions.push_back(build_partition(
          n, market.maturity, ExerciseSchedule::uniform(exercise_count, market.maturity)));
    else
      partitions.push_back(build_partition(n, market.maturity));
  }

  std::vector<ConvergenceRow> rows(steps.size());
  parallel_ranges(steps.size(), jobs, [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      TrainConfig config = base;
      config.workers = 1;
      const auto trained = train(problem, partitions[k], config, style);
      auto& row = rows[k];
      row.n = steps[k];
      row.price = trained.report.price;
      row.std_error = trained.report.price_std_error;
      if (style == Style::european) {
        row.reference = analytic;
        row.relative_error = std::abs(row.price - analytic) / analytic;
      } else if (interval) {
        const auto [lo, hi] = *interval;
        row.reference = 0.5 * (lo + hi);
        row.relative_error = std::abs(row.price - row.reference) / row.reference;
        row.interval_distance = row.price < lo ? lo - row.price : (row.price > hi ? row.price - hi : 0.0);
      } else {
        row.reference = std::numeric_limits<double>::quiet_NaN();
        row.relative_error = std::numeric_limits<double>::quiet_NaN();
      }
    }
  });
  return rows;
}

void write_error_records_csv(std::ostream& out, const std::vector<ErrorRecord>& records) {
  out << "n,h,var_y0,y_err_sq,z_err_sq,price,analytic,rel_err,seed\n";
  out << std::setprecision(10);
  for (const auto& r : records)
    out << r.n << ',' << r.h << ',' << r.var_y0 << ',' << r.y_error_sq << ',' << r.z_error_sq << ','
        << r.price << ',' << r.analytic << ',' << r.relative_error << ',' << r.seed << '\n';
}

void write_study_summary_json(std::ostream& out, const PosteriorStudy& study) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["runs"] = nlohmann::json::array();
  for (std::size_t k = 0; k < study.records.size(); ++k) {
    const auto& r = study.records[k];
    j["runs"].push_back({{"n", r.n},
                         {"iterations", study.configs[k].iterations},
                         {"seed", study.configs[k].seed},
                         {"h", r.h},
                         {"var_y0", r.var_y0},
                         {"bound", study.bound[k]},
                         {"error", study.error[k]},
                         {"y_err_sq", r.y_error_sq},
                         {"z_err_sq", r.z_error_sq},
                         {"price", r.price}});
  }
  if (study.log_fit) {
    j["log_fit"] = {{"correlation", study.log_fit->correlation},
                    {"slope", study.log_fit->slope},
                    {"intercept", study.log_fit->intercept}};
  } else {
    j["log_fit"] = nullptr;
  }
  out << j.dump(2) << '\n';
}

}  // namespace bsde
