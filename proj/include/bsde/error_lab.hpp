#pragma once

// Empirical checks of the a-posteriori error bound: Y/Z errors of trained
// controls against the analytic geometric-put solution, their relation to
// h + Var[Y_0], and the price convergence in n.
//
// The analytic u is evaluated on the simulated (Euler) states, so the
// measured errors include the forward discretization error of order h.

#include "bsde/backward_scheme.hpp"
#include "bsde/market.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <utility>
#include <vector>

namespace bsde {

struct ErrorRecord {
  int n = 0;
  double h = 0.0;
  double var_y0 = 0.0;
  /// max_i E|Y_i - u(t_i, X_i)|^2
  double y_error_sq = 0.0;
  /// h * sum_i E|Z_i - grad(u) sigma(t_i, X_i)|^2
  double z_error_sq = 0.0;
  double price = 0.0;
  double analytic = 0.0;
  double relative_error = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> y_profile;  // per step i = 0..n-1
  std::vector<double> z_profile;
};

/// grad_x u(t, x) sigma(t, x) for the geometric put (row vector, length d).
Vector geometric_put_z_reference(const BlackScholesMarket& market, double t,
                                 const Eigen::Ref<const Vector>& x);

/// Throws std::invalid_argument unless `payoff` is the geometric put (the
/// only payoff with an analytic solution here).
ErrorRecord measure_y_z_errors(const ControlStack& controls, const BlackScholesMarket& market,
                               PayoffKind payoff, const Partition& partition, std::int64_t paths,
                               std::uint64_t seed, int workers = 1);

struct StudyConfig {
  int n = 10;
  int iterations = 100;
  std::uint64_t seed = 1;
};

struct LinearFit {
  double correlation = 0.0;
  double slope = 0.0;
  double intercept = 0.0;
};

/// Pearson correlation and least-squares line of y on x; empty when either
/// sample has zero spread.
std::optional<LinearFit> fit_line(const std::vector<double>& x, const std::vector<double>& y);

struct PosteriorStudy {
  std::vector<StudyConfig> configs;
  std::vector<ErrorRecord> records;
  std::vector<double> bound;  // h + Var[Y_0]
  std::vector<double> error;  // y_error_sq + z_error_sq
  /// Fit of log(error) on log(bound).
  std::optional<LinearFit> log_fit;
};

/// Trains one geometric-put European run per config (base settings from
/// `base`, n/iterations/seed overridden) and measures its errors on
/// `eval_paths` fresh paths. Requires at least 6 configs.
PosteriorStudy run_posterior_bound_study(const BlackScholesMarket& market,
                                         const std::vector<StudyConfig>& configs,
                                         const TrainConfig& base, std::int64_t eval_paths,
                                         int jobs = 1);

struct ConvergenceRow {
  int n = 0;
  double price = 0.0;
  double std_error = 0.0;
  double reference = 0.0;
  double relative_error = 0.0;
  /// Bermudan only: distance of the price to the benchmark interval (0 inside).
  std::optional<double> interval_distance;
};

/// One trained geometric-put run per n (sorted ascending). European rows are
/// compared with the closed form; Bermudan rows with `interval` when given.
std::vector<ConvergenceRow> run_convergence_study(
    const BlackScholesMarket& market, const std::vector<int>& steps, Style style,
    const TrainConfig& base, int exercise_count = 10,
    std::optional<std::pair<double, double>> interval = std::nullopt, int jobs = 1);

/// Header: n,h,var_y0,y_err_sq,z_err_sq,price,analytic,rel_err,seed
void write_error_records_csv(std::ostream& out, const std::vector<ErrorRecord>& records);
void write_study_summary_json(std::ostream& out, const PosteriorStudy& study);

}  // namespace bsde
