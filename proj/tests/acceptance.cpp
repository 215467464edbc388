// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [AC1 AC2 ...] [--expect-fail AC5 ...]
//
// Exit status is 0 when every selected criterion passes, or fails only where
// listed with --expect-fail. An expected failure that passes is reported and
// also counts as a mismatch.

#include "bsde/error_lab.hpp"
#include "bsde/experiment.hpp"
#include "bsde/rng.hpp"

#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace bsde;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buffer[512];
  std::snprintf(buffer, sizeof buffer, format, args...);
  return buffer;
}

BlackScholesMarket table_market(int dim) {
  return BlackScholesMarket::uniform(dim, 0.02, 0.0, 0.2, 0.0, 100.0, 100.0, 1.0);
}

Outcome ac1() {
  const std::vector<std::pair<int, double>> rows = {
      {1, 6.9359}, {5, 3.3105}, {10, 2.3784}, {20, 1.7009}, {50, 1.0867}};
  double worst = 0.0;
  for (const auto& [dim, analytic] : rows)
    worst = std::max(worst, std::abs(geometric_put_closed_form(table_market(dim)) - analytic));
  return {worst <= 5e-4, fmt("max |closed form - table| = %.2e (tol 5e-4)", worst)};
}

Outcome european(int dim) {
  const auto r = run_experiment(default_config({"dim=" + std::to_string(dim), "output_dir=\"\""}));
  const double rel = std::abs(*r.relative_error);
  return {rel <= 0.01, fmt("d1=%d price %.4f vs %.4f, rel err %.3f%% (tol 1%%), %.0f s", dim,
                           r.price, r.reference, 100.0 * *r.relative_error,
                           r.report.wall_time_seconds)};
}

Outcome ac2() { return european(1); }

Outcome ac3() {
  const auto a = european(5);
  const auto b = european(10);
  return {a.pass && b.pass, a.detail + "; " + b.detail};
}

Outcome ac4() {
  const std::vector<int> steps = {2, 5, 10, 20, 50, 100};
  const auto rows = run_convergence_study(table_market(20), steps, Style::european, TrainConfig{});
  std::ostringstream detail;
  bool pass = true;
  int inversions = 0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const double err = std::abs(rows[k].relative_error);
    detail << (k ? ", " : "") << "n=" << rows[k].n << ' ' << fmt("%.3f%%", 100.0 * rows[k].relative_error);
    if (rows[k].n == 2 && !(rows[k].relative_error >= 0.015 && rows[k].relative_error <= 0.035))
      pass = false;
    if (rows[k].n >= 50 && err > 0.005) pass = false;
    if (k > 0 && err > std::abs(rows[k - 1].relative_error)) ++inversions;
  }
  detail << "; inversions " << inversions;
  return {pass && inversions <= 1, detail.str()};
}

Outcome ac5() {
  const auto r = run_experiment(default_config({"style=\"bermudan\"", "n=10", "output_dir=\"\""}));
  const bool pass = r.price >= 6.85 && r.price <= 7.20;
  return {pass, fmt("price %.4f +- %.4f, required [6.85, 7.20], %.0f s", r.price, r.std_error,
                    r.report.wall_time_seconds)};
}

Outcome ac6() {
  const auto market = table_market(5);
  const auto oracle = basket_call_mc_oracle(market, 1'000'000, mix_seed(0xBA5CE7));
  const bool brackets = std::abs(oracle.price - 4.6343) <= 3.0 * oracle.std_error;
  auto config = default_config({"payoff=\"basket_call\"", "dim=5", "output_dir=\"\""});
  const auto r = run_experiment(config);
  const double rel = std::abs(r.price - r.reference) / r.reference;
  return {brackets && rel <= 0.01,
          fmt("oracle %.4f +- %.4f vs 4.6343 (%s); trained %.4f vs reference %.4f, rel %.3f%% (tol 1%%)",
              oracle.price, oracle.std_error, brackets ? "bracketed" : "not bracketed", r.price,
              r.reference, 100.0 * rel)};
}

/// ReLU on/off pattern over every hidden unit, path and step.
std::vector<bool> activation_pattern(const ControlStack& controls, const PathBatch& paths) {
  std::vector<bool> pattern;
  for (int i = 0; i < controls.size(); ++i) {
    const auto& p = controls.steps[i];
    for (std::int64_t m = 0; m < paths.paths(); ++m) {
      Vector h = (Eigen::Map<const Vector>(paths.states.row(m, i), p.input_shift.size()) - p.input_shift)
                     .cwiseQuotient(p.input_scale);
      for (std::size_t l = 0; l + 1 < p.layers.size(); ++l) {
        h = p.layers[l].weights * h + p.layers[l].bias;
        for (Eigen::Index k = 0; k < h.size(); ++k) {
          pattern.push_back(h[k] > 0.0);
          h[k] = std::max(h[k], 0.0);
        }
      }
    }
  }
  return pattern;
}

Outcome ac7() {
  const auto problem = make_geometric_put_problem(table_market(1));
  const auto part = build_partition(2, 1.0);
  const double step = 1e-6;
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0, params = 0;
  for (std::uint64_t net = 1; net <= 30; ++net) {
    const auto paths = simulate_forward_batch(problem, part, 64, mix_seed(net));
    auto controls = init_controls(2, 1, 1, 1000 + net, 3);
    for (auto& s : controls.steps) {
      s.input_shift = problem.x0;
      s.input_scale = Vector::Constant(1, 20.0);
      s.output_scale = 10.0;
      for (auto& layer : s.layers) layer.bias.setRandom();
    }
    params = controls.parameter_count();
    std::vector<double> grad;
    loss_and_gradient(problem, part, paths, controls, Style::european, grad);
    const auto theta = controls.flatten();
    const auto base_pattern = activation_pattern(controls, paths);
    auto shifted = [&](std::size_t k, double delta) {
      auto c = controls;
      auto p = theta;
      p[k] += delta;
      c.assign(p);
      return c;
    };
    auto loss = [&](const ControlStack& c) {
      const Vector y = rollout_backward_european(problem, part, paths, c);
      return variance_loss(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
    };
    double scale = 0.0;
    for (double g : grad) scale = std::max(scale, std::abs(g));
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const auto up = shifted(k, step), down = shifted(k, -step);
      if (activation_pattern(up, paths) != base_pattern ||
          activation_pattern(down, paths) != base_pattern) {
        ++skipped;
        continue;
      }
      const double fd = (loss(up) - loss(down)) / (2.0 * step);
      const double denom = std::max({std::abs(fd), std::abs(grad[k]), 1e-3 * scale});
      worst = std::max(worst, std::abs(grad[k] - fd) / denom);
      ++checked;
    }
  }
  return {worst <= 1e-5 && checked > 0 && params <= 50,
          fmt("30 nets x %zu params: max rel dev %.2e over %zu entries (tol 1e-5), %zu kink-adjacent skipped",
              params, worst, checked, skipped)};
}

Outcome ac8() {
  const auto problem = make_geometric_put_problem(table_market(1));
  const auto part = build_partition(1, 1.0);
  TrainConfig config;
  config.controls = ControlKind::constant;
  config.resample_paths = false;
  config.batch = 4096;
  config.iterations = 3000;
  config.adam.step_size = 5e-3;
  config.plateau_window = 100000;
  config.eval_batch = 1024;
  config.seed = 3;
  const auto result = train(problem, part, config, Style::european);
  const auto paths = simulate_forward_batch(problem, part, config.batch, config.seed);
  std::vector<double> g(config.batch), w(config.batch);
  double mg = 0.0, mw = 0.0;
  for (std::int64_t m = 0; m < config.batch; ++m) {
    g[m] = (1.0 - 0.02) * problem.terminal(Eigen::Map<const Vector>(paths.states.row(m, 1), 1));
    w[m] = paths.increments.at(m, 0, 0);
    mg += g[m];
    mw += w[m];
  }
  mg /= config.batch;
  mw /= config.batch;
  double cov = 0.0, var = 0.0;
  for (std::int64_t m = 0; m < config.batch; ++m) {
    cov += (g[m] - mg) * (w[m] - mw);
    var += (w[m] - mw) * (w[m] - mw);
  }
  const double z_star = cov / var;
  const double z = mlp_forward(result.controls.steps[0], problem.x0)[0];
  const double rel = std::abs(z - z_star) / std::abs(z_star);
  return {rel <= 0.02, fmt("trained Z %.5f vs least-squares Z* %.5f, rel %.3f%% (tol 2%%)", z, z_star,
                           100.0 * rel)};
}

Outcome ac9() {
  std::vector<StudyConfig> configs;
  for (int n : {5, 10, 25, 50, 100, 200})
    for (int iterations : {1, 400}) configs.push_back({n, iterations, 1});
  TrainConfig base;
  base.eval_batch = 1 << 15;
  const auto study = run_posterior_bound_study(table_market(1), configs, base, 1 << 15);
  if (!study.log_fit) return {false, "correlation undefined"};
  return {study.log_fit->correlation >= 0.8,
          fmt("%zu configs, log-log Pearson %.3f (tol >= 0.8), slope %.3f", configs.size(),
              study.log_fit->correlation, study.log_fit->slope)};
}

Outcome ac10() {
  const auto market = table_market(1);
  const auto problem = make_geometric_put_problem(market);
  const auto part = build_partition(50, 1.0);
  const std::int64_t M = 100'000;
  const auto paths = simulate_forward_batch(problem, part, M, 2024, 0, 1);
  double worst = 0.0;
  for (int i = 0; i <= part.steps(); ++i) {
    const double discount = std::exp(-0.02 * part.time(i));
    double sum = 0.0, sq = 0.0;
    for (std::int64_t m = 0; m < M; ++m) {
      const double v = discount * paths.states.at(m, i, 0);
      sum += v;
      sq += v * v;
    }
    const double mean = sum / M;
    const double se = std::sqrt(std::max(sq / M - mean * mean, 0.0) / M);
    if (se > 0.0) worst = std::max(worst, std::abs(mean - 100.0) / se);
  }
  const auto parallel = simulate_forward_batch(problem, part, M, 2024, 0, 4);
  const bool identical = parallel.states == paths.states && parallel.increments == paths.increments;
  return {worst <= 3.0 && identical,
          fmt("max |mean - x0| = %.2f std errors over %d nodes (tol 3); workers 1 vs 4 %s", worst,
              part.steps() + 1, identical ? "bit-identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"AC1", ac1}, {"AC2", ac2}, {"AC3", ac3}, {"AC4", ac4}, {"AC5", ac5},
      {"AC6", ac6}, {"AC7", ac7}, {"AC8", ac8}, {"AC9", ac9}, {"AC10", ac10}};
  std::set<std::string> selected, expected_fail;
  for (int k = 1; k < argc; ++k) {
    const std::string arg = argv[k];
    if (arg == "--expect-fail" && k + 1 < argc) {
      expected_fail.insert(argv[++k]);
    } else {
      selected.insert(arg);
    }
  }
  int mismatches = 0;
  for (const auto& [name, run] : criteria) {
    if (!selected.empty() && !selected.count(name)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool expected = expected_fail.count(name) > 0;
    std::string note;
    if (!outcome.pass && expected) note = " [known failure]";
    if (outcome.pass && expected) note = " [expected failure passed]";
    if (outcome.pass == expected) ++mismatches;
    std::cout << name << (outcome.pass ? " PASS " : " FAIL ") << outcome.detail
              << fmt(" (%.1f s)", seconds) << note << std::endl;
  }
  return mismatches == 0 ? 0 : 1;
}
