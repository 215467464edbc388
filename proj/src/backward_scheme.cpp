#include "bsde/backward_scheme.hpp"

#include "bsde/rng.hpp"
#include "bsde/stats.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace bsde {

std::string to_string(Style style) { return style == Style::european ? "european" : "bermudan"; }

Style parse_style(const std::string& text) {
  if (text == "european") return Style::european;
  if (text == "bermudan") return Style::bermudan;
  throw std::invalid_argument("unknown style '" + text + "' (expected european or bermudan)");
}

void TrainConfig::validate() const {
  if (batch < 2) throw std::invalid_argument("train: batch must be >= 2");
  if (iterations < 1) throw std::invalid_argument("train: iterations must be >= 1");
  if (eval_batch < 2) throw std::invalid_argument("train: eval_batch must be >= 2");
  if (!(adam.step_size > 0.0)) throw std::invalid_argument("train: step_size must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw std::invalid_argument("train: moment decay rates must lie in [0, 1)");
  if (plateau_window < 1) throw std::invalid_argument("train: plateau_window must be >= 1");
  if (workers < 1) throw std::invalid_argument("train: workers must be >= 1");
}

TrainingError::TrainingError(int iteration, const std::string& quantity)
    : std::runtime_error("training diverged at iteration " + std::to_string(iteration) + ": " +
                         quantity + " is not finite"),
      iteration_(iteration) {}

namespace {

void check_inputs(const FbsdeProblem& problem, const Partition& partition, const PathBatch& paths,
                  const ControlStack& controls, Style style) {
  if (controls.size() != partition.steps())
    throw std::invalid_argument("rollout: control stack length " + std::to_string(controls.size()) +
                                " does not match step count " + std::to_string(partition.steps()));
  if (paths.states.steps() != partition.steps() + 1 || paths.increments.steps() != partition.steps())
    throw std::invalid_argument("rollout: path batch does not match the partition");
  if (paths.states.dim() != problem.dim_x || paths.increments.dim() != problem.dim_w)
    throw std::invalid_argument("rollout: path batch dimensions do not match the problem");
  if (style == Style::bermudan && !partition.has_schedule())
    throw std::invalid_argument("rollout: bermudan style requires an exercise schedule");
}

Matrix payoff_row(const FbsdeProblem& problem, const Eigen::Ref<const Matrix>& x) {
  Matrix g(1, x.cols());
  for (Eigen::Index m = 0; m < x.cols(); ++m) g(0, m) = problem.terminal(x.col(m));
  return g;
}

struct DriverBlock {
  Matrix value;  // 1 x M
  Matrix dy;     // 1 x M
  Matrix dz;     // d x M
};

DriverBlock eval_driver(const FbsdeProblem& problem, double t, const Eigen::Ref<const Matrix>& x,
                        const Matrix& y, const Matrix& z) {
  const Eigen::Index cols = x.cols();
  DriverBlock out{Matrix(1, cols), Matrix(1, cols), Matrix(problem.dim_w, cols)};
  Vector dz(problem.dim_w);
  for (Eigen::Index m = 0; m < cols; ++m) {
    const auto f = problem.driver(t, x.col(m), y(0, m), z.col(m), dz);
    out.value(0, m) = f.value;
    out.dy(0, m) = f.dy;
    out.dz.col(m) = dz;
  }
  return out;
}

bool exercise_here(const Partition& partition, Style style, int i) {
  return style == Style::bermudan && partition.is_exercise(i);
}

Vector rollout_range(const FbsdeProblem& problem, const Partition& partition,
                     const PathBatch& paths, const ControlStack& controls, Style style,
                     Eigen::Index begin, Eigen::Index count, RolloutTrace* trace) {
  const int n = partition.steps();
  const double h = partition.step_size();
  Matrix y = payoff_row(problem, paths.states.step(n).middleCols(begin, count));
  if (trace) {
    trace->y.assign(static_cast<std::size_t>(n) + 1, Matrix());
    trace->z.assign(static_cast<std::size_t>(n), Matrix());
    trace->y[static_cast<std::size_t>(n)] = y;
  }
  for (int i = n - 1; i >= 0; --i) {
    const auto x = paths.states.step(i).middleCols(begin, count);
    const auto dw = paths.increments.step(i).middleCols(begin, count);
    Matrix z = mlp_forward_batch(controls.steps[static_cast<std::size_t>(i)], x);
    Matrix fh;
    if (problem.linear_discount_rate) {
      fh = (-*problem.linear_discount_rate * h) * y;
    } else {
      fh = h * eval_driver(problem, partition.time(i), x, y, z).value;
    }
    const Matrix zdw = z.cwiseProduct(dw);
    Matrix next = y + fh;
    next -= zdw.colwise().sum();
    if (exercise_here(partition, style, i)) next = payoff_row(problem, x).cwiseMax(next);
    y = std::move(next);
    if (trace) {
      trace->y[static_cast<std::size_t>(i)] = y;
      trace->z[static_cast<std::size_t>(i)] = std::move(z);
    }
  }
  return y.row(0).transpose();
}

NodeId record_range(Tape& tape, const FbsdeProblem& problem, const Partition& partition,
                    const PathBatch& paths, const ControlStack& controls, Style style,
                    Eigen::Index begin, Eigen::Index count, std::vector<MlpHandles>& handles) {
  const int n = partition.steps();
  const double h = partition.step_size();
  handles.assign(static_cast<std::size_t>(n), MlpHandles{});
  NodeId y = tape.constant(payoff_row(problem, paths.states.step(n).middleCols(begin, count)));
  for (int i = n - 1; i >= 0; --i) {
    const auto x = paths.states.step(i).middleCols(begin, count);
    const NodeId z = record_mlp(tape, controls.steps[static_cast<std::size_t>(i)], x,
                                handles[static_cast<std::size_t>(i)]);
    NodeId fh;
    if (problem.linear_discount_rate) {
      fh = tape.scale(y, -*problem.linear_discount_rate * h);
    } else {
      auto block = eval_driver(problem, partition.time(i), x, tape.value(y), tape.value(z));
      const NodeId f = tape.pointwise({y, z}, std::move(block.value),
                                      {std::move(block.dy), std::move(block.dz)});
      fh = tape.scale(f, h);
    }
    const NodeId dw = tape.constant(paths.increments.step(i).middleCols(begin, count));
    const NodeId next = tape.sub(tape.add(y, fh), tape.sum_rows(tape.mul(z, dw)));
    y = exercise_here(partition, style, i) ? tape.maximum(tape.constant(payoff_row(problem, x)), next)
                                           : next;
  }
  return y;
}

void collect_gradients(const Tape& tape, const ControlStack& controls,
                       const std::vector<MlpHandles>& handles, std::vector<double>& out) {
  out.clear();
  out.reserve(controls.parameter_count());
  for (std::size_t i = 0; i < handles.size(); ++i)
    gradients_into(tape, controls.steps[i], handles[i], out);
}

}  // namespace

Vector rollout_backward(const FbsdeProblem& problem, const Partition& partition,
                        const PathBatch& paths, const ControlStack& controls, Style style,
                        RolloutTrace* trace) {
  check_inputs(problem, partition, paths, controls, style);
  return rollout_range(problem, partition, paths, controls, style, 0, paths.paths(), trace);
}

Vector rollout_backward_bermudan(const FbsdeProblem& problem, const Partition& partition,
                                 const PathBatch& paths, const ControlStack& controls,
                                 RolloutTrace* trace) {
  return rollout_backward(problem, partition, paths, controls, Style::bermudan, trace);
}

NodeId record_rollout(Tape& tape, const FbsdeProblem& problem, const Partition& partition,
                      const PathBatch& paths, const ControlStack& controls, Style style,
                      std::vector<MlpHandles>& handles) {
  check_inputs(problem, partition, paths, controls, style);
  return record_range(tape, problem, partition, paths, controls, style, 0, paths.paths(), handles);
}

double variance_loss(std::span<const double> y0) {
  if (y0.size() < 2) throw std::invalid_argument("variance_loss: needs at least 2 samples");
  const double mean = std::accumulate(y0.begin(), y0.end(), 0.0) / static_cast<double>(y0.size());
  double acc = 0.0;
  for (double y : y0) acc += (y - mean) * (y - mean);
  return acc / static_cast<double>(y0.size());
}

double loss_and_gradient(const FbsdeProblem& problem, const Partition& partition,
                         const PathBatch& paths, const ControlStack& controls, Style style,
                         std::vector<double>& gradient, int workers) {
  check_inputs(problem, partition, paths, controls, style);
  const Eigen::Index total = paths.paths();
  if (total < 2) throw std::invalid_argument("loss_and_gradient: needs at least 2 paths");

  if (workers <= 1) {
    Tape tape;
    std::vector<MlpHandles> handles;
    const NodeId y0 = record_range(tape, problem, partition, paths, controls, style, 0, total, handles);
    const NodeId loss = tape.variance(y0);
    tape.backward(loss);
    collect_gradients(tape, controls, handles, gradient);
    return tape.value(loss)(0, 0);
  }

  // Shards share the global mean, so the forward sweeps finish before any
  // backward sweep starts.
  const auto shards = static_cast<std::size_t>(std::min<Eigen::Index>(workers, total));
  const Eigen::Index chunk = (total + static_cast<Eigen::Index>(shards) - 1) /
                             static_cast<Eigen::Index>(shards);
  std::vector<Tape> tapes(shards);
  std::vector<std::vector<MlpHandles>> handles(shards);
  std::vector<NodeId> outputs(shards);
  std::vector<Eigen::Index> starts(shards), counts(shards);
  for (std::size_t s = 0; s < shards; ++s) {
    starts[s] = static_cast<Eigen::Index>(s) * chunk;
    counts[s] = std::max<Eigen::Index>(0, std::min(chunk, total - starts[s]));
  }
  parallel_ranges(shards, workers, [&](std::size_t b, std::size_t e) {
    for (std::size_t s = b; s < e; ++s)
      if (counts[s] > 0)
        outputs[s] = record_range(tapes[s], problem, partition, paths, controls, style, starts[s],
                                  counts[s], handles[s]);
  });
  std::vector<double> y0(static_cast<std::size_t>(total));
  for (std::size_t s = 0; s < shards; ++s)
    for (Eigen::Index m = 0; m < counts[s]; ++m)
      y0[static_cast<std::size_t>(starts[s] + m)] = tapes[s].value(outputs[s])(0, m);
  const double loss = variance_loss(y0);
  const double mean = std::accumulate(y0.begin(), y0.end(), 0.0) / static_cast<double>(total);

  std::vector<std::vector<double>> partial(shards);
  parallel_ranges(shards, workers, [&](std::size_t b, std::size_t e) {
    for (std::size_t s = b; s < e; ++s) {
      if (counts[s] == 0) continue;
      const Matrix seed = (2.0 / static_cast<double>(total)) *
                          (tapes[s].value(outputs[s]).array() - mean).matrix();
      tapes[s].backward(outputs[s], seed);
      collect_gradients(tapes[s], controls, handles[s], partial[s]);
    }
  });
  gradient.assign(controls.parameter_count(), 0.0);
  for (std::size_t s = 0; s < shards; ++s)
    for (std::size_t k = 0; k < partial[s].size(); ++k) gradient[k] += partial[s][k];
  return loss;
}

Evaluation evaluate(const ControlStack& controls, const FbsdeProblem& problem,
                    const Partition& partition, std::int64_t paths, std::uint64_t seed, Style style,
                    int workers) {
  if (paths < 2) throw std::invalid_argument("evaluate: needs at least 2 paths");
  constexpr std::int64_t kChunk = 8192;
  std::vector<double> y0;
  y0.reserve(static_cast<std::size_t>(paths));
  for (std::int64_t first = 0; first < paths; first += kChunk) {
    const std::int64_t count = std::min(kChunk, paths - first);
    const PathBatch batch = simulate_forward_batch(problem, partition, count, seed,
                                                   static_cast<std::uint64_t>(first), workers);
    const Vector y = rollout_backward(problem, partition, batch, controls, style);
    y0.insert(y0.end(), y.data(), y.data() + y.size());
  }
  const auto stats = summarize(y0);
  return {stats.mean(), stats.std_error(), stats.variance()};
}

std::uint64_t evaluation_seed(std::uint64_t training_seed) {
  return mix_seed(training_seed ^ 0x5EED0E7A1ull);
}

ControlStack initial_controls(const FbsdeProblem& problem, const Partition& partition,
                              const TrainConfig& config) {
  const int d1 = problem.dim_x;
  const int d = problem.dim_w;
  ControlStack controls =
      config.controls == ControlKind::constant
          ? zero_controls(partition.steps(), d1, d, config.hidden_width)
          : init_controls(partition.steps(), d1, d, config.seed, config.hidden_width);

  const Matrix sigma0 = problem.diffusion_at(0.0, problem.x0);
  const Vector row_norm = sigma0.rowwise().norm();
  Vector scale(d1);
  for (int k = 0; k < d1; ++k) {
    const double spread = row_norm[k] * std::sqrt(problem.horizon);
    scale[k] = spread > 0.0 ? spread : std::max(std::abs(problem.x0[k]), 1.0);
  }
  // Z = grad(u) sigma; for payoffs spread evenly over d1 assets each entry of
  // grad(u) is O(1/d1).
  double out_scale = row_norm.mean() / d1;
  if (!(out_scale > 0.0)) out_scale = 1.0;
  for (auto& step : controls.steps) {
    step.input_shift = problem.x0;
    step.input_scale = scale;
    step.output_scale = out_scale;
  }
  return controls;
}

namespace {

std::vector<char> trainable_mask(const ControlStack& controls, ControlKind kind) {
  std::vector<char> mask(controls.parameter_count(), 1);
  if (kind == ControlKind::full) return mask;
  std::fill(mask.begin(), mask.end(), 0);
  std::size_t offset = 0;
  for (const auto& step : controls.steps) {
    const std::size_t count = step.parameter_count();
    const auto out_bias = static_cast<std::size_t>(step.layers.back().bias.size());
    for (std::size_t k = count - out_bias; k < count; ++k) mask[offset + k] = 1;
    offset += count;
  }
  return mask;
}

double window_mean(const std::vector<double>& xs, std::size_t first, std::size_t count) {
  return std::accumulate(xs.begin() + static_cast<std::ptrdiff_t>(first),
                         xs.begin() + static_cast<std::ptrdiff_t>(first + count), 0.0) /
         static_cast<double>(count);
}

}  // namespace

TrainResult train(const FbsdeProblem& problem, const Partition& partition,
                  const TrainConfig& config, Style style) {
  config.validate();
  problem.validate();
  const auto started = std::chrono::steady_clock::now();

  TrainResult result;
  result.controls = initial_controls(problem, partition, config);
  auto& report = result.report;
  report.seed = config.seed;
  report.config = config;

  std::vector<double> params = result.controls.flatten();
  const std::vector<char> mask = trainable_mask(result.controls, config.controls);
  std::vector<double> first_moment(params.size(), 0.0), second_moment(params.size(), 0.0);
  std::vector<double> gradient;
  const auto& adam = config.adam;
  double beta1_power = 1.0, beta2_power = 1.0;

  PathBatch fixed;
  if (!config.resample_paths)
    fixed = simulate_forward_batch(problem, partition, config.batch, config.seed, 0, config.workers);

  const auto window = static_cast<std::size_t>(config.plateau_window);
  for (int it = 0; it < config.iterations; ++it) {
    const PathBatch fresh =
        config.resample_paths
            ? simulate_forward_batch(problem, partition, config.batch, config.seed,
                                     static_cast<std::uint64_t>(it) *
                                         static_cast<std::uint64_t>(config.batch),
                                     config.workers)
            : PathBatch{};
    const PathBatch& batch = config.resample_paths ? fresh : fixed;

    const double loss =
        loss_and_gradient(problem, partition, batch, result.controls, style, gradient, config.workers);
    if (!std::isfinite(loss)) throw TrainingError(it, "loss Var[Y_0]");
    for (double g : gradient)
      if (!std::isfinite(g)) throw TrainingError(it, "loss gradient");
    report.loss_history.push_back(loss);

    beta1_power *= adam.beta1;
    beta2_power *= adam.beta2;
    const double lr = adam.step_size * std::sqrt(1.0 - beta2_power) / (1.0 - beta1_power);
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (!mask[k]) continue;
      first_moment[k] = adam.beta1 * first_moment[k] + (1.0 - adam.beta1) * gradient[k];
      second_moment[k] = adam.beta2 * second_moment[k] + (1.0 - adam.beta2) * gradient[k] * gradient[k];
      params[k] -= lr * first_moment[k] / (std::sqrt(second_moment[k]) + adam.epsilon);
    }
    result.controls.assign(params);
    report.iterations_run = it + 1;

    const std::size_t done = report.loss_history.size();
    if (done >= 2 * window && done % window == 0) {
      const double previous = window_mean(report.loss_history, done - 2 * window, window);
      const double current = window_mean(report.loss_history, done - window, window);
      if (previous - current < config.plateau_tolerance * previous) {
        report.stopped_on_plateau = true;
        break;
      }
    }
  }

  const auto eval = evaluate(result.controls, problem, partition, config.eval_batch,
                             evaluation_seed(config.seed), style, config.workers);
  report.price = eval.price;
  report.price_std_error = eval.std_error;
  report.final_variance = eval.variance;
  if (!std::isfinite(report.price)) throw TrainingError(report.iterations_run, "evaluation price");
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace bsde
