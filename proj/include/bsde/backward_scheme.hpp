#pragma once

// Backward rollout of Y along simulated paths, the Var[Y_0] loss, and the
// training loop that fits the per-step Z networks.

#include "bsde/autodiff.hpp"
#include "bsde/market.hpp"
#include "bsde/mlp.hpp"
#include "bsde/path_engine.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bsde {

enum class Style { european, bermudan };

std::string to_string(Style style);
Style parse_style(const std::string& text);

/// Which parameters the optimizer may move.
enum class ControlKind {
  full,      // every weight and bias
  constant,  // zero weights, only the output bias trains: Z_i is a constant
};

struct AdamSettings {
  double step_size = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  std::int64_t batch = 256;
  int iterations = 4000;
  AdamSettings adam;
  std::uint64_t seed = 1;
  std::int64_t eval_batch = std::int64_t{1} << 17;
  /// Stop when the mean loss over the last `plateau_window` iterations
  /// improved by less than this fraction over the window before it.
  double plateau_tolerance = 1e-6;
  int plateau_window = 200;
  /// Fresh paths every iteration; false reuses the first batch throughout.
  bool resample_paths = true;
  ControlKind controls = ControlKind::full;
  int hidden_width = -1;  // -1: d1 + 10
  /// Path shards per iteration (each on its own tape).
  int workers = 1;

  void validate() const;
};

struct TrainingReport {
  std::vector<double> loss_history;
  double price = 0.0;
  double price_std_error = 0.0;
  double final_variance = 0.0;
  double wall_time_seconds = 0.0;
  std::uint64_t seed = 0;
  int iterations_run = 0;
  bool stopped_on_plateau = false;
  TrainConfig config;
};

/// Raised when the loss or a gradient turns non-finite.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(int iteration, const std::string& quantity);
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

/// Per-step values recorded by a rollout: y[i] is 1 x M for i = 0..n,
/// z[i] is d x M for i = 0..n-1.
struct RolloutTrace {
  std::vector<Matrix> y;
  std::vector<Matrix> z;
};

/// Y_T = g(X_T); Y_i = Y_{i+1} + f(t_i, X_i, Y_{i+1}, Z_i) h - Z_i dW_i with
/// Z_i = phi_i(X_i). Bermudan style takes max(g(X_i), .) at exercise nodes
/// (t_0 included). Returns Y_0 per path.
Vector rollout_backward(const FbsdeProblem& problem, const Partition& partition,
                        const PathBatch& paths, const ControlStack& controls, Style style,
                        RolloutTrace* trace = nullptr);

inline Vector rollout_backward_european(const FbsdeProblem& problem, const Partition& partition,
                                        const PathBatch& paths, const ControlStack& controls,
                                        RolloutTrace* trace = nullptr) {
  return rollout_backward(problem, partition, paths, controls, Style::european, trace);
}

/// Requires an exercise schedule on the partition.
Vector rollout_backward_bermudan(const FbsdeProblem& problem, const Partition& partition,
                                 const PathBatch& paths, const ControlStack& controls,
                                 RolloutTrace* trace = nullptr);

/// Same recursion recorded on a tape; returns the 1 x M node of Y_0 and the
/// per-step parameter handles.
NodeId record_rollout(Tape& tape, const FbsdeProblem& problem, const Partition& partition,
                      const PathBatch& paths, const ControlStack& controls, Style style,
                      std::vector<MlpHandles>& handles);

/// Population variance (1/M). Throws std::invalid_argument for M < 2.
double variance_loss(std::span<const double> y0);

/// Var[Y_0] and its gradient in the flattened control parameters, computed
/// over `workers` path shards on separate tapes.
double loss_and_gradient(const FbsdeProblem& problem, const Partition& partition,
                         const PathBatch& paths, const ControlStack& controls, Style style,
                         std::vector<double>& gradient, int workers = 1);

struct Evaluation {
  double price = 0.0;
  double std_error = 0.0;
  double variance = 0.0;
};

/// Statistics of Y_0 on fresh paths (no tape); path chunks are index-keyed so
/// results do not depend on chunking or workers.
Evaluation evaluate(const ControlStack& controls, const FbsdeProblem& problem,
                    const Partition& partition, std::int64_t paths, std::uint64_t seed,
                    Style style = Style::european, int workers = 1);

/// Controls sized and normalized for the problem (fixed input standardization
/// around x0 and output scale from sigma(0, x0)).
ControlStack initial_controls(const FbsdeProblem& problem, const Partition& partition,
                              const TrainConfig& config);

struct TrainResult {
  ControlStack controls;
  TrainingReport report;
};

TrainResult train(const FbsdeProblem& problem, const Partition& partition,
                  const TrainConfig& config, Style style);

/// Seed used for the held-out evaluation batch of a training run.
std::uint64_t evaluation_seed(std::uint64_t training_seed);

}  // namespace bsde
