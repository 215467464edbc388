#pragma once

// Time grids, index-keyed Gaussian increments and Euler-Maruyama simulation.

#include "bsde/common.hpp"
#include "bsde/market.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace bsde {

/// Exercise dates tau_0 = 0 < tau_1 < ... < tau_N = T.
struct ExerciseSchedule {
  std::vector<double> dates;

  static ExerciseSchedule uniform(int count, double horizon);
  int count() const { return static_cast<int>(dates.size()) - 1; }
};

/// Uniform grid t_i = i*T/n with optional exercise flags on the nodes.
class Partition {
 public:
  Partition() = default;
  Partition(int steps, double horizon);

  int steps() const { return steps_; }
  double horizon() const { return horizon_; }
  double step_size() const { return step_; }
  double time(int i) const { return times_[static_cast<std::size_t>(i)]; }
  const std::vector<double>& times() const { return times_; }

  bool has_schedule() const { return scheduled_; }
  /// Number of exercise intervals N (0 when no schedule is attached).
  int exercise_count() const { return exercise_count_; }
  bool is_exercise(int i) const { return exercisable_[static_cast<std::size_t>(i)] != 0; }

 private:
  friend Partition build_partition(int, double, const std::optional<ExerciseSchedule>&);

  int steps_ = 0;
  double horizon_ = 0.0;
  double step_ = 0.0;
  int exercise_count_ = 0;
  bool scheduled_ = false;
  std::vector<double> times_;
  std::vector<char> exercisable_;
};

/// Throws std::invalid_argument for n < 1, T <= 0, or exercise dates that do
/// not coincide with grid nodes.
Partition build_partition(int n, double horizon,
                          const std::optional<ExerciseSchedule>& schedule = std::nullopt);

/// Dense [step][path][component] storage. Each step is a contiguous
/// column-major (dim x paths) block, so step(i) maps directly onto Eigen.
class StepArray {
 public:
  StepArray() = default;
  StepArray(int steps, std::int64_t paths, int dim)
      : steps_(steps), paths_(paths), dim_(dim),
        data_(static_cast<std::size_t>(steps) * static_cast<std::size_t>(paths) *
                  static_cast<std::size_t>(dim),
              0.0) {}

  int steps() const { return steps_; }
  std::int64_t paths() const { return paths_; }
  int dim() const { return dim_; }

  double& at(std::int64_t m, int i, int k) { return data_[offset(m, i) + static_cast<std::size_t>(k)]; }
  double at(std::int64_t m, int i, int k) const {
    return data_[offset(m, i) + static_cast<std::size_t>(k)];
  }
  double* row(std::int64_t m, int i) { return data_.data() + offset(m, i); }
  const double* row(std::int64_t m, int i) const { return data_.data() + offset(m, i); }

  Eigen::Map<const Matrix> step(int i) const {
    return {data_.data() + offset(0, i), dim_, static_cast<Eigen::Index>(paths_)};
  }
  Eigen::Map<Matrix> step(int i) {
    return {data_.data() + offset(0, i), dim_, static_cast<Eigen::Index>(paths_)};
  }

  const std::vector<double>& data() const { return data_; }
  friend bool operator==(const StepArray&, const StepArray&) = default;

 private:
  std::size_t offset(std::int64_t m, int i) const {
    return (static_cast<std::size_t>(i) * static_cast<std::size_t>(paths_) +
            static_cast<std::size_t>(m)) *
           static_cast<std::size_t>(dim_);
  }

  int steps_ = 0;
  std::int64_t paths_ = 0;
  int dim_ = 0;
  std::vector<double> data_;
};

/// Simulated forward paths plus the Brownian increments that produced them.
/// Path m of the batch is global path (path_offset + m) of the seed's stream.
struct PathBatch {
  Partition partition;
  std::uint64_t seed = 0;
  std::uint64_t path_offset = 0;
  StepArray states;      // n+1 steps, dim_x
  StepArray increments;  // n steps, dim_w

  std::int64_t paths() const { return states.paths(); }
};

/// M x n x d increments, each draw sqrt(h) * L * xi with L the PSD Cholesky
/// factor of `correlation`; draw (m, i) depends only on (seed, path_offset+m, i).
StepArray sample_increments(const Partition& partition, std::int64_t paths,
                            const Matrix& correlation, std::uint64_t seed,
                            std::uint64_t path_offset = 0, int workers = 1);

/// x + b(t,x) h + sigma(t,x) dW.
Vector euler_step(double t, const Eigen::Ref<const Vector>& x, double h,
                  const Eigen::Ref<const Vector>& dw, const FbsdeProblem& problem);

/// Uncorrelated increments drive the problem's diffusion (which carries any
/// correlation itself). Results are bit-identical for any `workers`.
PathBatch simulate_forward_batch(const FbsdeProblem& problem, const Partition& partition,
                                 std::int64_t paths, std::uint64_t seed,
                                 std::uint64_t path_offset = 0, int workers = 1);

/// Debug dump: M, n, d1, seed as little-endian int64, then states in
/// [path][step][component] order, then increments in the same order.
void write_path_batch(std::ostream& out, const PathBatch& batch);
PathBatch read_path_batch(std::istream& in, double horizon);

}  // namespace bsde
