#include "bsde/path_engine.hpp"

#include "bsde/rng.hpp"

#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace bsde {

ExerciseSchedule ExerciseSchedule::uniform(int count, double horizon) {
  if (count < 1) throw std::invalid_argument("exercise schedule needs at least one interval");
  ExerciseSchedule s;
  s.dates.reserve(static_cast<std::size_t>(count) + 1);
  for (int j = 0; j <= count; ++j) s.dates.push_back(j * horizon / count);
  return s;
}

Partition::Partition(int steps, double horizon)
    : steps_(steps), horizon_(horizon), step_(horizon / steps) {
  times_.resize(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i < steps; ++i) times_[static_cast<std::size_t>(i)] = i * horizon / steps;
  times_.back() = horizon;
  exercisable_.assign(times_.size(), 0);
}

Partition build_partition(int n, double horizon, const std::optional<ExerciseSchedule>& schedule) {
  if (n < 1) throw std::invalid_argument("build_partition: n must be >= 1");
  if (!(horizon > 0.0)) throw std::invalid_argument("build_partition: horizon must be > 0");
  Partition p(n, horizon);
  if (!schedule) return p;

  if (schedule->dates.empty()) throw std::invalid_argument("build_partition: empty exercise schedule");
  const int count = schedule->count();
  for (const double tau : schedule->dates) {
    const long node = std::lround(tau * n / horizon);
    const bool on_grid = node >= 0 && node <= n &&
                         std::abs(p.times_[static_cast<std::size_t>(node)] - tau) <= 1e-12 * horizon;
    if (!on_grid) {
      std::ostringstream msg;
      msg << "build_partition: exercise date " << tau << " is not a grid node (n = " << n
          << ", N = " << count << "; N must divide n)";
      throw std::invalid_argument(msg.str());
    }
    p.exercisable_[static_cast<std::size_t>(node)] = 1;
  }
  p.exercise_count_ = count;
  p.scheduled_ = true;
  return p;
}

StepArray sample_increments(const Partition& partition, std::int64_t paths,
                            const Matrix& correlation, std::uint64_t seed,
                            std::uint64_t path_offset, int workers) {
  if (paths < 1) throw std::invalid_argument("sample_increments: paths must be >= 1");
  const Matrix factor = psd_cholesky(correlation);
  const int d = static_cast<int>(factor.rows());
  const int n = partition.steps();
  const double root_h = std::sqrt(partition.step_size());
  const bool identity = factor.isIdentity(0.0);

  StepArray out(n, paths, d);
  parallel_ranges(static_cast<std::size_t>(paths), workers, [&](std::size_t begin, std::size_t end) {
    Vector xi(d);
    for (std::size_t m = begin; m < end; ++m) {
      for (int i = 0; i < n; ++i) {
        fill_normals(seed, Stream::increments, path_offset + m, static_cast<std::uint32_t>(i),
                     std::span<double>(xi.data(), static_cast<std::size_t>(d)));
        Eigen::Map<Vector> dst(out.row(static_cast<std::int64_t>(m), i), d);
        if (identity)
          dst = root_h * xi;
        else
          dst = root_h * (factor * xi);
      }
    }
  });
  return out;
}

Vector euler_step(double t, const Eigen::Ref<const Vector>& x, double h,
                  const Eigen::Ref<const Vector>& dw, const FbsdeProblem& problem) {
  Vector b(problem.dim_x);
  problem.drift(t, x, b);
  Matrix s(problem.dim_x, problem.dim_w);
  problem.diffusion(t, x, s);
  return x + b * h + s * dw;
}

PathBatch simulate_forward_batch(const FbsdeProblem& problem, const Partition& partition,
                                 std::int64_t paths, std::uint64_t seed, std::uint64_t path_offset,
                                 int workers) {
  const int d1 = problem.dim_x;
  const int d = problem.dim_w;
  const int n = partition.steps();
  PathBatch batch;
  batch.partition = partition;
  batch.seed = seed;
  batch.path_offset = path_offset;
  batch.increments =
      sample_increments(partition, paths, Matrix::Identity(d, d), seed, path_offset, workers);
  batch.states = StepArray(n + 1, paths, d1);

  const double h = partition.step_size();
  parallel_ranges(static_cast<std::size_t>(paths), workers, [&](std::size_t begin, std::size_t end) {
    Vector x(d1), b(d1), next(d1);
    Matrix s(d1, d);
    for (std::size_t mm = begin; mm < end; ++mm) {
      const auto m = static_cast<std::int64_t>(mm);
      x = problem.x0;
      Eigen::Map<Vector>(batch.states.row(m, 0), d1) = x;
      for (int i = 0; i < n; ++i) {
        Eigen::Map<const Vector> dw(batch.increments.row(m, i), d);
        problem.drift(partition.time(i), x, b);
        problem.diffusion(partition.time(i), x, s);
        // Same expression as euler_step so both routes round identically.
        next = x + b * h + s * dw;
        x = next;
        Eigen::Map<Vector>(batch.states.row(m, i + 1), d1) = x;
      }
    }
  });
  return batch;
}

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int k = 0; k < 8; ++k) bytes[k] = static_cast<char>((v >> (8 * k)) & 0xFF);
  out.write(bytes, 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw std::runtime_error("read_path_batch: truncated header");
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= std::uint64_t{bytes[k]} << (8 * k);
  return v;
}

void put_array(std::ostream& out, const StepArray& a) {
  for (std::int64_t m = 0; m < a.paths(); ++m)
    for (int i = 0; i < a.steps(); ++i)
      for (int k = 0; k < a.dim(); ++k) put_u64(out, std::bit_cast<std::uint64_t>(a.at(m, i, k)));
}

void get_array(std::istream& in, StepArray& a) {
  for (std::int64_t m = 0; m < a.paths(); ++m)
    for (int i = 0; i < a.steps(); ++i)
      for (int k = 0; k < a.dim(); ++k) a.at(m, i, k) = std::bit_cast<double>(get_u64(in));
}

}  // namespace

void write_path_batch(std::ostream& out, const PathBatch& batch) {
  put_u64(out, static_cast<std::uint64_t>(batch.paths()));
  put_u64(out, static_cast<std::uint64_t>(batch.partition.steps()));
  put_u64(out, static_cast<std::uint64_t>(batch.states.dim()));
  put_u64(out, batch.seed);
  put_array(out, batch.states);
  put_array(out, batch.increments);
}

PathBatch read_path_batch(std::istream& in, double horizon) {
  const auto paths = static_cast<std::int64_t>(get_u64(in));
  const auto n = static_cast<int>(get_u64(in));
  const auto d1 = static_cast<int>(get_u64(in));
  PathBatch batch;
  batch.seed = get_u64(in);
  batch.partition = build_partition(n, horizon);
  batch.states = StepArray(n + 1, paths, d1);
  batch.increments = StepArray(n, paths, d1);
  get_array(in, batch.states);
  get_array(in, batch.increments);
  return batch;
}

}  // namespace bsde
