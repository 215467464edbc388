#include "bsde/path_engine.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace bsde;

namespace {

BlackScholesMarket table_market(int dim) {
  return BlackScholesMarket::uniform(dim, 0.02, 0.0, 0.2, 0.0, 100.0, 100.0, 1.0);
}

}  // namespace

TEST(Partition, Grid) {
  const auto p = build_partition(10, 1.0);
  EXPECT_DOUBLE_EQ(p.step_size(), 0.1);
  EXPECT_DOUBLE_EQ(p.time(5), 0.5);
  EXPECT_EQ(p.time(0), 0.0);
  EXPECT_FALSE(p.has_schedule());
}

TEST(Partition, LastNodeIsExactlyHorizon) {
  for (int n : {3, 7, 10, 33, 100, 150, 997})
    for (double T : {1.0, 0.3, 2.7}) {
      const auto p = build_partition(n, T);
      EXPECT_EQ(p.time(n), T);
      for (int i = 0; i < n; ++i) EXPECT_LT(p.time(i), p.time(i + 1));
    }
}

TEST(Partition, ScheduleFlags) {
  const auto every = build_partition(10, 1.0, ExerciseSchedule::uniform(10, 1.0));
  for (int i = 0; i <= 10; ++i) EXPECT_TRUE(every.is_exercise(i));
  const auto sparse = build_partition(20, 1.0, ExerciseSchedule::uniform(5, 1.0));
  EXPECT_EQ(sparse.exercise_count(), 5);
  for (int i = 0; i <= 20; ++i) EXPECT_EQ(sparse.is_exercise(i), i % 4 == 0) << i;
}

TEST(Partition, RejectsMisalignedSchedule) {
  try {
    build_partition(15, 1.0, ExerciseSchedule::uniform(10, 1.0));
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("15"), std::string::npos) << msg;
    EXPECT_NE(msg.find("10"), std::string::npos) << msg;
  }
  EXPECT_THROW(build_partition(0, 1.0), std::invalid_argument);
  EXPECT_THROW(build_partition(4, 0.0), std::invalid_argument);
}

TEST(Increments, UnitVariance) {
  const auto p = build_partition(1, 1.0);
  const auto inc = sample_increments(p, 100'000, Matrix::Identity(2, 2), 3);
  for (int k = 0; k < 2; ++k) {
    double m = 0.0, v = 0.0;
    for (std::int64_t i = 0; i < inc.paths(); ++i) m += inc.at(i, 0, k);
    m /= inc.paths();
    for (std::int64_t i = 0; i < inc.paths(); ++i) v += std::pow(inc.at(i, 0, k) - m, 2);
    v /= inc.paths() - 1;
    EXPECT_GE(v, 0.99);
    EXPECT_LE(v, 1.01);
  }
}

TEST(Increments, RankOneCorrelationGivesEqualCoordinates) {
  const auto p = build_partition(4, 1.0);
  const auto inc = sample_increments(p, 100, Matrix::Ones(2, 2), 8);
  for (std::int64_t m = 0; m < 100; ++m)
    for (int i = 0; i < 4; ++i) EXPECT_EQ(inc.at(m, i, 0), inc.at(m, i, 1));
}

TEST(Increments, CovarianceMatchesCorrelation) {
  const auto p = build_partition(2, 0.5);
  Matrix rho(2, 2);
  rho << 1.0, -0.6, -0.6, 1.0;
  const std::int64_t M = 40'000;
  const auto inc = sample_increments(p, M, rho, 21);
  const double h = p.step_size();
  for (int i = 0; i < 2; ++i) {
    double c = 0.0, mean0 = 0.0, mean1 = 0.0;
    for (std::int64_t m = 0; m < M; ++m) {
      mean0 += inc.at(m, i, 0);
      mean1 += inc.at(m, i, 1);
      c += inc.at(m, i, 0) * inc.at(m, i, 1);
    }
    mean0 /= M;
    EXPECT_NEAR(mean0, 0.0, 5.0 * std::sqrt(h / M));
    // Var of the product of two correlated normals: h^2 (1 + rho^2).
    EXPECT_NEAR(c / M, -0.6 * h, 5.0 * h * std::sqrt(1.36 / M));
  }
}

TEST(Increments, DeterministicAndPathKeyed) {
  const auto p = build_partition(5, 1.0);
  const Matrix rho = Matrix::Identity(3, 3);
  const auto a = sample_increments(p, 64, rho, 77);
  const auto b = sample_increments(p, 64, rho, 77);
  EXPECT_TRUE(a == b);
  const auto tail = sample_increments(p, 14, rho, 77, 50);
  for (std::int64_t m = 0; m < 14; ++m)
    for (int i = 0; i < 5; ++i)
      for (int k = 0; k < 3; ++k) EXPECT_EQ(tail.at(m, i, k), a.at(m + 50, i, k));
}

TEST(Increments, RejectsNonPsd) {
  Matrix rho(2, 2);
  rho << 1.0, 1.5, 1.5, 1.0;
  EXPECT_THROW(sample_increments(build_partition(1, 1.0), 4, rho, 1), std::invalid_argument);
}

TEST(EulerStep, ZeroCoefficients) {
  FbsdeProblem p;
  p.dim_x = p.dim_w = 2;
  p.x0 = Vector::Constant(2, 1.0);
  p.drift = [](double, const Eigen::Ref<const Vector>&, Eigen::Ref<Vector> out) { out.setZero(); };
  p.diffusion = [](double, const Eigen::Ref<const Vector>&, Eigen::Ref<Matrix> out) { out.setZero(); };
  Vector x(2);
  x << 3.0, -4.0;
  EXPECT_EQ(euler_step(0.0, x, 0.1, Vector::Constant(2, 0.7), p), x);
}

TEST(EulerStep, BlackScholesSubstitution) {
  const auto p = make_geometric_put_problem(table_market(1));
  Vector x(1), dw(1);
  x << 100.0;
  dw << 0.05;
  EXPECT_NEAR(euler_step(0.0, x, 0.1, dw, p)[0], 101.2, 1e-12);
}

TEST(EulerStep, AntitheticMirror) {
  const auto p = make_geometric_put_problem(BlackScholesMarket::uniform(3, 0.05, 0.01, 0.3, 0.2, 100.0, 100.0, 1.0));
  Vector x(3), dw(3), b(3);
  x << 90.0, 100.0, 110.0;
  dw << 0.1, -0.2, 0.05;
  p.drift(0.0, x, b);
  const Vector up = euler_step(0.0, x, 0.25, dw, p);
  const Vector down = euler_step(0.0, x, 0.25, -dw, p);
  EXPECT_NEAR(((up + down) / 2.0 - (x + b * 0.25)).norm(), 0.0, 1e-12);
}

TEST(Simulate, ZeroVolIsDeterministicCompounding) {
  auto m = table_market(2);
  m.vols.setZero();
  const auto problem = make_geometric_put_problem(m);
  const auto part = build_partition(100, 1.0);
  const auto batch = simulate_forward_batch(problem, part, 8, 1);
  const double expected = 100.0 * std::pow(1.0 + 0.02 * 0.01, 100);
  for (std::int64_t k = 0; k < 8; ++k)
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(batch.states.at(k, 100, j), expected, 1e-10);
}

TEST(Simulate, StartsAtInitialState) {
  const auto problem = make_geometric_put_problem(table_market(3));
  const auto batch = simulate_forward_batch(problem, build_partition(4, 1.0), 16, 2);
  for (std::int64_t m = 0; m < 16; ++m)
    for (int k = 0; k < 3; ++k) EXPECT_EQ(batch.states.at(m, 0, k), 100.0);
  EXPECT_EQ(batch.increments.steps(), 4);
  EXPECT_EQ(batch.states.steps(), 5);
}

TEST(Simulate, TerminalMeanMatchesLognormal) {
  const auto problem = make_geometric_put_problem(table_market(1));
  const auto batch = simulate_forward_batch(problem, build_partition(100, 1.0), 100'000, 4);
  double s = 0.0, s2 = 0.0;
  for (std::int64_t m = 0; m < batch.paths(); ++m) {
    const double x = batch.states.at(m, 100, 0);
    s += x;
    s2 += x * x;
  }
  const double M = static_cast<double>(batch.paths());
  const double mean = s / M;
  const double se = std::sqrt((s2 / M - mean * mean) / M);
  EXPECT_NEAR(mean, 100.0 * std::exp(0.02), 3.0 * se);
}

TEST(Simulate, SinglePathReproducible) {
  const auto problem = make_geometric_put_problem(table_market(2));
  const auto part = build_partition(6, 1.0);
  const auto full = simulate_forward_batch(problem, part, 32, 5);
  const auto one = simulate_forward_batch(problem, part, 1, 5, 0);
  const auto later = simulate_forward_batch(problem, part, 1, 5, 17);
  for (int i = 0; i <= 6; ++i)
    for (int k = 0; k < 2; ++k) {
      EXPECT_EQ(one.states.at(0, i, k), full.states.at(0, i, k));
      EXPECT_EQ(later.states.at(0, i, k), full.states.at(17, i, k));
    }
}

TEST(Simulate, MarkovSplit) {
  const auto problem = make_geometric_put_problem(BlackScholesMarket::uniform(2, 0.02, 0.0, 0.3, 0.4, 100.0, 100.0, 1.0));
  const auto part = build_partition(10, 1.0);
  const auto batch = simulate_forward_batch(problem, part, 4, 9);
  for (std::int64_t m = 0; m < 4; ++m) {
    Vector x = Eigen::Map<const Vector>(batch.states.row(m, 4), 2);
    for (int i = 4; i < 10; ++i) {
      const Eigen::Map<const Vector> dw(batch.increments.row(m, i), 2);
      x = euler_step(part.time(i), x, part.step_size(), dw, problem);
    }
    for (int k = 0; k < 2; ++k) EXPECT_EQ(x[k], batch.states.at(m, 10, k));
  }
}

TEST(Simulate, DiscountedMartingaleEveryNode) {
  const auto problem = make_geometric_put_problem(table_market(1));
  const auto part = build_partition(50, 1.0);
  const auto batch = simulate_forward_batch(problem, part, 100'000, 12);
  for (int i = 0; i <= 50; ++i) {
    double s = 0.0, s2 = 0.0;
    for (std::int64_t m = 0; m < batch.paths(); ++m) {
      const double x = std::exp(-0.02 * part.time(i)) * batch.states.at(m, i, 0);
      s += x;
      s2 += x * x;
    }
    const double M = static_cast<double>(batch.paths());
    const double mean = s / M;
    const double se = std::sqrt(std::max(0.0, s2 / M - mean * mean) / M);
    EXPECT_LE(std::abs(mean - 100.0), 3.0 * se + 1e-9) << "node " << i;
  }
}

TEST(Simulate, WorkerCountIndependent) {
  const auto problem = make_geometric_put_problem(BlackScholesMarket::uniform(3, 0.02, 0.0, 0.2, 0.3, 100.0, 100.0, 1.0));
  const auto part = build_partition(20, 1.0);
  const auto a = simulate_forward_batch(problem, part, 1000, 31, 0, 1);
  const auto b = simulate_forward_batch(problem, part, 1000, 31, 0, 8);
  EXPECT_TRUE(a.states == b.states);
  EXPECT_TRUE(a.increments == b.increments);
}

TEST(PathDump, RoundTrip) {
  const auto problem = make_geometric_put_problem(table_market(2));
  const auto part = build_partition(3, 1.0);
  const auto batch = simulate_forward_batch(problem, part, 5, 123);
  std::stringstream buffer;
  write_path_batch(buffer, batch);
  const std::string bytes = buffer.str();
  ASSERT_EQ(bytes.size(), 4 * 8 + (5 * 4 * 2 + 5 * 3 * 2) * 8);
  // Header little-endian: M = 5.
  EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 5);
  const auto back = read_path_batch(buffer, 1.0);
  EXPECT_EQ(back.seed, 123u);
  EXPECT_TRUE(back.states == batch.states);
  EXPECT_TRUE(back.increments == batch.increments);
}
