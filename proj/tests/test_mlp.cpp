#include "bsde/mlp.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

using namespace bsde;

TEST(Mlp, LayerShapes) {
  const auto p = init_mlp(1, 1, 7);
  EXPECT_EQ(p.layer_sizes(), (std::vector<int>{1, 11, 11, 1}));
  EXPECT_EQ(p.layers[0].weights.rows(), 11);
  EXPECT_EQ(p.layers[0].weights.cols(), 1);
  EXPECT_EQ(p.layers[1].weights.rows(), 11);
  EXPECT_EQ(p.layers[2].weights.cols(), 11);
  EXPECT_EQ(p.parameter_count(), 11u + 11 + 121 + 11 + 11 + 1);
  EXPECT_EQ(init_mlp(3, 3, 1, 0, 4).layer_sizes(), (std::vector<int>{3, 4, 4, 3}));
}

TEST(Mlp, InitDeterministicAndIndexed) {
  const auto a = init_mlp(4, 4, 99, 2);
  const auto b = init_mlp(4, 4, 99, 2);
  const auto c = init_mlp(4, 4, 99, 3);
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_EQ(a.layers[l].weights, b.layers[l].weights);
    EXPECT_EQ(a.layers[l].bias, b.layers[l].bias);
    EXPECT_NE(a.layers[l].weights, c.layers[l].weights);
    EXPECT_EQ(a.layers[l].bias.cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Mlp, InitVarianceMatchesFanIn) {
  const auto p = init_mlp(100, 100, 4);  // hidden 110 x 110
  const Matrix& w = p.layers[1].weights;
  ASSERT_GE(w.size(), 10000);
  const double var = (w.array() - w.mean()).square().mean();
  EXPECT_NEAR(var, 2.0 / 110.0, 0.1 * 2.0 / 110.0);
  const Matrix& out = p.layers[2].weights;
  const double out_var = (out.array() - out.mean()).square().mean();
  EXPECT_NEAR(out_var, 1.0 / 110.0, 0.1 / 110.0);
}

TEST(Mlp, ZeroNetOutputsZero) {
  const auto p = zero_mlp(3, 2);
  Vector x(3);
  x << 1.0, -2.0, 5.0;
  EXPECT_EQ(mlp_forward(p, x), Vector::Zero(2));
}

TEST(Mlp, BiasOnlyOutputIsConstant) {
  auto p = zero_mlp(2, 2);
  p.layers[0].bias.setConstant(1.0);
  p.layers[2].bias << 0.25, -0.75;
  Vector x1(2), x2(2);
  x1 << 1.0, 2.0;
  x2 << -30.0, 4.0;
  EXPECT_EQ(mlp_forward(p, x1), p.layers[2].bias);
  EXPECT_EQ(mlp_forward(p, x2), p.layers[2].bias);
}

TEST(Mlp, HandComputedToyNet) {
  // 1 -> 2 -> 2 -> 1 with fixed weights.
  auto p = zero_mlp(1, 1, 2);
  p.layers[0].weights << 1.0, -1.0;
  p.layers[0].bias << 0.5, 0.0;
  p.layers[1].weights << 1.0, 2.0, -1.0, 1.0;
  p.layers[1].bias << 0.0, 0.1;
  p.layers[2].weights << 3.0, -2.0;
  p.layers[2].bias << 0.2;
  Vector x(1);
  x << 2.0;
  // h1 = relu(2.5, -2) = (2.5, 0); h2 = relu(2.5, -2.4) = (2.5, 0); out = 7.5 + 0.2.
  EXPECT_NEAR(mlp_forward(p, x)[0], 7.7, 1e-14);
  x << -1.0;
  // h1 = relu(-0.5, 1) = (0, 1); h2 = relu(2, 1.1); out = 6 - 2.2 + 0.2.
  EXPECT_NEAR(mlp_forward(p, x)[0], 4.0, 1e-14);
}

TEST(Mlp, PositivelyHomogeneousWithoutBiases) {
  const auto p = init_mlp(3, 2, 12);
  Vector x(3);
  x << 0.3, -1.2, 2.0;
  for (double lambda : {0.5, 2.0, 8.0}) {
    const Vector scaled = mlp_forward(p, lambda * x);
    const Vector expected = lambda * mlp_forward(p, x);
    EXPECT_NEAR((scaled - expected).norm(), 0.0, 1e-12 * (1.0 + expected.norm()));
  }
}

TEST(Mlp, NormalizationApplied) {
  auto p = init_mlp(2, 1, 3);
  Vector x(2);
  x << 110.0, 90.0;
  Vector z(2);
  z << 0.5, -0.5;
  auto plain = p;
  p.input_shift = Vector::Constant(2, 100.0);
  p.input_scale = Vector::Constant(2, 20.0);
  p.output_scale = 3.0;
  EXPECT_NEAR(mlp_forward(p, x)[0], 3.0 * mlp_forward(plain, z)[0], 1e-13);
}

TEST(Mlp, BatchMatchesSingle) {
  const auto p = init_mlp(3, 3, 8);
  Matrix xs = Matrix::Random(3, 5);
  const Matrix batch = mlp_forward_batch(p, xs);
  for (int m = 0; m < 5; ++m) EXPECT_TRUE(batch.col(m).isApprox(mlp_forward(p, xs.col(m)), 1e-14));
}

TEST(Mlp, TapeForwardMatchesAndGradientOrder) {
  const auto p = init_mlp(2, 2, 13);
  Matrix xs = Matrix::Random(2, 4);
  Tape tape;
  MlpHandles handles;
  const auto out = record_mlp(tape, p, xs, handles);
  EXPECT_TRUE(tape.value(out).isApprox(mlp_forward_batch(p, xs)));
  tape.backward(tape.mean(tape.sum_rows(out)));
  std::vector<double> grad;
  gradients_into(tape, p, handles, grad);
  EXPECT_EQ(grad.size(), p.parameter_count());
  // Last two entries are the output bias gradient: d mean(sum z)/d b = 1.
  EXPECT_DOUBLE_EQ(grad[grad.size() - 1], 1.0);
  EXPECT_DOUBLE_EQ(grad[grad.size() - 2], 1.0);
}

TEST(Mlp, ValidateRejectsBrokenShapes) {
  auto p = init_mlp(2, 2, 1);
  EXPECT_NO_THROW(p.validate());
  p.layers[1].weights.resize(5, 5);
  EXPECT_THROW(p.validate(), std::invalid_argument);
  auto q = init_mlp(2, 2, 1);
  q.layers[0].bias[0] = std::nan("");
  EXPECT_THROW(q.validate(), std::invalid_argument);
}

TEST(ControlStack, FlattenAssignRoundTrip) {
  auto c = init_controls(3, 2, 2, 17);
  const auto flat = c.flatten();
  EXPECT_EQ(flat.size(), c.parameter_count());
  auto z = zero_controls(3, 2, 2);
  z.assign(flat);
  EXPECT_EQ(z.flatten(), flat);
  EXPECT_THROW(z.assign(std::vector<double>(3)), std::invalid_argument);
}

TEST(ControlStack, CheckpointRoundTrip) {
  auto c = init_controls(2, 3, 3, 21, 5);
  c.steps[1].input_shift = Vector::Constant(3, 100.0);
  c.steps[1].input_scale = Vector::Constant(3, 20.0);
  c.steps[1].output_scale = 0.4;
  std::stringstream buffer;
  save_controls(buffer, c);
  const auto back = load_controls(buffer);
  ASSERT_EQ(back.size(), 2);
  EXPECT_EQ(back.flatten(), c.flatten());
  EXPECT_EQ(back.steps[1].input_shift, c.steps[1].input_shift);
  EXPECT_EQ(back.steps[1].output_scale, 0.4);
  EXPECT_EQ(back.steps[0].layer_sizes(), (std::vector<int>{3, 5, 5, 3}));

  const auto path = std::filesystem::temp_directory_path() / "bsde_controls_test.json";
  save_controls(path.string(), c);
  EXPECT_EQ(load_controls(path.string()).flatten(), c.flatten());
  std::filesystem::remove(path);
}

TEST(ControlStack, RejectsBadCheckpoint) {
  std::stringstream bad("{\"format\": \"other\"}");
  EXPECT_ANY_THROW(load_controls(bad));
}
