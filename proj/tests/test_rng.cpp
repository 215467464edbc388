#include "bsde/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace bsde;

TEST(Philox, KnownAnswerZero) {
  const auto out = Philox4x32::generate({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out[0], 0x6627e8d5u);
  EXPECT_EQ(out[1], 0xe169c58du);
  EXPECT_EQ(out[2], 0xbc57ac4cu);
  EXPECT_EQ(out[3], 0x9b00dbd8u);
}

TEST(Philox, KnownAnswerOnes) {
  const auto out = Philox4x32::generate({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                        {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(out[0], 0x408f276du);
  EXPECT_EQ(out[1], 0x41c83b0eu);
  EXPECT_EQ(out[2], 0xa20bc7c6u);
  EXPECT_EQ(out[3], 0x6d5451fdu);
}

TEST(Rng, OpenUnitInterval) {
  EXPECT_GT(to_open_unit(0, 0), 0.0);
  EXPECT_LT(to_open_unit(0xffffffffu, 0xffffffffu), 1.0);
}

TEST(Rng, NormalsAreKeyedByIndex) {
  std::vector<double> a(7), b(7), c(7);
  fill_normals(42, Stream::increments, 3, 5, a);
  fill_normals(42, Stream::increments, 3, 5, b);
  fill_normals(42, Stream::increments, 3, 6, c);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  std::vector<double> other_stream(7);
  fill_normals(42, Stream::oracle, 3, 5, other_stream);
  EXPECT_NE(a, other_stream);
}

TEST(Rng, NormalMoments) {
  constexpr int kCount = 200000;
  std::vector<double> xs(kCount);
  fill_normals(7, Stream::increments, 0, 0, xs);
  double m = 0.0, m2 = 0.0, m4 = 0.0;
  for (double x : xs) {
    m += x;
    m2 += x * x;
    m4 += x * x * x * x;
  }
  m /= kCount;
  m2 /= kCount;
  m4 /= kCount;
  EXPECT_NEAR(m, 0.0, 4.0 / std::sqrt(kCount));
  EXPECT_NEAR(m2, 1.0, 4.0 * std::sqrt(2.0 / kCount));
  EXPECT_NEAR(m4, 3.0, 4.0 * std::sqrt(96.0 / kCount));
}

TEST(Rng, MixSeedSpreads) {
  EXPECT_NE(mix_seed(1), mix_seed(2));
  EXPECT_NE(mix_seed(0), 0u);
}
