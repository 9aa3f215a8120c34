#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "feastest/rng.hpp"

namespace {

using feastest::rng::Block;
using feastest::rng::philox4x32_10;
using feastest::rng::Stream;

// Known-answer vectors published with the Random123 reference
// implementation (kat_vectors, philox4x32_10).
TEST(Philox, KnownAnswerZero) {
  const Block out = philox4x32_10({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out[0], 0x6627e8d5u);
  EXPECT_EQ(out[1], 0xe169c58du);
  EXPECT_EQ(out[2], 0xbc57ac4cu);
  EXPECT_EQ(out[3], 0x9b00dbd8u);
}

TEST(Philox, KnownAnswerOnes) {
  const Block out = philox4x32_10(
      {0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
      {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(out[0], 0x408f276du);
  EXPECT_EQ(out[1], 0x41c83b0eu);
  EXPECT_EQ(out[2], 0xa20bc7c6u);
  EXPECT_EQ(out[3], 0x6d5451fdu);
}

TEST(Philox, KnownAnswerPi) {
  const Block out = philox4x32_10(
      {0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
      {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(out[0], 0xd16cfe09u);
  EXPECT_EQ(out[1], 0x94fdccebu);
  EXPECT_EQ(out[2], 0x5001e420u);
  EXPECT_EQ(out[3], 0x24126ea1u);
}

TEST(Stream, SameSeedAndStreamReproduce) {
  Stream a(42, 7), b(42, 7), c(42, 8);
  int differ = 0;
  for (int i = 0; i < 100; ++i) {
    const double x = a.normal();
    EXPECT_EQ(x, b.normal());
    differ += x != c.normal();
  }
  EXPECT_GT(differ, 95);
}

TEST(Stream, NormalMoments) {
  Stream s(2024, 1);
  const int n = 200000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double z = s.normal();
    sum += z;
    sq += z * z;
  }
  const double mean = sum / n;
  EXPECT_NEAR(mean, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(sq / n - mean * mean, 1.0, 0.015);
}

TEST(Stream, UniformInOpenUnitInterval) {
  Stream s(1, 2);
  double lo = 1, hi = 0;
  for (int i = 0; i < 100000; ++i) {
    const double u = s.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  EXPECT_LT(lo, 1e-3);
  EXPECT_GT(hi, 1 - 1e-3);
}

TEST(Stream, RademacherBalanced) {
  Stream s(5, 5);
  int plus = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double e = s.rademacher();
    ASSERT_TRUE(e == 1.0 || e == -1.0);
    plus += e > 0;
  }
  EXPECT_NEAR(plus / double(n), 0.5, 0.01);
}

TEST(StreamId, DistinctTagsGiveDistinctIds) {
  using feastest::rng::stream_id;
  EXPECT_NE(stream_id(1, 0, 0), stream_id(2, 0, 0));
  EXPECT_NE(stream_id(1, 0, 1), stream_id(1, 1, 0));
  EXPECT_EQ(stream_id(3, 4, 5), stream_id(3, 4, 5));
}

}  // namespace
