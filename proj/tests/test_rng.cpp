#include <gtest/gtest.h>

#include "uap/rng.hpp"

namespace uap {
namespace {

// Reference values from arbitrary-precision arithmetic on the documented recurrence.
TEST(Lcg64, MatchesReferenceSequence) {
  Lcg64 rng(42);
  EXPECT_EQ(rng.next_u64(), 10481999410520546993ULL);
  EXPECT_EQ(rng.next_u64(), 4159066171780167020ULL);
  EXPECT_EQ(rng.next_u64(), 7615522811268512075ULL);
}

TEST(Lcg64, UniformUsesTop53Bits) {
  Lcg64 rng(42);
  EXPECT_EQ(rng.uniform(), 0.5682303266439076);
  EXPECT_EQ(rng.uniform(), 0.2254634289477513);
  EXPECT_EQ(rng.uniform(), 0.41283831882951183);
}

TEST(Lcg64, BelowStaysInRange) {
  Lcg64 rng(1);
  for (int i = 0; i < 10000; ++i) EXPECT_LT(rng.below(7), 7u);
}

TEST(Lcg64, GaussianMomentsAreStandard) {
  Lcg64 rng(123);
  const int n = 200000;
  double sum = 0.0;
  double sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rng.gaussian();
    sum += g;
    sq += g * g;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

}  // namespace
}  // namespace uap
