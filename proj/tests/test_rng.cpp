#include "misbench/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <set>

using namespace misbench;

TEST(Rng, FnvMatchesPublishedVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Rng, Mix64IsSplitMixStep) {
  // First SplitMix64 output for state 0.
  EXPECT_EQ(mix64(0), 0xe220a8397b1dcdafULL);
}

TEST(Rng, DeriveSeedSeparatesKeysAndOrdinals) {
  EXPECT_EQ(derive_seed(7, "x", 0), derive_seed(7, "x", 0));
  EXPECT_NE(derive_seed(7, "x", 0), derive_seed(7, "x", 1));
  EXPECT_NE(derive_seed(7, "x", 0), derive_seed(7, "y", 0));
  EXPECT_NE(derive_seed(7, "x", 0), derive_seed(8, "x", 0));
}

TEST(Rng, Hex64IsZeroPadded) {
  EXPECT_EQ(hex64(0x1f), "000000000000001f");
  EXPECT_EQ(hex64(~0ULL), "ffffffffffffffff");
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
}

TEST(Rng, BelowIsRoughlyUniform) {
  Rng r(1);
  std::array<int, 5> counts{};
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[r.below(5)];
  // Chi-square with 4 degrees of freedom; 18.47 is the 0.999 quantile.
  double chi = 0;
  for (int c : counts) chi += (c - n / 5.0) * (c - n / 5.0) / (n / 5.0);
  EXPECT_LT(chi, 18.47);
}

TEST(Rng, UniformInHalfOpenUnitInterval) {
  Rng r(3);
  double lo = 1, hi = 0, sum = 0;
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    sum += u;
  }
  EXPECT_GE(lo, 0.0);
  EXPECT_LT(hi, 1.0);
  EXPECT_NEAR(sum / 100000, 0.5, 0.01);
}

TEST(Rng, SampleIndicesDistinctAndInRange) {
  Rng r(9);
  for (int t = 0; t < 200; ++t) {
    auto idx = r.sample_indices(10, 4);
    ASSERT_EQ(idx.size(), 4u);
    std::set<std::size_t> s(idx.begin(), idx.end());
    EXPECT_EQ(s.size(), 4u);
    for (auto i : idx) EXPECT_LT(i, 10u);
  }
  EXPECT_EQ(r.sample_indices(3, 7).size(), 3u);
}

TEST(Rng, ShuffleIsAPermutation) {
  Rng r(5);
  std::vector<int> v{1, 2, 3, 4, 5, 6};
  r.shuffle(std::span<int>(v));
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<int>{1, 2, 3, 4, 5, 6}));
}
