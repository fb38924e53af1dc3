#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <vector>

#include "swiden/rng.hpp"

using namespace swiden;

// Reference values from an independent Python transcription of SplitMix64 /
// xoshiro256** / Box-Muller (arbitrary-precision integers masked to 64 bits).

TEST(Rng, SplitMixMatchesPublishedFirstOutput) {
  std::uint64_t s = 0;
  EXPECT_EQ(splitmix64(s), 0xe220a8397b1dcdafULL);
}

TEST(Rng, RawStreamSeed7) {
  Rng r(7);
  EXPECT_EQ(r.next(), 0xb358faf74ef9765aULL);
  EXPECT_EQ(r.next(), 0x475c3d964f482cd2ULL);
  EXPECT_EQ(r.next(), 0xd6f1d349952c7996ULL);
}

TEST(Rng, UniformSeed7) {
  Rng r(7);
  EXPECT_DOUBLE_EQ(r.uniform(), 0.7005764821796896);
  EXPECT_DOUBLE_EQ(r.uniform(), 0.2787512294737843);
  EXPECT_DOUBLE_EQ(r.uniform(), 0.8396274618764198);
}

TEST(Rng, NormalSeed7) {
  Rng r(7);
  EXPECT_NEAR(r.normal(), -0.2790239910251981, 1e-15);
  EXPECT_NEAR(r.normal(), 1.8997685786889567, 1e-15);
  EXPECT_NEAR(r.normal(), 2.136306014732201, 1e-15);
  EXPECT_NEAR(r.normal(), 0.2805221356340433, 1e-15);
}

TEST(Rng, DeriveSeed) {
  EXPECT_EQ(derive_seed(42, 0), 0x28efe333b266f103ULL);
  EXPECT_EQ(derive_seed(42, 1), 0x3b3335584873a7b9ULL);
  EXPECT_EQ(derive_seed(42, 2), 0xdc5a84b9a60bd82cULL);
}

TEST(Rng, SameSeedSameSequence) {
  Rng a(123), b(123), c(124);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
  EXPECT_FALSE(a == c);
}

TEST(Rng, IndexStaysInRange) {
  Rng r(1);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 7000; ++i) ++hist[r.index(7)];
  for (int h : hist) EXPECT_GT(h, 800);
}

TEST(Rng, NormalMoments) {
  Rng r(99);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, ShuffleIsPermutation) {
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  Rng r(5);
  shuffle(v, r);
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_FALSE(std::is_sorted(v.begin(), v.end()));
}
