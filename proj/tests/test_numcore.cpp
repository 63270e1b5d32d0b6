#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <stdexcept>

#include "gradmix/numcore.hpp"
#include "test_util.hpp"

using namespace gradmix;
using gradmix::testing::random_vec;

TEST(ParamVec, RejectsNonFiniteEntries) {
  EXPECT_THROW(ParamVec({1.0, NAN}), ContractError);
  EXPECT_THROW(ParamVec({INFINITY}), ContractError);
  EXPECT_NO_THROW(ParamVec({0.0, -1.5}));
}

TEST(Dot, HandExamples) {
  EXPECT_EQ(dot({1, 0}, {0, 1}), 0.0);
  EXPECT_EQ(dot({2, 1}, {-1, -3}), -5.0);
  EXPECT_EQ(dot({3, 4}, {3, 4}), 25.0);
}

TEST(Dot, DimensionMismatchThrows) {
  EXPECT_THROW(dot({1, 2}, {1, 2, 3}), ContractError);
}

TEST(Dot, SymmetricAndBilinear) {
  RngStream rng(11);
  for (std::size_t dim : {2u, 10u, 1000u}) {
    for (int trial = 0; trial < 1000; ++trial) {
      const auto a = random_vec(rng, dim), b = random_vec(rng, dim), c = random_vec(rng, dim);
      const double s = rng.uniform(-3, 3);
      ASSERT_EQ(dot(a, b), dot(b, a));
      // (a + s c) . b == a . b + s (c . b)
      const double lhs = dot(add_scaled(a, s, c), b);
      const double rhs = dot(a, b) + s * dot(c, b);
      const double scale = norm(a) * norm(b) + std::abs(s) * norm(c) * norm(b);
      ASSERT_LE(std::abs(lhs - rhs), 1e-12 * scale) << "dim " << dim;
    }
  }
}

TEST(Cosine, HandExamples) {
  EXPECT_EQ(*cosine_similarity({1, 0}, {1, 0}), 1.0);
  EXPECT_EQ(*cosine_similarity({1, 0}, {-1, 0}), -1.0);
  EXPECT_NEAR(*cosine_similarity({1, 1}, {1, 0}), 0.70710678118654752, 1e-9);
}

TEST(Cosine, ZeroNormIsMissing) {
  EXPECT_FALSE(cosine_similarity({0, 0}, {1, 0}).has_value());
  EXPECT_FALSE(cosine_similarity({1, 0}, {0, 0}).has_value());
}

TEST(Cosine, ExactlySymmetricAndClamped) {
  RngStream rng(5);
  for (int i = 0; i < 500; ++i) {
    const auto a = random_vec(rng, 1 + rng.uniform_index(50));
    const auto b = random_vec(rng, a.dim());
    const auto ab = cosine_similarity(a, b), ba = cosine_similarity(b, a);
    ASSERT_EQ(*ab, *ba);
    ASSERT_LE(std::abs(*ab), 1.0);
  }
  const ParamVec v{1e-3, 7.0, -2.5};
  EXPECT_LE(*cosine_similarity(v, v), 1.0);
}

TEST(FiniteDiff, Quadratic) {
  const auto g = finite_diff_grad([](const ParamVec& t) { return squared_norm(t); }, {1, 2}, 1e-5);
  EXPECT_NEAR(g[0], 2.0, 1e-8);
  EXPECT_NEAR(g[1], 4.0, 1e-8);
}

TEST(FiniteDiff, ConstantIsZero) {
  const auto g = finite_diff_grad([](const ParamVec&) { return 7.0; }, {1, -2, 3});
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDiff, Product) {
  const auto g = finite_diff_grad([](const ParamVec& t) { return t[0] * t[1]; }, {3, 5}, 1e-5);
  EXPECT_NEAR(g[0], 5.0, 1e-8);
  EXPECT_NEAR(g[1], 3.0, 1e-8);
}

TEST(FiniteDiff, NonFiniteLossNamesCoordinate) {
  auto loss = [](const ParamVec& t) { return t[1] > 1.0 ? INFINITY : 0.0; };
  try {
    finite_diff_grad(loss, {0.0, 1.0}, 1e-3);
    FAIL() << "expected domain_error";
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate 1"), std::string::npos);
  }
}

TEST(FiniteDiff, RejectsNonPositiveStep) {
  EXPECT_THROW(finite_diff_grad([](const ParamVec&) { return 0.0; }, {1.0}, 0.0), ContractError);
}

TEST(Rng, SameSeedSameSequence) {
  RngStreams a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.stream(Substream::shuffle).next_u64(), b.stream(Substream::shuffle).next_u64());
}

TEST(Rng, SubstreamsAreIndependent) {
  // Interleaving draws on other substreams never changes this one.
  RngStreams plain(9), noisy(9);
  std::vector<std::uint64_t> expected, got;
  for (int i = 0; i < 200; ++i) expected.push_back(plain.stream(Substream::surgery_p).next_u64());
  RngStream extra = noisy.derive(Substream::surgery_p, "unrelated");
  for (int i = 0; i < 200; ++i) {
    noisy.stream(Substream::lang_pick).next_u64();
    noisy.stream(Substream::shuffle).normal();
    extra.next_u64();
    got.push_back(noisy.stream(Substream::surgery_p).next_u64());
    noisy.stream(Substream::init).uniform01();
  }
  EXPECT_EQ(expected, got);
}

TEST(Rng, SubstreamsDiffer) {
  RngStreams s(1);
  std::set<std::uint64_t> firsts;
  for (auto id : {Substream::init, Substream::shuffle, Substream::lang_pick, Substream::surgery_p, Substream::shot_sample,
                  Substream::synth_data}) {
    firsts.insert(s.stream(id).next_u64());
  }
  EXPECT_EQ(firsts.size(), 6u);
}

TEST(Rng, DeriveIsKeyedAndRepeatable) {
  const RngStreams s(3);
  EXPECT_EQ(s.derive(Substream::shuffle, "a").next_u64(), s.derive(Substream::shuffle, "a").next_u64());
  EXPECT_NE(s.derive(Substream::shuffle, "a").next_u64(), s.derive(Substream::shuffle, "b").next_u64());
  EXPECT_NE(s.derive(Substream::shuffle, "a").next_u64(), s.derive(Substream::shot_sample, "a").next_u64());
}

TEST(Rng, UniformIndexInRangeAndCoversAll) {
  RngStream rng(8);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto k = rng.uniform_index(7);
    ASSERT_LT(k, 7u);
    ++hits[k];
  }
  for (int h : hits) EXPECT_GT(h, 800);
  EXPECT_THROW(rng.uniform_index(0), ContractError);
}

TEST(Rng, Uniform01InHalfOpenUnitInterval) {
  RngStream rng(2);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform01();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, NormalMoments) {
  RngStream rng(4);
  double s = 0, ss = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    ss += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.05);
  EXPECT_NEAR(ss / n, 1.0, 0.05);
}

TEST(Rng, ShuffleIsPermutation) {
  RngStream rng(6);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  auto w = v;
  rng.shuffle(w);
  EXPECT_NE(v, w);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(v, w);
}
