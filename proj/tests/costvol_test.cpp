#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_util.hpp"
#include "ufc/costvol.hpp"

using namespace ufc;
using ufc::testing::max_abs_diff;
using ufc::testing::random_array;
using A = Array<double>;
using CV = CostVolume<double>;

namespace {

FeatureMap<double> one_hot_features(std::size_t s) {
  const auto n = s * s;
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return {1, A({s, s, n}, v)};
}

A center_kernel() { return A({3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0}); }

}  // namespace

TEST(CostBuild, OneHotGivesIdentity) {
  const auto f = one_hot_features(3);
  const auto c = costvol::build(f, f);
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = 0; j < 9; ++j) EXPECT_EQ(c.at(i, j), i == j ? 1.0 : 0.0);
}

TEST(CostBuild, OrthogonalGivesZero) {
  std::vector<double> a(4 * 2, 0.0), b(4 * 2, 0.0);
  for (std::size_t p = 0; p < 4; ++p) {
    a[p * 2] = 1.0 + p;
    b[p * 2 + 1] = 2.0 - p;
  }
  const auto c = costvol::build(FeatureMap<double>{2, A({2, 2, 2}, a)}, FeatureMap<double>{2, A({2, 2, 2}, b)});
  for (double v : c.grid.data()) EXPECT_EQ(v, 0.0);
}

TEST(CostBuild, MatchesPairwiseOracleAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (std::size_t s : {2u, 4u, 8u}) {
      const std::size_t ch = seed % 2 ? 16 : 8;
      const auto ds = random_array({s, s, ch}, seed), dt = random_array({s, s, ch}, seed + 1000);
      const auto c = costvol::build(FeatureMap<double>{1, ds}, FeatureMap<double>{1, dt});
      EXPECT_LT(oracle::max_diff(oracle::pairwise_dots(oracle::from(reshape(ds, {s * s, ch})),
                                                       oracle::from(reshape(dt, {s * s, ch}))),
                                 c.grid),
                1e-12);
    }
  }
}

TEST(CostBuild, NormalizedFeaturesBoundValues) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto ds = backbone::l2_normalize(FeatureMap<double>{1, random_array({4, 4, 6}, seed)});
    const auto dt = backbone::l2_normalize(FeatureMap<double>{1, random_array({4, 4, 6}, seed + 9)});
    for (double v : costvol::build(ds, dt).grid.to_vector()) {
      EXPECT_GE(v, -1.0 - 1e-12);
      EXPECT_LE(v, 1.0 + 1e-12);
    }
  }
}

TEST(CostBuild, Errors) {
  const FeatureMap<double> a{1, A::zeros({2, 2, 3})}, b{2, A::zeros({2, 2, 3})}, c{1, A::zeros({2, 2, 4})};
  EXPECT_THROW(costvol::build(a, b), ContractError);
  EXPECT_THROW(costvol::build(a, c), DimensionError);
}

TEST(CostSlice, Cases) {
  const auto f = one_hot_features(3);
  const auto id = costvol::build(f, f);
  const auto s0 = costvol::slice(id, 0, 0);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(s0[i], i == 0 ? 1.0 : 0.0);

  const CV constant{1, A::full({3, 3, 3, 3}, 0.25)};
  for (double v : costvol::slice(constant, 2, 1).to_vector()) EXPECT_EQ(v, 0.25);

  const CV r{1, random_array({3, 3, 3, 3}, 4)};
  for (std::size_t jy = 0; jy < 3; ++jy)
    for (std::size_t jx = 0; jx < 3; ++jx) {
      const auto sl = costvol::slice(r, jx, jy);
      for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(sl[i], r.at(i, jy * 3 + jx));
    }
  EXPECT_THROW(costvol::slice(r, 3, 0), ContractError);
}

TEST(Conv4dSeparable, IdentityKernelsAreExact) {
  const CV c{1, random_array({4, 4, 4, 4}, 1)};
  EXPECT_EQ(costvol::conv4d_separable(c, center_kernel(), center_kernel()).grid.to_vector(), c.grid.to_vector());
}

TEST(Conv4dSeparable, MeanFilterKeepsConstantInterior) {
  const CV c{1, A::full({5, 5, 5, 5}, 0.7)};
  const auto out = costvol::conv4d_separable(c, center_kernel(), A::full({3, 3}, 1.0 / 9));
  for (std::size_t i = 0; i < 25; ++i)
    for (std::size_t ty = 1; ty < 4; ++ty)
      for (std::size_t tx = 1; tx < 4; ++tx) EXPECT_NEAR(out.at(i, ty * 5 + tx), 0.7, 1e-12);
}

TEST(Conv4dSeparable, MatchesComposedLoopOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const CV c{1, random_array({4, 4, 4, 4}, seed)};
    const auto ks = random_array({3, 3}, seed + 20), kt = random_array({3, 3}, seed + 40);
    const auto expected = oracle::plane_conv(oracle::plane_conv(oracle::from(c.matrix()), 4, oracle::from(ks), true), 4,
                                             oracle::from(kt), false);
    EXPECT_LT(oracle::max_diff(expected, costvol::conv4d_separable(c, ks, kt).grid), 1e-10);
  }
}

TEST(ResidualAdd, Cases) {
  const CV c{2, random_array({3, 3, 3, 3}, 1)}, d{2, random_array({3, 3, 3, 3}, 2)};
  EXPECT_EQ(costvol::residual_add(c, CV{2, A::zeros({3, 3, 3, 3})}).grid.to_vector(), c.grid.to_vector());
  for (double v : costvol::residual_add(c, CV{2, scale(c.grid, -1.0)}).grid.to_vector()) EXPECT_EQ(v, 0.0);
  const auto sum = costvol::residual_add(c, d);
  for (std::size_t i = 0; i < sum.grid.size(); ++i) EXPECT_EQ(sum.grid[i], c.grid[i] + d.grid[i]);
  EXPECT_THROW(costvol::residual_add(c, CV{1, d.grid}), ContractError);
}

TEST(UpsampleCost, IdentityAndConstant) {
  const CV c{2, random_array({4, 4, 4, 4}, 3)};
  EXPECT_EQ(costvol::upsample_cost(c, 2, 4).grid.to_vector(), c.grid.to_vector());
  const auto up = costvol::upsample_cost(CV{1, A::full({2, 2, 2, 2}, 0.3)}, 2, 4);
  EXPECT_EQ(up.grid.shape(), (Shape{4, 4, 4, 4}));
  EXPECT_EQ(up.level, 2);
  for (double v : up.grid.data()) EXPECT_NEAR(v, 0.3, 1e-12);
  EXPECT_THROW(costvol::upsample_cost(c, 1, 2), ContractError);
}

TEST(UpsampleCost, RankOneSeparability) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto u = random_array({3, 3, 1}, seed), v = random_array({3, 3, 1}, seed + 5);
    std::vector<double> c(81);
    for (std::size_t i = 0; i < 9; ++i)
      for (std::size_t j = 0; j < 9; ++j) c[i * 9 + j] = u[i] * v[j];
    const auto up = costvol::upsample_cost(CV{1, A({3, 3, 3, 3}, c)}, 2, 6);
    const auto ru = bilinear_resize(u, 6, 6), rv = bilinear_resize(v, 6, 6);
    double worst = 0;
    for (std::size_t i = 0; i < 36; ++i)
      for (std::size_t j = 0; j < 36; ++j) worst = std::max(worst, std::abs(up.at(i, j) - ru[i] * rv[j]));
    EXPECT_LT(worst, 1e-10);
  }
}

TEST(FinalCost, Cases) {
  const CV z1{1, A::zeros({2, 2, 2, 2})}, z2{2, A::zeros({4, 4, 4, 4})};
  const CV c3{3, random_array({8, 8, 8, 8}, 1)};
  EXPECT_EQ(costvol::final_cost<double>({z1, z2, c3}).grid.to_vector(), c3.grid.to_vector());

  const auto ones = costvol::final_cost<double>(
      {CV{1, A::full({2, 2, 2, 2}, 1.0)}, CV{2, A::full({4, 4, 4, 4}, 1.0)}, CV{3, A::full({8, 8, 8, 8}, 1.0)}});
  for (double v : ones.grid.data()) EXPECT_NEAR(v, 3.0, 1e-12);

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const CV a{1, random_array({2, 2, 2, 2}, seed)}, b{2, random_array({4, 4, 4, 4}, seed + 1)},
        c{3, random_array({8, 8, 8, 8}, seed + 2)};
    const auto manual = add(add(costvol::upsample_cost(a, 3, 8).grid, costvol::upsample_cost(b, 3, 8).grid), c.grid);
    EXPECT_LT(max_abs_diff(costvol::final_cost<double>({a, b, c}).grid, manual), 1e-8);
  }
}

TEST(CostVolume, DeskMemoryBound) {
  const FeatureMap<float> f{3, Array<float>::full({32, 32, 24}, 0.1f)};
  const auto c = costvol::build(f, f);
  EXPECT_LE(c.grid.size() * sizeof(float), std::size_t(8) << 20);
}
