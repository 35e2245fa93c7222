#include <gtest/gtest.h>

#include "test_util.hpp"
#include "ufc/backbone.hpp"

using namespace ufc;
using ufc::testing::max_abs_diff;
using ufc::testing::random_array;
using A = Array<double>;

namespace {

ParameterStore<double> desk_params(std::uint64_t seed) {
  ParameterStore<double> store;
  std::mt19937_64 rng(seed);
  backbone::register_params(store, LevelPlan::desk(), rng);
  return store;
}

}  // namespace

TEST(LevelPlan, PresetsValidate) {
  for (const auto& plan : {LevelPlan::desk(), LevelPlan::paper(), LevelPlan::tiny()}) {
    EXPECT_NO_THROW(plan.validate());
    EXPECT_EQ(plan.level(2).extent, 2 * plan.level(1).extent);
    EXPECT_EQ(plan.level(3).extent, 2 * plan.level(2).extent);
  }
  EXPECT_EQ(LevelPlan::paper().level(3).extent, 64u);
  EXPECT_EQ(LevelPlan::paper().level(1).proj_channels, 384u);
  auto bad = LevelPlan::desk();
  bad.levels[1].extent = 20;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(ExtractPyramid, DeskShapes) {
  const auto store = desk_params(1);
  const auto maps = backbone::extract_pyramid(random_array({64, 64, 3}, 3, 0, 1), store.bind(), LevelPlan::desk());
  const std::array<Shape, 3> expected = {Shape{8, 8, 96}, Shape{16, 16, 64}, Shape{32, 32, 48}};
  for (int l = 0; l < 3; ++l) {
    EXPECT_EQ(maps[l].level, l + 1);
    EXPECT_EQ(maps[l].grid.shape(), expected[l]);
  }
}

TEST(ExtractPyramid, LargerInputsAreResizedToThePlan) {
  const auto store = desk_params(1);
  const auto maps = backbone::extract_pyramid(random_array({256, 256, 3}, 3, 0, 1), store.bind(), LevelPlan::desk());
  EXPECT_EQ(maps[2].grid.shape(), (Shape{32, 32, 48}));
}

TEST(ExtractPyramid, ZeroImageGivesZeroFeatures) {
  const auto maps = backbone::extract_pyramid(A::zeros({64, 64, 3}), desk_params(2).bind(), LevelPlan::desk());
  for (const auto& m : maps)
    for (double v : m.grid.data()) EXPECT_EQ(v, 0.0);
}

TEST(ExtractPyramid, Deterministic) {
  const auto image = random_array({64, 64, 3}, 5, 0, 1);
  const auto a = backbone::extract_pyramid(image, desk_params(4).bind(), LevelPlan::desk());
  const auto b = backbone::extract_pyramid(image, desk_params(4).bind(), LevelPlan::desk());
  for (int l = 0; l < 3; ++l) EXPECT_EQ(a[l].grid.to_vector(), b[l].grid.to_vector());
}

TEST(ExtractPyramid, RejectsIndivisibleExtent) {
  EXPECT_THROW(backbone::extract_pyramid(A::zeros({60, 60, 3}), desk_params(1).bind(), LevelPlan::desk()), ConfigError);
  EXPECT_THROW(backbone::extract_pyramid(A::zeros({64, 64, 1}), desk_params(1).bind(), LevelPlan::desk()),
               DimensionError);
}

TEST(Project, TruncatedIdentity) {
  const auto plan = LevelPlan::desk();
  const auto lv = plan.level(1);
  std::vector<double> w(lv.raw_channels * lv.proj_channels, 0.0);
  for (std::size_t c = 0; c < lv.proj_channels; ++c) w[c * lv.proj_channels + c] = 1.0;
  ParamSet<double> p;
  p.insert(backbone::projection(1), A({lv.raw_channels, lv.proj_channels}, w));
  const FeatureMap<double> f{1, random_array({8, 8, lv.raw_channels}, 7)};
  const auto out = backbone::project(f, p, plan);
  ASSERT_EQ(out.channels(), lv.proj_channels);
  for (std::size_t px = 0; px < 64; ++px)
    for (std::size_t c = 0; c < lv.proj_channels; ++c)
      EXPECT_EQ(out.grid[px * lv.proj_channels + c], f.grid[px * lv.raw_channels + c]);
}

TEST(Project, ZeroWeightAndLoopOracle) {
  const auto plan = LevelPlan::desk();
  const auto lv = plan.level(2);
  const FeatureMap<double> f{2, random_array({16, 16, lv.raw_channels}, 8)};
  ParamSet<double> zero;
  zero.insert(backbone::projection(2), A::zeros({lv.raw_channels, lv.proj_channels}));
  for (double v : backbone::project(f, zero, plan).grid.to_vector()) EXPECT_EQ(v, 0.0);

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto w = random_array({lv.raw_channels, lv.proj_channels}, seed + 50);
    ParamSet<double> p;
    p.insert(backbone::projection(2), w);
    const auto out = backbone::project(f, p, plan);
    double worst = 0;
    for (std::size_t px = 0; px < 256; ++px)
      for (std::size_t o = 0; o < lv.proj_channels; ++o) {
        double s = 0;
        for (std::size_t c = 0; c < lv.raw_channels; ++c) s += f.grid[px * lv.raw_channels + c] * w.at(c, o);
        worst = std::max(worst, std::abs(s - out.grid[px * lv.proj_channels + o]));
      }
    EXPECT_LT(worst, 1e-10);
  }
}

TEST(Project, PlanMismatch) {
  ParamSet<double> p;
  p.insert(backbone::projection(1), A::zeros({5, 3}));
  EXPECT_THROW(backbone::project(FeatureMap<double>{1, A::zeros({8, 8, 96})}, p, LevelPlan::desk()), DimensionError);
}

TEST(L2Normalize, Cases) {
  const auto out = backbone::l2_normalize(FeatureMap<double>{1, A({1, 3, 2}, {3, 4, 0.6, 0.8, 0, 0})});
  EXPECT_NEAR(out.grid[0], 0.6, 1e-12);
  EXPECT_NEAR(out.grid[1], 0.8, 1e-12);
  EXPECT_NEAR(out.grid[2], 0.6, 1e-12);
  EXPECT_NEAR(out.grid[3], 0.8, 1e-12);
  EXPECT_EQ(out.grid[4], 0.0);
  EXPECT_EQ(out.grid[5], 0.0);
}
