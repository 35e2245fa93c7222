#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "ufc/data.hpp"
#include "ufc/eval.hpp"

using namespace ufc;
using Flow = FlowField<double>;

namespace {

Flow random_flow(std::size_t h, std::size_t w, std::uint64_t seed, double keep = 1.0) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution on(keep);
  std::vector<std::uint8_t> valid(h * w);
  for (auto& v : valid) v = on(rng);
  return {ufc::testing::random_array<double>({h, w, 2}, seed + 1, -5, 5), valid};
}

double loop_aepe(const Flow& a, const Flow& b) {
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t y = 0; y < a.height(); ++y)
    for (std::size_t x = 0; x < a.width(); ++x) {
      const auto i = y * a.width() + x;
      if (!a.valid[i] || !b.valid[i]) continue;
      const double dx = a.dx(x, y) - b.dx(x, y), dy = a.dy(x, y) - b.dy(x, y);
      sum += std::sqrt(dx * dx + dy * dy);
      ++n;
    }
  return sum / double(n);
}

std::vector<Keypoint> at(std::initializer_list<std::array<double, 2>> pts) {
  std::vector<Keypoint> out;
  long id = 0;
  for (const auto& p : pts) out.push_back({p[0], p[1], id++, true});
  return out;
}

}  // namespace

TEST(Aepe, IdenticalIsZero) {
  const auto f = random_flow(9, 11, 3, 0.7);
  EXPECT_EQ(eval::aepe(f, f), 0.0);
}

TEST(Aepe, ConstantDifference) {
  EXPECT_DOUBLE_EQ(eval::aepe(Flow::constant(4, 5, 3, 4), Flow::zeros(4, 5)), 5.0);
}

TEST(Aepe, MatchesLoopOracleAndIsSymmetric) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = random_flow(13, 17, seed, 0.6), b = random_flow(13, 17, seed + 100, 0.6);
    EXPECT_NEAR(eval::aepe(a, b), loop_aepe(a, b), 1e-10);
    EXPECT_EQ(eval::aepe(a, b), eval::aepe(b, a));
  }
}

TEST(Aepe, Errors) {
  EXPECT_THROW(eval::aepe(Flow::zeros(4, 4), Flow::zeros(4, 5)), DimensionError);
  auto empty = Flow::zeros(4, 4);
  std::fill(empty.valid.begin(), empty.valid.end(), 0);
  EXPECT_THROW(eval::aepe(empty, Flow::zeros(4, 4)), EvaluationError);
}

TEST(Transfer, ZeroFlowKeepsPoints) {
  const auto kps = at({{3, 4}, {10.5, 2.25}, {0, 0}});
  const auto out = eval::transfer_keypoints(Flow::zeros(16, 16), kps);
  for (std::size_t i = 0; i < kps.size(); ++i) {
    EXPECT_TRUE(out[i].matched);
    EXPECT_NEAR(out[i].x, kps[i].x, 1e-9);
    EXPECT_NEAR(out[i].y, kps[i].y, 1e-9);
    EXPECT_EQ(out[i].id, kps[i].id);
  }
}

TEST(Transfer, ConstantFlowShiftsByNegation) {
  const auto kps = at({{8, 8}, {12.5, 6.75}});
  const auto out = eval::transfer_keypoints(Flow::constant(20, 20, 2.5, -1.5), kps);
  for (std::size_t i = 0; i < kps.size(); ++i) {
    EXPECT_NEAR(out[i].x, kps[i].x - 2.5, 1e-9);
    EXPECT_NEAR(out[i].y, kps[i].y + 1.5, 1e-9);
  }
}

TEST(Transfer, AffineFlowMatchesForwardMap) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto w = data::sample_warp(WarpKind::affine, seed, 0.8, 64);
    const auto f = data::warp_to_flow<double>(w, 64, 64);
    std::vector<Keypoint> kps;
    for (double x = 6; x < 60; x += 9)
      for (double y = 6; y < 60; y += 9) {
        const auto q = w.apply({x, y});
        if (q[0] > 1 && q[0] < 62 && q[1] > 1 && q[1] < 62) kps.push_back({x, y, long(kps.size()), true});
      }
    ASSERT_FALSE(kps.empty());
    const auto out = eval::transfer_keypoints(f, kps);
    for (std::size_t i = 0; i < kps.size(); ++i) {
      const auto q = w.apply({kps[i].x, kps[i].y});
      EXPECT_TRUE(out[i].matched);
      EXPECT_LT(std::hypot(out[i].x - q[0], out[i].y - q[1]), 0.5) << "seed " << seed;
    }
  }
}

TEST(Transfer, FarPointIsUnmatched) {
  const auto out = eval::transfer_keypoints(Flow::constant(10, 10, 30, 0), at({{2, 2}}));
  EXPECT_FALSE(out[0].matched);
}

TEST(Pck, AllExactIsOne) {
  const auto k = at({{1, 2}, {3, 4}});
  EXPECT_EQ(eval::pck(k, k, 0.01, 100, 100), 1.0);
}

TEST(Pck, BoundaryCountsAsCorrect) {
  // distance (6, 8) has length exactly 0.1 * max(100, 100)
  EXPECT_EQ(eval::pck(at({{16, 28}}), at({{10, 20}}), 0.1, 100, 100), 1.0);
  EXPECT_EQ(eval::pck(at({{16, 28}}), at({{10, 20}}), 0.099, 100, 100), 0.0);
}

TEST(Pck, HalfWithinThreshold) {
  const auto gt = at({{0, 0}, {0, 0}, {0, 0}, {0, 0}, {0, 0}, {0, 0}});
  const auto pred = at({{1, 0}, {0, 2}, {3, 0}, {20, 0}, {0, 30}, {40, 0}});
  EXPECT_DOUBLE_EQ(eval::pck(pred, gt, 0.05, 50, 60), 0.5);
}

TEST(Pck, UnmatchedIsMiss) {
  auto pred = at({{0, 0}, {0, 0}});
  pred[1].matched = false;
  EXPECT_DOUBLE_EQ(eval::pck(pred, at({{0, 0}, {0, 0}}), 0.1, 10, 10), 0.5);
}

TEST(Pck, MonotoneInAlpha) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 64);
  std::vector<Keypoint> a, b;
  for (long i = 0; i < 200; ++i) a.push_back({u(rng), u(rng), i, true}), b.push_back({u(rng), u(rng), i, true});
  double prev = 0;
  for (double alpha = 0.005; alpha < 1.5; alpha += 0.005) {
    const double v = eval::pck(a, b, alpha, 64, 64);
    EXPECT_GE(v, prev);
    prev = v;
  }
  EXPECT_EQ(prev, 1.0);
}

TEST(Pck, Errors) {
  EXPECT_THROW(eval::pck({}, {}, 0.1, 10, 10), EvaluationError);
  EXPECT_THROW(eval::pck(at({{0, 0}}), at({{0, 0}, {1, 1}}), 0.1, 10, 10), ContractError);
  EXPECT_THROW(eval::pck(at({{0, 0}}), at({{0, 0}}), 0.0, 10, 10), DomainError);
  auto shifted = at({{0, 0}});
  shifted[0].id = 7;
  EXPECT_THROW(eval::pck(shifted, at({{0, 0}}), 0.1, 10, 10), ContractError);
}

TEST(EvaluatePair, PerfectPredictionScoresOne) {
  const auto w = data::sample_warp(WarpKind::homography, 4, 0.8, 64);
  const auto gt = data::warp_to_flow<double>(w, 64, 64);
  const auto r = eval::evaluate_pair(gt, gt, 8);
  EXPECT_EQ(r.aepe, 0.0);
  EXPECT_GT(r.keypoints, 0u);
  for (double p : r.pck) EXPECT_EQ(p, 1.0);
  const auto zero = eval::evaluate_pair(Flow::zeros(64, 64), gt, 8);
  EXPECT_GT(zero.aepe, 0.0);
  for (std::size_t i = 1; i < zero.pck.size(); ++i) EXPECT_GE(zero.pck[i], zero.pck[i - 1]);
}
