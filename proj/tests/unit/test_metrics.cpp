#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "partdrag/metrics.hpp"
#include "partdrag/toyworld.hpp"

using namespace partdrag;

namespace {

Video random_video(std::mt19937_64& rng, int n, int h, int w) {
  Video v(n, h, w, 3);
  std::uniform_real_distribution<float> u(-1, 1);
  for (auto& x : v.values) x = u(rng);
  return v;
}

LabelImage square_mask(Resolution res, int top, int left, int side, int label = 1) {
  LabelImage m{res.height, res.width, std::vector<std::uint8_t>(static_cast<std::size_t>(res.height) * res.width)};
  for (int h = top; h < top + side; ++h)
    for (int w = left; w < left + side; ++w) m.labels[static_cast<std::size_t>(h) * res.width + w] = label;
  return m;
}

DragSet one_drag(Pixel u, Pixel v, int frames) {
  DragSet s;
  s.drags.push_back(Drag::straight(u, v, frames));
  return s;
}

}  // namespace

TEST(Psnr, IdenticalIsInfinite) {
  std::mt19937_64 rng(1);
  const Video a = random_video(rng, 2, 8, 8);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  EXPECT_GT(psnr(a, a), 0);
}

TEST(Psnr, ConstantOffsetClosedForm) {
  // 20 log10(1 / 0.5) on unit-range data, and the same ratio on [-1, 1] data with peak 2.
  Video a(2, 8, 8, 3, 0.1f), b(2, 8, 8, 3, 0.6f);
  EXPECT_NEAR(psnr(a, b, 1.0), 6.0206, 1e-3);
  Video c(2, 8, 8, 3, -0.5f), d(2, 8, 8, 3, 0.5f);
  EXPECT_NEAR(psnr(c, d), 6.0206, 1e-3);
  EXPECT_NEAR(psnr(c, d), 20 * std::log10(2.0), 1e-4);
}

TEST(Psnr, SymmetricAndShapeChecked) {
  std::mt19937_64 rng(2);
  const Video a = random_video(rng, 1, 8, 8), b = random_video(rng, 1, 8, 8);
  EXPECT_DOUBLE_EQ(psnr(a, b), psnr(b, a));
  EXPECT_THROW(psnr(a, random_video(rng, 1, 8, 9)), ValidationError);
}

TEST(Ssim, IdenticalIsOne) {
  std::mt19937_64 rng(3);
  const Video a = random_video(rng, 2, 16, 16);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, AnticorrelatedIsNegative) {
  // A checkerboard is zero-mean inside every window, unlike white noise.
  Video a(1, 16, 16, 3);
  for (int h = 0; h < 16; ++h)
    for (int w = 0; w < 16; ++w)
      for (int c = 0; c < 3; ++c) a.at(0, h, w, c) = (h + w) % 2 ? 0.5f : -0.5f;
  Video b = a;
  for (auto& x : b.values) x = -x;
  EXPECT_LT(ssim(a, b), 0);
}

TEST(Ssim, MatchesFrozenScikitImageValues) {
  std::ifstream in(std::string(PARTDRAG_TEST_DATA) + "/ssim_cases.json");
  ASSERT_TRUE(in) << "missing oracle data";
  const auto j = nlohmann::json::parse(in);
  ASSERT_EQ(j["cases"].size(), 10u);
  for (const auto& c : j["cases"]) {
    const auto shape = c["shape"].get<std::vector<int>>();
    Video a(shape[0], shape[1], shape[2], shape[3]), b = a;
    a.values = c["a"].get<std::vector<float>>();
    b.values = c["b"].get<std::vector<float>>();
    EXPECT_NEAR(ssim(a, b), c["ssim"].get<double>(), 1e-4);
  }
}

TEST(Ssim, SmallFramesUseShrunkWindow) {
  std::mt19937_64 rng(5);
  const Video a = random_video(rng, 1, 8, 8);
  Video b = a;
  b.values[0] += 0.5f;
  const double s = ssim(a, b);
  EXPECT_TRUE(std::isfinite(s));
  EXPECT_LT(s, 1.0);
}

TEST(FlowError, HandCases) {
  TrajectorySet gt, pred;
  gt.frames = pred.frames = 2;
  gt.add(0, PointRole::Origin, std::vector<std::array<double, 2>>{{5, 5}, {6, 6}});
  pred.add(0, PointRole::Origin, std::vector<std::array<double, 2>>{{6, 5}, {6, 8}});
  EXPECT_NEAR(flow_error(pred, gt, FlowMode::Foreground), std::sqrt(2.5), 1e-6);
  EXPECT_NEAR(flow_error(pred, gt, FlowMode::Origins), 1.5811388, 1e-6);
  EXPECT_EQ(flow_error(gt, gt, FlowMode::Foreground), 0.0);
}

TEST(FlowError, UniformOffsetIsFive) {
  std::mt19937_64 rng(6);
  TrajectorySet gt, pred;
  gt.frames = pred.frames = 4;
  for (int id = 0; id < 10; ++id) {
    std::vector<std::array<double, 2>> a, b;
    for (int n = 0; n < 4; ++n) {
      const double h = static_cast<double>(rng() % 20), w = static_cast<double>(rng() % 20);
      a.push_back({h, w});
      b.push_back({h + 3, w + 4});
    }
    gt.add(id, id < 3 ? PointRole::Origin : PointRole::Foreground, a);
    pred.add(id, id < 3 ? PointRole::Origin : PointRole::Foreground, b);
  }
  EXPECT_NEAR(flow_error(pred, gt, FlowMode::Foreground), 5.0, 1e-6);
  EXPECT_NEAR(flow_error(pred, gt, FlowMode::Origins), 5.0, 1e-6);
}

TEST(FlowError, OriginsSubsetAndPermutationInvariance) {
  std::mt19937_64 rng(7);
  TrajectorySet gt, pred, shuffled;
  gt.frames = pred.frames = shuffled.frames = 3;
  std::vector<std::pair<std::vector<std::array<double, 2>>, std::vector<std::array<double, 2>>>> rows;
  for (int id = 0; id < 6; ++id) {
    std::vector<std::array<double, 2>> a, b;
    for (int n = 0; n < 3; ++n) {
      a.push_back({static_cast<double>(rng() % 30), static_cast<double>(rng() % 30)});
      b.push_back({static_cast<double>(rng() % 30), static_cast<double>(rng() % 30)});
    }
    gt.add(id, PointRole::Origin, a);
    pred.add(id, PointRole::Origin, b);
    rows.emplace_back(a, b);
  }
  EXPECT_DOUBLE_EQ(flow_error(pred, gt, FlowMode::Origins), flow_error(pred, gt, FlowMode::Foreground));
  for (int id = 5; id >= 0; --id) shuffled.add(id, PointRole::Origin, rows[id].second);
  EXPECT_NEAR(flow_error(shuffled, gt, FlowMode::Foreground), flow_error(pred, gt, FlowMode::Foreground), 1e-12);
}

TEST(FlowError, IdentityMismatchRejected) {
  TrajectorySet a, b;
  a.frames = b.frames = 1;
  a.add(0, PointRole::Origin, std::vector<std::array<double, 2>>{{1, 1}});
  b.add(1, PointRole::Origin, std::vector<std::array<double, 2>>{{1, 1}});
  EXPECT_THROW(flow_error(a, b, FlowMode::Foreground), ValidationError);
  TrajectorySet c;
  c.frames = 1;
  c.add(0, PointRole::Foreground, std::vector<std::array<double, 2>>{{1, 1}});
  EXPECT_THROW(flow_error(a, c, FlowMode::Foreground), ValidationError);
  EXPECT_THROW(flow_error(c, c, FlowMode::Origins), ValidationError);
}

TEST(Trajectories, JsonRoundTripAndValidation) {
  TrajectorySet t;
  t.frames = 2;
  t.add(3, PointRole::Origin, std::vector<Pixel>{{1, 2}, {3, 4}});
  t.add(9, PointRole::Foreground, std::vector<std::array<double, 2>>{{0.5, 1.25}, {7, 7}});
  const TrajectorySet back = trajectories_from_json_text(trajectories_to_json_text(t));
  EXPECT_EQ(back.ids, t.ids);
  EXPECT_EQ(back.roles, t.roles);
  EXPECT_EQ(back.coords, t.coords);
  EXPECT_NO_THROW(t.validate({8, 8}));
  EXPECT_THROW(t.validate({5, 8}), ValidationError);
  t.add(3, PointRole::Origin, std::vector<Pixel>{{1, 2}, {3, 4}});
  EXPECT_THROW(t.validate({8, 8}), ValidationError);
}

TEST(DirectionAccuracy, DotProductSignAtEightyNineAndNinetyOneDegrees) {
  // Drag along +w. The part moves 57 rows and one column with or against the drag,
  // 89.0 and 91.0 degrees away from it.
  const Resolution res{128, 128};
  const DragSet drags = one_drag({22, 22}, {22, 122}, 2);
  const LabelImage start = square_mask(res, 20, 20, 5);
  const auto at_89 = direction_accuracy({start, square_mask(res, 77, 21, 5)}, drags, start);
  const auto at_91 = direction_accuracy({start, square_mask(res, 77, 19, 5)}, drags, start);
  EXPECT_NEAR(std::atan2(57.0, 1.0) * 180 / 3.14159265358979, 88.995, 1e-3);
  EXPECT_EQ(at_89.correct, 1);
  EXPECT_EQ(at_91.correct, 0);
  EXPECT_EQ(at_91.total, 1);
}

TEST(DirectionAccuracy, GroundTruthAndTimeReversal) {
  int correct = 0, reversed = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SceneRender r = generate_scene(seed, {32, 32}, 4);
    std::mt19937_64 rng(seed);
    const DragSet drags = make_training_triplet(r, rng).drags;
    const auto gt = direction_accuracy(r.masks, drags, r.masks[0]);
    std::vector<LabelImage> back(r.masks.rbegin(), r.masks.rend());
    const auto rev = direction_accuracy(back, drags, r.masks[0], true);
    correct += gt.correct;
    reversed += rev.correct;
    total += gt.total;
  }
  EXPECT_GT(total, 20);
  EXPECT_EQ(correct, total);
  EXPECT_EQ(reversed, 0);
}

TEST(DirectionAccuracy, EmptyMask) {
  const Resolution res{16, 16};
  const LabelImage start = square_mask(res, 2, 2, 4);
  const LabelImage empty = square_mask(res, 0, 0, 0);
  const DragSet drags = one_drag({3, 3}, {3, 10}, 2);
  EXPECT_THROW(direction_accuracy({start, empty}, drags, start), ValidationError);
  const auto r = direction_accuracy({start, empty}, drags, start, true);
  EXPECT_EQ(r.correct, 0);
  EXPECT_EQ(r.total, 1);
  EXPECT_THROW(direction_accuracy({start, start}, one_drag({12, 12}, {12, 14}, 2), start), ValidationError);
}

TEST(Tracker, SegmentationRecoversMasks) {
  const SceneRender r = generate_scene(3, {32, 32}, 4);
  const Palette p = estimate_palette(r.video, r.masks[0]);
  const auto seg = segment_video(r.video, p);
  for (int n = 0; n < 4; ++n) EXPECT_EQ(seg[n].labels, r.masks[n].labels);
}

TEST(Tracker, TranslationIsTrackedExactly) {
  // A square sliding four pixels right per frame.
  const Resolution res{32, 32};
  Video v(3, 32, 32, 3, 0.8f);
  std::vector<LabelImage> masks;
  for (int n = 0; n < 3; ++n) {
    masks.push_back(square_mask(res, 10, 4 + 4 * n, 6));
    for (int h = 10; h < 16; ++h)
      for (int w = 4 + 4 * n; w < 10 + 4 * n; ++w) {
        v.at(n, h, w, 0) = -0.9f;
        v.at(n, h, w, 1) = 0.1f;
      }
  }
  const Palette p = estimate_palette(v, masks[0]);
  const DragSet drags = one_drag({12, 5}, {12, 13}, 3);
  const auto seeds = make_track_seeds(drags, masks[0]);
  ASSERT_EQ(seeds.front().role, PointRole::Origin);
  EXPECT_EQ(static_cast<int>(seeds.size()), 1 + 36);
  const TrajectorySet t = track_points(v, p, seeds);
  for (int m = 0; m < t.size(); ++m)
    for (int n = 0; n < 3; ++n) {
      EXPECT_NEAR(t.h(m, n), t.h(m, 0), 1e-9);
      EXPECT_NEAR(t.w(m, n), t.w(m, 0) + 4 * n, 1e-9);
    }
}

TEST(Tracker, SeedsCapForeground) {
  const SceneRender r = generate_scene(8, {32, 32}, 4);
  const auto seeds = make_track_seeds(DragSet{}, r.masks[0], 50);
  EXPECT_LE(seeds.size(), 50u);
  EXPECT_GT(seeds.size(), 25u);
  for (const auto& s : seeds) EXPECT_GT(r.masks[0].at(s.origin.h, s.origin.w), 0);
}

TEST(EvaluateVideo, IdenticalVideosScorePerfectly) {
  const SceneRender r = generate_scene(9, {32, 32}, 4);
  std::mt19937_64 rng(9);
  const DragSet drags = make_training_triplet(r, rng).drags;
  const SampleEvaluation e = evaluate_video(r.video, r.video, drags, r.masks[0]);
  EXPECT_TRUE(std::isinf(e.psnr));
  EXPECT_NEAR(e.ssim, 1.0, 1e-12);
  EXPECT_EQ(e.flow_origins, 0.0);
  EXPECT_EQ(e.flow_foreground, 0.0);
  EXPECT_EQ(e.direction.correct, e.direction.total);
}

TEST(EvaluateVideo, StaticBaselineHasFlowError) {
  const SceneRender r = generate_scene(10, {32, 32}, 4);
  std::mt19937_64 rng(10);
  const DragSet drags = make_training_triplet(r, rng).drags;
  const SampleEvaluation e = evaluate_video(r.video.repeat_reference(4), r.video, drags, r.masks[0]);
  EXPECT_GT(e.flow_foreground, 0.0);
  EXPECT_GT(e.flow_origins, 0.0);
  EXPECT_EQ(e.direction.correct, 0);
}
