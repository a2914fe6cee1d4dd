#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "partdrag/curation.hpp"
#include "partdrag/toyworld.hpp"

using namespace partdrag;

namespace {

Camera ortho(double x0, double y0, double w, double h, Resolution res) {
  Camera c;
  c.model = OrthographicCamera{x0, y0, w, h};
  c.resolution = res;
  return c;
}

// Points given as per-timestep lists.
MotionClip clip_of(const std::vector<std::vector<std::array<double, 3>>>& steps) {
  MotionClip c(static_cast<int>(steps.size()), static_cast<int>(steps[0].size()));
  for (int t = 0; t < c.timesteps; ++t)
    for (int p = 0; p < c.points; ++p)
      for (int a = 0; a < 3; ++a) c.at(t, p, a) = steps[t][p][a];
  return c;
}

Drag drag_at(std::vector<Pixel> track) { return Drag{track.front(), std::move(track)}; }

std::string temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("partdrag_cur_" + name);
  std::filesystem::remove_all(dir);
  return dir.string();
}

}  // namespace

TEST(Projection, OrthographicCentre) {
  for (const Resolution res : {Resolution{64, 64}, Resolution{256, 128}}) {
    const Camera cam = ortho(0, 0, 1, 1, res);
    const Projection p = project(cam, 0.5, 0.5, 3.0);
    EXPECT_DOUBLE_EQ(p.h, res.height / 2.0);
    EXPECT_DOUBLE_EQ(p.w, res.width / 2.0);
    EXPECT_DOUBLE_EQ(p.depth, 3.0);
    EXPECT_EQ(to_pixel(p, res), (Pixel{res.height / 2, res.width / 2}));
  }
}

TEST(Projection, OrthographicYPointsUp) {
  const Camera cam = ortho(-1, -1, 2, 2, {64, 64});
  EXPECT_DOUBLE_EQ(project(cam, -1, 1, 0).h, 0.0);
  EXPECT_DOUBLE_EQ(project(cam, -1, -1, 0).h, 64.0);
  EXPECT_EQ(to_pixel(project(cam, 1, -1, 0), {64, 64}), (Pixel{63, 63}));
}

TEST(Projection, PinholeFollowsIntrinsics) {
  Camera cam;
  PinholeCamera p;
  p.fx = 100;
  p.fy = 80;
  p.cx = 32;
  p.cy = 24;
  p.translation = {0, 0, 2};
  cam.model = p;
  cam.resolution = {48, 64};
  const Projection a = project(cam, 0.2, -0.1, 0);
  EXPECT_DOUBLE_EQ(a.w, 100 * 0.2 / 2 + 32);
  EXPECT_DOUBLE_EQ(a.h, 80 * -0.1 / 2 + 24);
  EXPECT_DOUBLE_EQ(a.depth, 2);
  EXPECT_TRUE(a.valid);
  EXPECT_FALSE(project(cam, 0, 0, -3).valid);
}

TEST(Projection, CameraJsonRoundTrip) {
  Camera a = ortho(-2.5, -2.5, 5, 5, {64, 32});
  const Camera a2 = camera_from_json_text(camera_to_json_text(a));
  const auto& o = std::get<OrthographicCamera>(a2.model);
  EXPECT_EQ(o.x0, -2.5);
  EXPECT_EQ(o.width, 5);
  EXPECT_EQ(a2.resolution, (Resolution{64, 32}));
  Camera b;
  PinholeCamera p;
  p.fx = 3;
  p.rotation = {0, 1, 0, -1, 0, 0, 0, 0, 1};
  p.translation = {1, 2, 3};
  b.model = p;
  const auto& q = std::get<PinholeCamera>(camera_from_json_text(camera_to_json_text(b)).model);
  EXPECT_EQ(q.rotation, p.rotation);
  EXPECT_EQ(q.translation, p.translation);
  EXPECT_THROW(camera_from_json_text(R"({"type": "fisheye", "height": 8, "width": 8})"), ValidationError);
}

TEST(MotionMetrics, StaticClip) {
  const MotionClip c = clip_of({{{0, 0, 0}, {1, 2, 3}}, {{0, 0, 0}, {1, 2, 3}}});
  const MotionMetrics m = compute_motion_metrics(c);
  EXPECT_EQ(m.mean_displacement, 0);
  EXPECT_EQ(m.max_displacement, 0);
  EXPECT_EQ(m.bbox_dims, (std::array<double, 3>{1, 2, 3}));
  EXPECT_DOUBLE_EQ(m.largest_bbox, std::sqrt(14.0));
}

TEST(MotionMetrics, HandGeometry) {
  const MotionClip c = clip_of({{{0, 0, 0}}, {{1, 0, 0}}, {{2, 0, 0}}});
  const MotionMetrics m = compute_motion_metrics(c);
  EXPECT_DOUBLE_EQ(m.mean_displacement, 2);
  EXPECT_DOUBLE_EQ(m.max_displacement, 2);
  EXPECT_EQ(m.bbox_dims, (std::array<double, 3>{2, 0, 0}));
  EXPECT_EQ(m.bbox_center, (std::array<double, 3>{1, 0, 0}));
  EXPECT_EQ(m.largest_bbox, 0);
}

TEST(MotionMetrics, PathLengthCountsOscillation) {
  const MotionClip c = clip_of({{{0, 0, 0}, {5, 5, 5}}, {{3, 4, 0}, {5, 5, 5}}, {{0, 0, 0}, {5, 5, 5}}});
  const std::vector<double> d = total_displacements(c);
  EXPECT_DOUBLE_EQ(d[0], 10);
  EXPECT_DOUBLE_EQ(d[1], 0);
  const MotionMetrics m = compute_motion_metrics(c);
  EXPECT_DOUBLE_EQ(m.mean_displacement, 5);
  EXPECT_DOUBLE_EQ(m.max_displacement, 10);
}

TEST(MotionMetrics, RigidTranslationGivesEqualMeanAndMax) {
  std::vector<std::vector<std::array<double, 3>>> steps(4);
  for (int t = 0; t < 4; ++t)
    for (int p = 0; p < 5; ++p) steps[t].push_back({p * 0.3 + 0.7 * t, p * p * 0.1, -p + 0.0});
  const MotionMetrics m = compute_motion_metrics(clip_of(steps));
  EXPECT_NEAR(m.mean_displacement, m.max_displacement, 1e-12);
  EXPECT_NEAR(m.max_displacement, 2.1, 1e-12);
}

TEST(MotionMetrics, ReorderInvariantTranslationEquivariant) {
  const MotionClip c = synthetic_clip(ClipKind::Articulated, 3, 8, 60);
  const MotionMetrics m = compute_motion_metrics(c);
  MotionClip r(c.timesteps, c.points), s = c;
  for (int t = 0; t < c.timesteps; ++t)
    for (int p = 0; p < c.points; ++p)
      for (int a = 0; a < 3; ++a) {
        r.at(t, p, a) = c.at(t, c.points - 1 - p, a);
        s.at(t, p, a) += a == 0 ? 1.5 : (a == 1 ? -2.0 : 0.25);
      }
  const MotionMetrics mr = compute_motion_metrics(r), ms = compute_motion_metrics(s);
  for (int a = 0; a < 3; ++a) {
    EXPECT_NEAR(mr.bbox_dims[a], m.bbox_dims[a], 1e-12);
    EXPECT_NEAR(ms.bbox_dims[a], m.bbox_dims[a], 1e-9);
  }
  EXPECT_NEAR(mr.mean_displacement, m.mean_displacement, 1e-12);
  EXPECT_NEAR(ms.mean_displacement, m.mean_displacement, 1e-9);
  EXPECT_NEAR(ms.max_displacement, m.max_displacement, 1e-9);
  EXPECT_NEAR(ms.largest_bbox, m.largest_bbox, 1e-9);
  EXPECT_NEAR(ms.bbox_center[0], m.bbox_center[0] + 1.5, 1e-9);
  EXPECT_NEAR(ms.bbox_center[1], m.bbox_center[1] - 2.0, 1e-9);
  EXPECT_NEAR(ms.bbox_center[2], m.bbox_center[2] + 0.25, 1e-9);
  EXPECT_EQ(static_cast<int>(m.features().size()), kMotionFeatureCount);
}

TEST(MotionMetrics, TooFewTimesteps) {
  EXPECT_THROW(compute_motion_metrics(clip_of({{{0, 0, 0}}})), ValidationError);
}

TEST(Forest, SeparableOneDimensional) {
  std::vector<std::vector<double>> rows;
  std::vector<bool> labels;
  for (int i = 0; i < 40; ++i) {
    rows.push_back({static_cast<double>(i)});
    labels.push_back(i >= 17);
  }
  ForestConfig cfg;
  cfg.trees = 16;
  const FilterModel m = train_forest(rows, labels, cfg);
  EXPECT_DOUBLE_EQ(m.training_accuracy, 1.0);
  EXPECT_FALSE(m.keep(std::vector<double>{3.0}));
  EXPECT_TRUE(m.keep(std::vector<double>{30.0}));
}

TEST(Forest, ContradictoryDuplicatesCannotBothBeRight) {
  std::vector<std::vector<double>> rows{{0.0}, {0.0}, {1.0}, {1.0}, {5.0}, {6.0}};
  std::vector<bool> labels{true, false, true, false, true, false};
  const FilterModel m = train_forest(rows, labels, ForestConfig{});
  for (int pair = 0; pair < 2; ++pair) {
    int right = 0;
    for (int i = 2 * pair; i < 2 * pair + 2; ++i) right += m.keep(rows[i]) == labels[i] ? 1 : 0;
    EXPECT_LE(right / 2.0, 0.5);
  }
  EXPECT_LE(m.training_accuracy, 4.0 / 6.0 + 1e-12);
}

TEST(Forest, RejectsDegenerateInput) {
  EXPECT_THROW(train_forest({{0.0}, {1.0}}, {true, true}, ForestConfig{}), ValidationError);
  EXPECT_THROW(train_forest({{0.0}, {1.0}, {2.0}}, {true, false, false}, ForestConfig{}), ValidationError);
  EXPECT_THROW(train_forest({{0.0}, {1.0, 2.0}}, {true, false}, ForestConfig{}), ValidationError);
}

TEST(Forest, SerializedModelPredictsIdentically) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0, 1);
  std::vector<std::vector<double>> rows;
  std::vector<bool> labels;
  for (int i = 0; i < 100; ++i) {
    const double a = g(rng), b = g(rng), c = g(rng);
    rows.push_back({a, b, c});
    labels.push_back(a + 0.5 * b > 0);
  }
  ForestConfig cfg;
  cfg.seed = 9;
  const FilterModel m = train_forest(rows, labels, cfg);
  const FilterModel back = FilterModel::from_json_text(m.to_json_text());
  EXPECT_EQ(back.trees.size(), m.trees.size());
  for (int i = 0; i < 200; ++i) {
    const std::vector<double> x{g(rng), g(rng), g(rng)};
    EXPECT_EQ(back.keep_probability(x), m.keep_probability(x));
  }
  const FilterModel again = train_forest(rows, labels, cfg);
  EXPECT_EQ(again.to_json_text(), m.to_json_text());
  for (const auto& t : m.trees) EXPECT_LE(t.depth(), cfg.max_depth);
}

TEST(Forest, FilterSeparatesSyntheticClips) {
  std::vector<std::pair<MotionMetrics, bool>> train, held;
  for (int i = 0; i < 90; ++i) {
    const auto kind = static_cast<ClipKind>(i % 3);
    (i < 60 ? train : held).emplace_back(compute_motion_metrics(synthetic_clip(kind, 1000 + i)),
                                         construction_label(kind));
  }
  const FilterModel m = train_filter(train, ForestConfig{});
  int correct = 0;
  for (const auto& [x, y] : held) correct += m.keep(x) == y ? 1 : 0;
  EXPECT_GE(correct, 27);
}

TEST(ReviewParser, NormalizesCaseAndPunctuation) {
  EXPECT_EQ(parse_review_reply("No"), ReviewVerdict::Keep);
  EXPECT_EQ(parse_review_reply("no."), ReviewVerdict::Keep);
  EXPECT_EQ(parse_review_reply("Yes"), ReviewVerdict::Discard);
  EXPECT_EQ(parse_review_reply("yes."), ReviewVerdict::Discard);
  EXPECT_EQ(parse_review_reply("  YES!\n"), ReviewVerdict::Discard);
  EXPECT_EQ(parse_review_reply("\"No\""), ReviewVerdict::Keep);
  EXPECT_THROW(parse_review_reply("Maybe"), MalformedReplyError);
  EXPECT_THROW(parse_review_reply(""), MalformedReplyError);
  EXPECT_THROW(parse_review_reply("Yes no"), MalformedReplyError);
}

TEST(ReviewPrompt, AsksForASingleYesOrNo) {
  const ReviewPrompt& p = realism_prompt();
  EXPECT_EQ(p.system.rfind("You are a 3D artist", 0), 0u);
  EXPECT_NE(p.system.find("7) have motion that is very chaotic"), std::string::npos);
  EXPECT_NE(p.user.find("frame1, frame2, frame3, frame4"), std::string::npos);
  EXPECT_NE(p.user.find("'Yes' or 'No'"), std::string::npos);
}

TEST(Review, MockClientKeepsOnNo) {
  const MotionClip clip = synthetic_clip(ClipKind::Articulated, 1);
  MockReviewClient no("No"), yes("Yes.");
  EXPECT_EQ(review_clip(clip, *clip.camera, no), ReviewVerdict::Keep);
  EXPECT_EQ(no.calls(), 1);
  EXPECT_EQ(no.last_prompt().user, realism_prompt().user);
  EXPECT_EQ(review_clip(clip, *clip.camera, yes), ReviewVerdict::Discard);
  MockReviewClient maybe("Maybe");
  EXPECT_THROW(review_clip(clip, *clip.camera, maybe), MalformedReplyError);
}

TEST(Review, NeedsExactlyFourRenders) {
  MockReviewClient c;
  EXPECT_THROW(realism_review_request(std::vector<Video>(3, Video(1, 8, 8, 3)), c), ValidationError);
  EXPECT_EQ(realism_review_request(std::vector<Video>(4, Video(1, 8, 8, 3)), c), ReviewVerdict::Keep);
}

TEST(Review, QuarterTimesteps) {
  EXPECT_EQ(quarter_timesteps(16), (std::array<int, 4>{0, 5, 10, 15}));
  EXPECT_EQ(quarter_timesteps(4), (std::array<int, 4>{0, 1, 2, 3}));
  EXPECT_EQ(quarter_timesteps(2), (std::array<int, 4>{0, 0, 1, 1}));
}

TEST(Review, RenderShowsPoints) {
  const MotionClip clip = synthetic_clip(ClipKind::Static, 2);
  const Video v = render_clip(clip, *clip.camera, 0);
  EXPECT_EQ(v.frames, 1);
  EXPECT_EQ(v.resolution(), clip.camera->resolution);
  const float bg = v.values[0];
  int painted = 0;
  for (int h = 0; h < v.height; ++h)
    for (int w = 0; w < v.width; ++w) painted += v.at(0, h, w, 0) != bg ? 1 : 0;
  EXPECT_GT(painted, 20);
}

TEST(HttpReview, RequestBodyCarriesPromptAndImages) {
  HttpReviewClient c(HttpReviewOptions{});
  const auto body = nlohmann::json::parse(c.request_body(realism_prompt(), {{1, 2, 3}, {4}, {5}, {6}}));
  EXPECT_EQ(body["messages"][0]["content"], realism_prompt().system);
  const auto& content = body["messages"][1]["content"];
  ASSERT_EQ(content.size(), 5u);
  EXPECT_EQ(content[0]["text"], realism_prompt().user);
  EXPECT_EQ(content[1]["image_url"]["url"], "data:image/png;base64,AQID");
}

TEST(HttpReview, RetriesTransientFailuresAgainstLocalStub) {
  httplib::Server stub;
  std::atomic<int> calls{0};
  std::string auth;
  stub.Post("/v1/chat", [&](const httplib::Request& req, httplib::Response& res) {
    auth = req.get_header_value("Authorization");
    if (calls++ < 2) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"choices": [{"message": {"content": "Yes."}}]})", "application/json");
  });
  const int port = stub.bind_to_any_port("127.0.0.1");
  std::thread server([&] { stub.listen_after_bind(); });
  stub.wait_until_ready();

  ::setenv("PARTDRAG_TEST_REVIEW_TOKEN", "secret", 1);
  HttpReviewOptions o;
  o.url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat";
  o.token_env = "PARTDRAG_TEST_REVIEW_TOKEN";
  o.initial_backoff = std::chrono::milliseconds(5);
  HttpReviewClient client(o);
  const MotionClip clip = synthetic_clip(ClipKind::Articulated, 4);
  EXPECT_EQ(review_clip(clip, *clip.camera, client), ReviewVerdict::Discard);
  EXPECT_EQ(calls.load(), 3);
  EXPECT_EQ(auth, "Bearer secret");

  o.max_attempts = 1;
  calls = 0;
  HttpReviewClient impatient(o);
  EXPECT_THROW(review_clip(clip, *clip.camera, impatient), Error);
  stub.stop();
  server.join();
}

TEST(HttpReview, MissingTokenFailsWithoutNetwork) {
  HttpReviewOptions o;
  o.token_env = "PARTDRAG_TEST_UNSET_TOKEN";
  ::unsetenv(o.token_env.c_str());
  HttpReviewClient c(o);
  EXPECT_THROW(c.complete(realism_prompt(), {}), Error);
}

TEST(Dedup, TwoIdenticalDragsLeaveOne) {
  DragSet s;
  s.drags = {drag_at({{1, 1}, {5, 5}}), drag_at({{1, 1}, {5, 5}})};
  std::mt19937_64 rng(0);
  EXPECT_EQ(dedup_drags(s, 0.0, rng).size(), 1);
}

TEST(Dedup, FarApartSetUnchanged) {
  DragSet s;
  s.drags = {drag_at({{1, 1}, {5, 5}}), drag_at({{20, 20}, {25, 25}}), drag_at({{1, 40}, {5, 45}})};
  std::mt19937_64 rng(0);
  EXPECT_EQ(dedup_drags(s, 10.0, rng), s);
}

TEST(Dedup, ThreeMutuallyViolatingLeaveExactlyOne) {
  DragSet s;
  s.drags = {drag_at({{10, 10}, {10, 10}}), drag_at({{10, 11}, {11, 10}}), drag_at({{11, 10}, {10, 11}})};
  // Pairwise squared distances are 2, 2 and 4.
  std::map<Pixel, int> survivors;
  for (std::uint64_t seed = 0; seed < 600; ++seed) {
    std::mt19937_64 rng(seed);
    const DragSet out = dedup_drags(s, 4.0, rng);
    ASSERT_EQ(out.size(), 1);
    ++survivors[out.drags[0].trajectory[1]];
  }
  // Any of the three can survive.
  EXPECT_EQ(survivors.size(), 3u);
}

TEST(Dedup, PostConditionHoldsExhaustively) {
  std::mt19937_64 gen(7);
  std::uniform_int_distribution<int> coord(0, 5);
  for (int trial = 0; trial < 500; ++trial) {
    DragSet s;
    const int k = 2 + trial % 4;
    for (int i = 0; i < k; ++i) {
      std::vector<Pixel> t;
      for (int n = 0; n < 3; ++n) t.push_back({coord(gen), coord(gen)});
      s.drags.push_back(drag_at(t));
    }
    const double delta = static_cast<double>(trial % 13);
    const DragSet out = dedup_drags(s, delta, gen);
    ASSERT_GE(out.size(), 1);
    for (int i = 0; i < out.size(); ++i)
      for (int j = i + 1; j < out.size(); ++j) ASSERT_GT(trajectory_distance2(out.drags[i], out.drags[j]), delta);
    // Survivors are a sub-multiset of the input, in input order.
    std::size_t cursor = 0;
    for (const Drag& d : out.drags) {
      while (cursor < s.drags.size() && !(s.drags[cursor] == d)) ++cursor;
      ASSERT_LT(cursor, s.drags.size());
      ++cursor;
    }
  }
}

TEST(Dedup, DefaultDeltaScalesWithArea) {
  EXPECT_DOUBLE_EQ(default_dedup_delta({256, 256}, 14), 280.0);
  EXPECT_DOUBLE_EQ(default_dedup_delta({128, 128}, 14), 70.0);
  EXPECT_DOUBLE_EQ(default_dedup_delta({32, 32}, 4), 80.0 / 64.0);
}

TEST(SampleDrags, SelectionFrequenciesFollowDisplacement) {
  // Two visible movers with path lengths 1 and 3 plus a static point.
  const MotionClip clip = clip_of({{{2, 2, 0}, {7, 7, 0}, {5, 2, 0}},
                                   {{2.5, 2, 0}, {8.5, 7, 0}, {5, 2, 0}},
                                   {{3, 2, 0}, {10, 7, 0}, {5, 2, 0}}});
  const Camera cam = ortho(0, 0, 12, 12, {64, 64});
  DragSamplingPolicy policy;
  policy.count = 1;
  std::mt19937_64 rng(123);
  const Pixel a = to_pixel(project(cam, 2, 2, 0), cam.resolution);
  const Pixel b = to_pixel(project(cam, 7, 7, 0), cam.resolution);
  int na = 0, nb = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const DragSet s = sample_drags(clip, cam, policy, rng);
    ASSERT_EQ(s.size(), 1);
    if (s.drags[0].origin == a) ++na;
    if (s.drags[0].origin == b) ++nb;
  }
  ASSERT_EQ(na + nb, draws);
  const double ea = 0.25 * draws, eb = 0.75 * draws;
  const double chi2 = (na - ea) * (na - ea) / ea + (nb - eb) * (nb - eb) / eb;
  EXPECT_LT(chi2, 6.635);  // p > 0.01 with one degree of freedom
  EXPECT_NEAR(static_cast<double>(na) / draws, 0.25, 0.03);
}

TEST(SampleDrags, SingleMoverAlwaysChosen) {
  const MotionClip clip = clip_of({{{1, 1, 0}, {4, 4, 0}, {8, 8, 0}}, {{1, 1, 0}, {5, 4, 0}, {8, 8, 0}}});
  const Camera cam = ortho(0, 0, 10, 10, {64, 64});
  const Pixel mover = to_pixel(project(cam, 4, 4, 0), cam.resolution);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    const DragSet s = sample_drags(clip, cam, DragSamplingPolicy{}, rng);
    ASSERT_EQ(s.size(), 1);
    EXPECT_EQ(s.drags[0].origin, mover);
    EXPECT_EQ(s.drags[0].terminus(), to_pixel(project(cam, 5, 4, 0), cam.resolution));
  }
}

TEST(SampleDrags, OccludedPointsAreNotCandidates) {
  // The mover sits behind a static point at the same image location.
  const MotionClip clip = clip_of({{{4, 4, 5}, {4, 4, 1}, {8, 8, 0}}, {{5, 4, 5}, {4, 4, 1}, {8, 9, 0}}});
  const Camera cam = ortho(0, 0, 10, 10, {64, 64});
  const auto vis = visible_points(clip, cam, 0, 1);
  EXPECT_FALSE(vis[0]);
  EXPECT_TRUE(vis[1]);
  EXPECT_TRUE(vis[2]);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const DragSet s = sample_drags(clip, cam, DragSamplingPolicy{}, rng);
    for (const Drag& d : s.drags) EXPECT_EQ(d.origin, to_pixel(project(cam, 8, 8, 0), cam.resolution));
  }
}

TEST(SampleDrags, NoVisibleMoverIsAnError) {
  const MotionClip clip = clip_of({{{1, 1, 0}}, {{1, 1, 0}}});
  std::mt19937_64 rng(0);
  EXPECT_THROW(sample_drags(clip, ortho(0, 0, 2, 2, {16, 16}), DragSamplingPolicy{}, rng), ValidationError);
}

TEST(SampleDrags, OneDragPerMovingSubmodelAndAlwaysValid) {
  std::mt19937_64 rng(2);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const MotionClip clip = synthetic_clip(ClipKind::Articulated, seed);
    DragSamplingPolicy policy;
    policy.frames = 4;
    const DragSet s = sample_drags(clip, *clip.camera, policy, rng);
    std::set<int> moving_slabs;
    for (int p = 0; p < clip.points; ++p)
      if (clip.submodels[p] > 0) moving_slabs.insert(clip.submodels[p]);
    EXPECT_GE(s.size(), 1);
    EXPECT_LE(s.size(), static_cast<int>(moving_slabs.size()));
    EXPECT_NO_THROW(validate_drag_set(s, clip.camera->resolution, 4));
  }
}

TEST(SampleDrags, FrameResamplingUsesRoundedTimesteps) {
  std::vector<std::vector<std::array<double, 3>>> steps;
  for (int t = 0; t < 7; ++t) steps.push_back({{static_cast<double>(t), 0.5, 0}});
  const MotionClip clip = clip_of(steps);
  const Camera cam = ortho(0, 0, 8, 8, {8, 8});
  DragSamplingPolicy policy;
  policy.frames = 3;
  std::mt19937_64 rng(0);
  const DragSet s = sample_drags(clip, cam, policy, rng);
  ASSERT_EQ(s.size(), 1);
  EXPECT_EQ(s.drags[0].trajectory, (std::vector<Pixel>{{7, 0}, {7, 3}, {7, 6}}));
}

TEST(ClipIo, RoundTrip) {
  const MotionClip c = synthetic_clip(ClipKind::Translation, 6, 5, 20);
  const std::string dir = temp_dir("clip");
  write_clip_dir(dir, c);
  const MotionClip back = read_clip_dir(dir);
  EXPECT_EQ(back.timesteps, 5);
  EXPECT_EQ(back.points, 20);
  EXPECT_EQ(back.submodels, c.submodels);
  ASSERT_TRUE(back.camera.has_value());
  for (std::size_t i = 0; i < c.positions.size(); ++i) EXPECT_NEAR(back.positions[i], c.positions[i], 1e-12);
  std::filesystem::remove(dir + "/positions.txt");
  EXPECT_THROW(read_clip_dir(dir), Error);
}
