#include "partdrag/curation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "partdrag/image_io.hpp"
#include "partdrag/json_io.hpp"

namespace partdrag {

using nlohmann::json;

Projection project(const Camera& camera, double x, double y, double z) {
  const Resolution res = camera.resolution;
  if (const auto* o = std::get_if<OrthographicCamera>(&camera.model)) {
    return {(1.0 - (y - o->y0) / o->height) * res.height, (x - o->x0) / o->width * res.width, z, true};
  }
  const auto& p = std::get<PinholeCamera>(camera.model);
  const auto& R = p.rotation;
  const double xc = R[0] * x + R[1] * y + R[2] * z + p.translation[0];
  const double yc = R[3] * x + R[4] * y + R[5] * z + p.translation[1];
  const double zc = R[6] * x + R[7] * y + R[8] * z + p.translation[2];
  if (!(zc > 0)) return {0, 0, zc, false};
  return {p.fy * yc / zc + p.cy, p.fx * xc / zc + p.cx, zc, true};
}

Pixel to_pixel(const Projection& p, Resolution res) {
  auto cell = [](double v, int extent) {
    const double f = std::floor(v);
    if (!(f >= 0)) return 0;
    return f >= extent - 1 ? extent - 1 : static_cast<int>(f);
  };
  return {cell(p.h, res.height), cell(p.w, res.width)};
}

void MotionClip::validate() const {
  if (timesteps < 2) throw ValidationError("motion clip needs at least 2 timesteps");
  if (points < 1) throw ValidationError("motion clip needs at least 1 point");
  if (positions.size() != static_cast<std::size_t>(timesteps) * points * 3) {
    throw ValidationError("motion clip positions do not match T x P x 3");
  }
  if (!submodels.empty() && submodels.size() != static_cast<std::size_t>(points)) {
    throw ValidationError("sub-model ids must cover every point");
  }
  for (double v : positions) {
    if (!std::isfinite(v)) throw ValidationError("motion clip has non-finite coordinates");
  }
}

std::vector<double> total_displacements(const MotionClip& clip) {
  std::vector<double> d(clip.points, 0.0);
  for (int t = 1; t < clip.timesteps; ++t) {
    for (int p = 0; p < clip.points; ++p) {
      d[p] += std::hypot(clip.at(t, p, 0) - clip.at(t - 1, p, 0), clip.at(t, p, 1) - clip.at(t - 1, p, 1),
                         clip.at(t, p, 2) - clip.at(t - 1, p, 2));
    }
  }
  return d;
}

std::vector<double> MotionMetrics::features() const {
  const double union_diag = std::hypot(bbox_dims[0], bbox_dims[1], bbox_dims[2]);
  return {bbox_dims[0],
          bbox_dims[1],
          bbox_dims[2],
          bbox_center[0],
          bbox_center[1],
          bbox_center[2],
          largest_bbox,
          mean_displacement,
          max_displacement,
          max_displacement > 0 ? mean_displacement / max_displacement : 1.0,
          largest_bbox > 0 ? union_diag / largest_bbox : 1.0};
}

MotionMetrics compute_motion_metrics(const MotionClip& clip) {
  clip.validate();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::array<double, 3> lo{inf, inf, inf}, hi{-inf, -inf, -inf};
  MotionMetrics m;
  for (int t = 0; t < clip.timesteps; ++t) {
    std::array<double, 3> tlo{inf, inf, inf}, thi{-inf, -inf, -inf};
    for (int p = 0; p < clip.points; ++p) {
      for (int i = 0; i < 3; ++i) {
        tlo[i] = std::min(tlo[i], clip.at(t, p, i));
        thi[i] = std::max(thi[i], clip.at(t, p, i));
      }
    }
    m.largest_bbox = std::max(m.largest_bbox, std::hypot(thi[0] - tlo[0], thi[1] - tlo[1], thi[2] - tlo[2]));
    for (int i = 0; i < 3; ++i) {
      lo[i] = std::min(lo[i], tlo[i]);
      hi[i] = std::max(hi[i], thi[i]);
    }
  }
  for (int i = 0; i < 3; ++i) {
    m.bbox_dims[i] = hi[i] - lo[i];
    m.bbox_center[i] = 0.5 * (hi[i] + lo[i]);
  }
  const auto d = total_displacements(clip);
  m.mean_displacement = std::accumulate(d.begin(), d.end(), 0.0) / clip.points;
  m.max_displacement = *std::max_element(d.begin(), d.end());
  return m;
}

// ---------------------------------------------------------------------------
// Random forest

double DecisionTree::predict_probability(const std::vector<double>& x) const {
  int i = 0;
  while (nodes[i].feature >= 0) i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
  return nodes[i].keep_probability;
}

int DecisionTree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    best = std::max(best, d[i]);
    if (nodes[i].feature >= 0) d[nodes[i].left] = d[nodes[i].right] = d[i] + 1;
  }
  return best;
}

double FilterModel::keep_probability(const std::vector<double>& x) const {
  if (static_cast<int>(x.size()) != feature_count) throw ValidationError("feature vector has the wrong length");
  if (trees.empty()) throw ValidationError("filter model has no trees");
  int votes = 0;
  for (const auto& t : trees) votes += t.predict_probability(x) >= 0.5 ? 1 : 0;
  return static_cast<double>(votes) / trees.size();
}

namespace {

struct TreeBuilder {
  const std::vector<std::vector<double>>& rows;
  const std::vector<bool>& labels;
  const ForestConfig& config;
  int mtry;
  std::mt19937_64& rng;
  DecisionTree tree;

  static double gini(int pos, int n) {
    if (n == 0) return 0;
    const double p = static_cast<double>(pos) / n;
    return 2 * p * (1 - p);
  }

  int build(std::vector<int>& idx, int depth) {
    const int n = static_cast<int>(idx.size());
    int pos = 0;
    for (int i : idx) pos += labels[i] ? 1 : 0;
    const int node = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({-1, 0, -1, -1, n ? static_cast<double>(pos) / n : 0.5});
    if (pos == 0 || pos == n || depth >= config.max_depth || n < config.min_samples_split) return node;

    const int F = static_cast<int>(rows[0].size());
    std::vector<int> features(F);
    std::iota(features.begin(), features.end(), 0);
    std::shuffle(features.begin(), features.end(), rng);

    double best_score = gini(pos, n);
    int best_feature = -1;
    double best_threshold = 0;
    std::vector<std::pair<double, bool>> vals(n);
    for (int fi = 0; fi < mtry; ++fi) {
      const int f = features[fi];
      for (int i = 0; i < n; ++i) vals[i] = {rows[idx[i]][f], labels[idx[i]]};
      std::sort(vals.begin(), vals.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      int left_pos = 0;
      for (int i = 0; i + 1 < n; ++i) {
        left_pos += vals[i].second ? 1 : 0;
        if (vals[i].first == vals[i + 1].first) continue;
        const int nl = i + 1, nr = n - nl;
        const double score = (nl * gini(left_pos, nl) + nr * gini(pos - left_pos, nr)) / n;
        if (score < best_score - 1e-12) {
          best_score = score;
          best_feature = f;
          best_threshold = 0.5 * (vals[i].first + vals[i + 1].first);
        }
      }
    }
    if (best_feature < 0) return node;

    std::vector<int> left, right;
    for (int i : idx) (rows[i][best_feature] <= best_threshold ? left : right).push_back(i);
    tree.nodes[node].feature = best_feature;
    tree.nodes[node].threshold = best_threshold;
    const int l = build(left, depth + 1);
    const int r = build(right, depth + 1);
    tree.nodes[node].left = l;
    tree.nodes[node].right = r;
    return node;
  }
};

}  // namespace

FilterModel train_forest(const std::vector<std::vector<double>>& rows, const std::vector<bool>& labels,
                         const ForestConfig& config) {
  if (rows.size() != labels.size()) throw ValidationError("rows and labels differ in length");
  const auto pos = std::count(labels.begin(), labels.end(), true);
  const auto neg = static_cast<std::ptrdiff_t>(labels.size()) - pos;
  if (pos == 0 || neg == 0) throw ValidationError("filter training needs both keep and discard samples");
  if (pos < 2 || neg < 2) throw ValidationError("filter training needs at least two samples per class");
  if (config.trees < 1 || config.max_depth < 0) throw ValidationError("invalid forest configuration");
  const int F = static_cast<int>(rows[0].size());
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != F) throw ValidationError("feature rows differ in length");
  }

  FilterModel model;
  model.config = config;
  model.feature_count = F;
  const int mtry = config.features_per_split > 0
                       ? std::min(config.features_per_split, F)
                       : std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(F)))));
  std::mt19937_64 rng(config.seed);
  const int n = static_cast<int>(rows.size());
  std::uniform_int_distribution<int> pick(0, n - 1);
  for (int t = 0; t < config.trees; ++t) {
    std::vector<int> idx(n);
    for (int& i : idx) i = pick(rng);
    TreeBuilder b{rows, labels, config, mtry, rng, {}};
    b.build(idx, 0);
    model.trees.push_back(std::move(b.tree));
  }
  int correct = 0;
  for (int i = 0; i < n; ++i) correct += model.keep(rows[i]) == labels[i] ? 1 : 0;
  model.training_accuracy = static_cast<double>(correct) / n;
  return model;
}

FilterModel train_filter(const std::vector<std::pair<MotionMetrics, bool>>& samples, const ForestConfig& config) {
  std::vector<std::vector<double>> rows;
  std::vector<bool> labels;
  for (const auto& [m, keep] : samples) {
    rows.push_back(m.features());
    labels.push_back(keep);
  }
  return train_forest(rows, labels, config);
}

std::string FilterModel::to_json_text() const {
  json trees_j = json::array();
  for (const auto& t : trees) {
    json nodes = json::array();
    for (const auto& nd : t.nodes) nodes.push_back({nd.feature, nd.threshold, nd.left, nd.right, nd.keep_probability});
    trees_j.push_back(std::move(nodes));
  }
  return json{{"format", "partdrag-forest"},
              {"version", 1},
              {"config",
               {{"trees", config.trees},
                {"max_depth", config.max_depth},
                {"min_samples_split", config.min_samples_split},
                {"features_per_split", config.features_per_split},
                {"seed", config.seed}}},
              {"feature_count", feature_count},
              {"training_accuracy", training_accuracy},
              {"trees", trees_j}}
      .dump();
}

FilterModel FilterModel::from_json_text(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format") != "partdrag-forest") throw ValidationError("not a forest model");
    FilterModel m;
    const json& c = j.at("config");
    m.config.trees = c.at("trees").get<int>();
    m.config.max_depth = c.at("max_depth").get<int>();
    m.config.min_samples_split = c.at("min_samples_split").get<int>();
    m.config.features_per_split = c.at("features_per_split").get<int>();
    m.config.seed = c.at("seed").get<std::uint64_t>();
    m.feature_count = j.at("feature_count").get<int>();
    m.training_accuracy = j.at("training_accuracy").get<double>();
    for (const auto& tj : j.at("trees")) {
      DecisionTree t;
      for (const auto& nd : tj) {
        t.nodes.push_back({nd.at(0).get<int>(), nd.at(1).get<double>(), nd.at(2).get<int>(), nd.at(3).get<int>(),
                           nd.at(4).get<double>()});
      }
      const int count = static_cast<int>(t.nodes.size());
      for (const auto& nd : t.nodes) {
        if (nd.feature >= m.feature_count || (nd.feature >= 0 && (nd.left <= 0 || nd.right <= 0 ||
                                                                  nd.left >= count || nd.right >= count))) {
          throw ValidationError("forest model has a dangling node");
        }
      }
      if (t.nodes.empty()) throw ValidationError("forest model has an empty tree");
      m.trees.push_back(std::move(t));
    }
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed forest model: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Realism review

const ReviewPrompt& realism_prompt() {
  static const ReviewPrompt prompt{
      "You are a 3D artist, and now you are being shown some animation videos depicting an animated 3D asset. "
      "You are asked to filter out some animations. \n\n"
      "You should filter out the animations that:\n\n"
      "1) have trivial or no motion, i.e., the object is simply scaling, rotating, or moving as a whole without "
      "part-level dynamics;\n\n"
      "or 2) depict a scene and only a small component in the scene is moving;\n\n"
      "or 3) have motion that is imaginary, i.e., the motion is not the usual way of how the object moves and it's "
      "hard for humans to anticipate;\n\n"
      "or 4) have very large global motion so that the object exits the frame partially or fully in one of the "
      "frames;\n\n"
      "or 5) have changes in object color that are not due to lighting changes;\n\n"
      "or 6) have motion that causes different parts of the same object to disconnect, overlap in an unnatural way, "
      "or disappear;\n\n"
      "or 7) have motion that is very chaotic, for example objects exploding or bursting apart.",
      "For the following animation (as frames of a video), frame1, frame2, frame3, frame4, tell me, in a single "
      "word 'Yes' or 'No', whether the video should be filtered out or not."};
  return prompt;
}

ReviewVerdict parse_review_reply(const std::string& reply) {
  std::string word;
  for (char c : reply) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!std::isspace(static_cast<unsigned char>(c)) && !std::ispunct(static_cast<unsigned char>(c))) {
      throw MalformedReplyError("unexpected character in review reply: " + reply);
    } else if (std::isspace(static_cast<unsigned char>(c)) && !word.empty()) {
      word.push_back(' ');
    }
  }
  while (!word.empty() && word.back() == ' ') word.pop_back();
  if (word == "yes") return ReviewVerdict::Discard;
  if (word == "no") return ReviewVerdict::Keep;
  throw MalformedReplyError("review reply is not a single Yes/No word: \"" + reply + "\"");
}

std::string MockReviewClient::complete(const ReviewPrompt& prompt, const std::vector<std::vector<std::uint8_t>>&) {
  std::lock_guard lock(mutex_);
  last_prompt_ = prompt;
  ++calls_;
  return reply_;
}

std::array<int, 4> quarter_timesteps(int timesteps) {
  if (timesteps < 1) throw ValidationError("clip has no timesteps");
  std::array<int, 4> t{};
  for (int q = 0; q < 4; ++q) t[q] = static_cast<int>(std::lround(q * (timesteps - 1) / 3.0));
  return t;
}

Video render_clip(const MotionClip& clip, const Camera& camera, int timestep, int splat_radius) {
  const Resolution res = camera.resolution;
  Video img(1, res.height, res.width, 3, 1.0f);
  std::vector<double> zbuf(static_cast<std::size_t>(res.height) * res.width, std::numeric_limits<double>::infinity());
  double zmin = std::numeric_limits<double>::infinity(), zmax = -zmin;
  for (int p = 0; p < clip.points; ++p) {
    const double z = project(camera, clip.at(timestep, p, 0), clip.at(timestep, p, 1), clip.at(timestep, p, 2)).depth;
    zmin = std::min(zmin, z);
    zmax = std::max(zmax, z);
  }
  static constexpr std::array<std::array<float, 3>, 6> tint{
      {{0.2f, 0.3f, 0.8f}, {0.85f, 0.3f, 0.2f}, {0.2f, 0.7f, 0.3f}, {0.8f, 0.6f, 0.1f}, {0.6f, 0.2f, 0.7f},
       {0.1f, 0.6f, 0.7f}}};
  for (int p = 0; p < clip.points; ++p) {
    const Projection pr = project(camera, clip.at(timestep, p, 0), clip.at(timestep, p, 1), clip.at(timestep, p, 2));
    if (!pr.valid || pr.h < 0 || pr.w < 0 || pr.h >= res.height || pr.w >= res.width) continue;
    const Pixel c = to_pixel(pr, res);
    const int sub = clip.submodels.empty() ? 0 : clip.submodels[p];
    const auto& col = tint[static_cast<std::size_t>(std::abs(sub)) % tint.size()];
    const float shade = zmax > zmin ? static_cast<float>(1.0 - 0.5 * (pr.depth - zmin) / (zmax - zmin)) : 1.0f;
    for (int dh = -splat_radius; dh <= splat_radius; ++dh) {
      for (int dw = -splat_radius; dw <= splat_radius; ++dw) {
        const int h = c.h + dh, w = c.w + dw;
        if (h < 0 || w < 0 || h >= res.height || w >= res.width) continue;
        double& z = zbuf[static_cast<std::size_t>(h) * res.width + w];
        if (pr.depth >= z) continue;
        z = pr.depth;
        for (int ch = 0; ch < 3; ++ch) img.at(0, h, w, ch) = 2 * col[ch] * shade - 1;
      }
    }
  }
  return img;
}

ReviewVerdict realism_review_request(const std::vector<Video>& renders, ReviewClient& client) {
  if (renders.size() != 4) throw ValidationError("realism review needs exactly four renders");
  std::vector<std::vector<std::uint8_t>> images;
  for (const Video& v : renders) images.push_back(encode_png(v, 0));
  return parse_review_reply(client.complete(realism_prompt(), images));
}

ReviewVerdict review_clip(const MotionClip& clip, const Camera& camera, ReviewClient& client) {
  clip.validate();
  std::vector<Video> renders;
  for (int t : quarter_timesteps(clip.timesteps)) renders.push_back(render_clip(clip, camera, t));
  return realism_review_request(renders, client);
}

// ---------------------------------------------------------------------------
// Drag sampling

std::vector<bool> visible_points(const MotionClip& clip, const Camera& camera, int timestep, int splat_radius) {
  const Resolution res = camera.resolution;
  std::vector<double> zbuf(static_cast<std::size_t>(res.height) * res.width, std::numeric_limits<double>::infinity());
  std::vector<Projection> proj(clip.points);
  std::vector<bool> inside(clip.points, false);
  for (int p = 0; p < clip.points; ++p) {
    proj[p] = project(camera, clip.at(timestep, p, 0), clip.at(timestep, p, 1), clip.at(timestep, p, 2));
    inside[p] = proj[p].valid && proj[p].h >= 0 && proj[p].w >= 0 && proj[p].h < res.height && proj[p].w < res.width;
    if (!inside[p]) continue;
    const Pixel c = to_pixel(proj[p], res);
    for (int dh = -splat_radius; dh <= splat_radius; ++dh) {
      for (int dw = -splat_radius; dw <= splat_radius; ++dw) {
        const int h = c.h + dh, w = c.w + dw;
        if (h < 0 || w < 0 || h >= res.height || w >= res.width) continue;
        double& z = zbuf[static_cast<std::size_t>(h) * res.width + w];
        z = std::min(z, proj[p].depth);
      }
    }
  }
  std::vector<bool> visible(clip.points, false);
  for (int p = 0; p < clip.points; ++p) {
    if (!inside[p]) continue;
    const Pixel c = to_pixel(proj[p], res);
    const double z = zbuf[static_cast<std::size_t>(c.h) * res.width + c.w];
    visible[p] = proj[p].depth <= z + 1e-9 * std::max(1.0, std::abs(z));
  }
  return visible;
}

double default_dedup_delta(Resolution res, int frames) {
  return 20.0 * frames * (static_cast<double>(res.height) * res.width) / (256.0 * 256.0);
}

double trajectory_distance2(const Drag& a, const Drag& b) {
  if (a.frame_count() != b.frame_count()) throw ValidationError("drags differ in frame count");
  double d = 0;
  for (int n = 0; n < a.frame_count(); ++n) {
    const double dh = a.trajectory[n].h - b.trajectory[n].h;
    const double dw = a.trajectory[n].w - b.trajectory[n].w;
    d += dh * dh + dw * dw;
  }
  return d;
}

DragSet dedup_drags(const DragSet& drags, double delta, std::mt19937_64& rng) {
  DragSet out = drags;
  while (true) {
    std::vector<std::pair<int, int>> violating;
    for (int i = 0; i < out.size(); ++i) {
      for (int j = i + 1; j < out.size(); ++j) {
        if (trajectory_distance2(out.drags[i], out.drags[j]) <= delta) violating.emplace_back(i, j);
      }
    }
    if (violating.empty()) return out;
    const auto [i, j] = violating[std::uniform_int_distribution<std::size_t>(0, violating.size() - 1)(rng)];
    const int victim = std::bernoulli_distribution(0.5)(rng) ? i : j;
    out.drags.erase(out.drags.begin() + victim);
  }
}

DragSet sample_drags(const MotionClip& clip, const Camera& camera, const DragSamplingPolicy& policy,
                     std::mt19937_64& rng) {
  clip.validate();
  validate_resolution(camera.resolution);
  if (policy.max_drags < 1 || policy.max_drags > kMaxDrags) throw ValidationError("max_drags must lie in [1, 5]");
  const int frames = policy.frames > 0 ? policy.frames : clip.timesteps;
  std::vector<int> steps(frames);
  for (int n = 0; n < frames; ++n) {
    steps[n] = frames == 1 ? 0 : static_cast<int>(std::lround(static_cast<double>(n) * (clip.timesteps - 1) /
                                                               (frames - 1)));
  }

  // Path length over the sampled timesteps.
  std::vector<double> disp(clip.points, 0.0);
  for (int n = 1; n < frames; ++n) {
    for (int p = 0; p < clip.points; ++p) {
      const int a = steps[n - 1], b = steps[n];
      disp[p] += std::hypot(clip.at(b, p, 0) - clip.at(a, p, 0), clip.at(b, p, 1) - clip.at(a, p, 1),
                            clip.at(b, p, 2) - clip.at(a, p, 2));
    }
  }
  const auto visible = visible_points(clip, camera, steps[0], policy.splat_radius);

  // Candidate groups: one per moving sub-model, or a single pool.
  std::vector<std::vector<int>> groups;
  int draws_from_pool = 0;
  if (!clip.submodels.empty()) {
    const double max_disp = *std::max_element(disp.begin(), disp.end());
    std::vector<int> ids = clip.submodels;
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    for (int id : ids) {
      std::vector<int> members;
      double sum = 0;
      int count = 0;
      for (int p = 0; p < clip.points; ++p) {
        if (clip.submodels[p] != id) continue;
        sum += disp[p];
        ++count;
        if (visible[p] && disp[p] > 0) members.push_back(p);
      }
      if (count > 0 && sum / count > policy.moving_fraction * max_disp && max_disp > 0 && !members.empty()) {
        groups.push_back(std::move(members));
      }
    }
  } else {
    std::vector<int> pool;
    for (int p = 0; p < clip.points; ++p) {
      if (visible[p] && disp[p] > 0) pool.push_back(p);
    }
    if (!pool.empty()) groups.push_back(std::move(pool));
    draws_from_pool =
        policy.count > 0 ? policy.count : std::uniform_int_distribution<int>(1, policy.max_drags)(rng);
  }
  if (groups.empty()) throw ValidationError("no visible moving point to drag");

  std::vector<int> chosen;
  auto draw = [&](std::vector<int>& cands) {
    std::vector<double> w;
    for (int p : cands) w.push_back(disp[p]);
    const std::size_t i = std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng);
    chosen.push_back(cands[i]);
    cands.erase(cands.begin() + static_cast<std::ptrdiff_t>(i));
  };
  if (clip.submodels.empty()) {
    auto& pool = groups.front();
    for (int k = 0; k < draws_from_pool && !pool.empty(); ++k) draw(pool);
  } else {
    for (auto& g : groups) draw(g);
  }
  if (static_cast<int>(chosen.size()) > policy.max_drags) {
    std::shuffle(chosen.begin(), chosen.end(), rng);
    chosen.resize(policy.max_drags);
  }

  const Resolution res = camera.resolution;
  DragSet set;
  set.capacity = kMaxDrags;
  for (int p : chosen) {
    Drag d;
    for (int n = 0; n < frames; ++n) {
      const int t = steps[n];
      d.trajectory.push_back(to_pixel(project(camera, clip.at(t, p, 0), clip.at(t, p, 1), clip.at(t, p, 2)), res));
    }
    d.origin = d.trajectory.front();
    set.drags.push_back(std::move(d));
  }
  const double delta = policy.delta ? *policy.delta : default_dedup_delta(res, frames);
  return validate_drag_set(dedup_drags(set, delta, rng), res, frames);
}

// ---------------------------------------------------------------------------
// Clip IO

std::string camera_to_json_text(const Camera& camera) {
  json j{{"height", camera.resolution.height}, {"width", camera.resolution.width}};
  if (const auto* o = std::get_if<OrthographicCamera>(&camera.model)) {
    j["type"] = "orthographic";
    j["x0"] = o->x0;
    j["y0"] = o->y0;
    j["view_width"] = o->width;
    j["view_height"] = o->height;
  } else {
    const auto& p = std::get<PinholeCamera>(camera.model);
    j["type"] = "pinhole";
    j["fx"] = p.fx;
    j["fy"] = p.fy;
    j["cx"] = p.cx;
    j["cy"] = p.cy;
    j["rotation"] = p.rotation;
    j["translation"] = p.translation;
  }
  return j.dump(1);
}

Camera camera_from_json_text(const std::string& text) {
  try {
    const json j = json::parse(text);
    Camera c;
    c.resolution = {j.at("height").get<int>(), j.at("width").get<int>()};
    validate_resolution(c.resolution);
    const std::string type = j.at("type").get<std::string>();
    if (type == "orthographic") {
      OrthographicCamera o;
      o.x0 = j.value("x0", 0.0);
      o.y0 = j.value("y0", 0.0);
      o.width = j.value("view_width", 1.0);
      o.height = j.value("view_height", 1.0);
      if (!(o.width > 0 && o.height > 0)) throw ValidationError("orthographic viewport must be positive");
      c.model = o;
    } else if (type == "pinhole") {
      PinholeCamera p;
      p.fx = j.at("fx").get<double>();
      p.fy = j.at("fy").get<double>();
      p.cx = j.at("cx").get<double>();
      p.cy = j.at("cy").get<double>();
      if (j.contains("rotation")) p.rotation = j.at("rotation").get<std::array<double, 9>>();
      if (j.contains("translation")) p.translation = j.at("translation").get<std::array<double, 3>>();
      c.model = p;
    } else {
      throw ValidationError("unknown camera type \"" + type + "\"");
    }
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed camera: ") + e.what());
  }
}

MotionClip read_clip_dir(const std::string& dir) {
  std::ifstream in(dir + "/positions.txt");
  if (!in) throw Error("cannot open " + dir + "/positions.txt");
  int T = 0, P = 0;
  if (!(in >> T >> P) || T < 0 || P < 0) throw ValidationError("positions.txt must start with \"T P\"");
  MotionClip clip(T, P);
  for (double& v : clip.positions) {
    if (!(in >> v)) throw ValidationError("positions.txt holds fewer than T*P*3 values");
  }
  std::ifstream sub(dir + "/submodels.txt");
  if (sub) {
    int id;
    while (sub >> id) clip.submodels.push_back(id);
  }
  if (std::filesystem::exists(dir + "/camera.json")) {
    std::ifstream cf(dir + "/camera.json");
    std::stringstream ss;
    ss << cf.rdbuf();
    clip.camera = camera_from_json_text(ss.str());
  }
  clip.validate();
  return clip;
}

void write_clip_dir(const std::string& dir, const MotionClip& clip) {
  clip.validate();
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir + "/positions.txt");
    out.precision(17);
    out << clip.timesteps << ' ' << clip.points << '\n';
    for (int t = 0; t < clip.timesteps; ++t) {
      for (int p = 0; p < clip.points; ++p) {
        out << clip.at(t, p, 0) << ' ' << clip.at(t, p, 1) << ' ' << clip.at(t, p, 2) << '\n';
      }
    }
    if (!out) throw Error("short write to " + dir + "/positions.txt");
  }
  if (!clip.submodels.empty()) {
    std::ofstream out(dir + "/submodels.txt");
    for (int id : clip.submodels) out << id << '\n';
  }
  if (clip.camera) {
    std::ofstream out(dir + "/camera.json");
    out << camera_to_json_text(*clip.camera) << '\n';
  }
}

}  // namespace partdrag
