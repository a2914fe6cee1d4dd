#include "partdrag/toyworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <thread>

#include "partdrag/json_io.hpp"

namespace partdrag {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Vec2 rotate(Vec2 v, double a) {
  const double c = std::cos(a), s = std::sin(a);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator*(double k, Vec2 a) { return {k * a.x, k * a.y}; }

Vec2 to_local(const Pose& pose, Vec2 p) { return rotate(p - pose.center, -pose.angle); }
Vec2 to_world(const Pose& pose, Vec2 l) { return pose.center + rotate(l, pose.angle); }

bool contains(const ScenePart& part, const Pose& pose, Vec2 p) {
  const Vec2 l = to_local(pose, p);
  return std::abs(l.x) <= part.half_length && std::abs(l.y) <= part.half_thickness;
}

Pixel pixel_of(Vec2 p, Resolution res) {
  return {std::clamp(static_cast<int>(std::floor(p.y)), 0, res.height - 1),
          std::clamp(static_cast<int>(std::floor(p.x)), 0, res.width - 1)};
}

// Saturated colours in [0, 1]; a scene draws distinct entries.
constexpr std::array<std::array<float, 3>, 8> kPalette{{
    {0.85f, 0.12f, 0.12f},
    {0.10f, 0.55f, 0.20f},
    {0.15f, 0.25f, 0.85f},
    {0.95f, 0.55f, 0.05f},
    {0.55f, 0.15f, 0.70f},
    {0.05f, 0.60f, 0.62f},
    {0.45f, 0.28f, 0.08f},
    {0.90f, 0.20f, 0.60f},
}};

// Snapped to the 8-bit grid so written datasets read back bit-identical.
std::array<float, 3> signed_color(std::array<float, 3> c) {
  std::array<float, 3> out;
  for (int i = 0; i < 3; ++i) out[i] = from_byte(to_byte(2 * c[i] - 1));
  return out;
}

bool scene_is_valid(const ArticulatedScene& scene, Resolution res, int frames) {
  for (std::size_t k = 0; k < scene.parts.size(); ++k) {
    const ScenePart& part = scene.parts[k];
    for (int n = 0; n < frames; ++n) {
      const Pose pose = scene.pose(static_cast<int>(k), n, frames);
      for (int cx : {-1, 1}) {
        for (int cy : {-1, 1}) {
          const Vec2 c = to_world(pose, {cx * part.half_length, cy * part.half_thickness});
          if (c.x < 0.5 || c.y < 0.5 || c.x > res.width - 0.5 || c.y > res.height - 0.5) return false;
        }
      }
    }
  }

  const SceneRender r = render_scene(scene, res, frames);
  const int min_pixels = std::max(6, res.height * res.width / 200);
  for (std::size_t k = 0; k < scene.parts.size(); ++k) {
    const auto label = static_cast<std::uint8_t>(k + 1);
    double first_h = 0, first_w = 0, last_h = 0, last_w = 0;
    for (int n = 0; n < frames; ++n) {
      int count = 0;
      double sh = 0, sw = 0;
      const LabelImage& m = r.masks[n];
      for (int h = 0; h < res.height; ++h) {
        for (int w = 0; w < res.width; ++w) {
          if (m.at(h, w) == label) {
            ++count;
            sh += h;
            sw += w;
          }
        }
      }
      if (count < min_pixels) return false;
      if (n == 0) first_h = sh / count, first_w = sw / count;
      if (n == frames - 1) last_h = sh / count, last_w = sw / count;
    }
    // Moving parts must move visibly so direction checks are meaningful.
    if (scene.parts[k].moving() && frames > 1 && std::hypot(last_h - first_h, last_w - first_w) < 1.0) return false;
  }
  return true;
}

ArticulatedScene draw_scene(std::mt19937_64& rng, Resolution res) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * u01(rng); };
  const double S = std::min(res.height, res.width);

  ArticulatedScene scene;
  const double g = uni(0.78, 0.92);
  scene.background = signed_color({static_cast<float>(g + uni(-0.04, 0.04)), static_cast<float>(g),
                                   static_cast<float>(g + uni(-0.04, 0.04))});

  std::array<int, 8> order{0, 1, 2, 3, 4, 5, 6, 7};
  std::shuffle(order.begin(), order.end(), rng);

  ScenePart root;
  root.joint = JointKind::Root;
  root.center = {res.width / 2.0 + uni(-0.08, 0.08) * S, res.height / 2.0 + uni(-0.08, 0.08) * S};
  root.half_length = uni(0.12, 0.2) * S;
  root.half_thickness = uni(0.12, 0.2) * S;
  root.color = signed_color(kPalette[order[0]]);
  scene.parts.push_back(root);

  const int limbs = std::uniform_int_distribution<int>(1, 3)(rng);
  std::array<int, 4> sides{0, 1, 2, 3};
  std::shuffle(sides.begin(), sides.end(), rng);
  bool any_moving = false;
  for (int i = 0; i < limbs; ++i) {
    const double normal_angle = sides[i] * std::numbers::pi / 2;
    const Vec2 normal = rotate({1, 0}, normal_angle);
    const Vec2 tangent = rotate({0, 1}, normal_angle);
    const bool along_x = sides[i] % 2 == 0;
    const double reach = along_x ? root.half_length : root.half_thickness;
    const double span = along_x ? root.half_thickness : root.half_length;
    const Vec2 anchor = root.center + reach * normal + uni(-0.6, 0.6) * span * tangent;

    ScenePart limb;
    limb.half_length = uni(0.12, 0.2) * S;
    limb.half_thickness = std::max(1.5, uni(0.05, 0.07) * S);
    limb.color = signed_color(kPalette[order[i + 1]]);
    const double sign = u01(rng) < 0.5 ? -1.0 : 1.0;
    if (u01(rng) < 0.5) {
      limb.joint = JointKind::Hinge;
      limb.pivot = anchor;
      limb.angle = normal_angle + uni(-0.35, 0.35);
      // The pivot sits on the inner edge, so every limb pixel lies outward of it.
      limb.center = anchor + limb.half_length * rotate({1, 0}, limb.angle);
      limb.amplitude = sign * uni(0.6, 1.3);
    } else {
      limb.joint = JointKind::Prismatic;
      limb.axis = normal;
      limb.angle = normal_angle;
      const double outside = limb.half_length * uni(0.0, 0.3);
      limb.center = anchor + outside * normal;
      // Sliding out stops short of detaching from the root.
      const double inside = limb.half_length - outside;
      limb.amplitude = sign > 0 ? std::min(uni(0.1, 0.22) * S, 0.85 * inside) : -uni(0.1, 0.22) * S;
    }
    if (u01(rng) >= 0.85) limb.amplitude = 0;
    any_moving = any_moving || limb.amplitude != 0;
    scene.parts.push_back(limb);
  }
  if (!any_moving) {
    ScenePart& limb = scene.parts[1];
    limb.amplitude = limb.joint == JointKind::Hinge ? uni(0.6, 1.3) : -uni(0.1, 0.22) * S;
  }
  return scene;
}

std::string sample_id(std::uint64_t seed) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%05llu", static_cast<unsigned long long>(seed));
  return buf;
}

std::string frame_name(const char* stem, int n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03d.png", stem, n);
  return buf;
}

}  // namespace

double ease(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

Pose ArticulatedScene::pose(int part, int frame, int frames) const {
  const ScenePart& p = parts.at(static_cast<std::size_t>(part));
  const double t = frames <= 1 ? 0.0 : static_cast<double>(frame) / (frames - 1);
  const double q = p.amplitude * ease(t);
  switch (p.joint) {
    case JointKind::Hinge:
      return {p.pivot + rotate(p.center - p.pivot, q), p.angle + q};
    case JointKind::Prismatic:
      return {p.center + q * p.axis, p.angle};
    case JointKind::Root:
      break;
  }
  return {p.center, p.angle};
}

SceneRender render_scene(const ArticulatedScene& scene, Resolution res, int frames) {
  if (frames < 1) throw ValidationError("scene needs at least one frame");
  if (scene.parts.empty() || scene.parts.size() > 254) throw ValidationError("scene needs 1 to 254 parts");
  SceneRender out;
  out.scene = scene;
  out.video = Video(frames, res.height, res.width, 3);
  out.masks.assign(frames, LabelImage{res.height, res.width,
                                      std::vector<std::uint8_t>(static_cast<std::size_t>(res.height) * res.width)});
  const int P = static_cast<int>(scene.parts.size());

  for (int n = 0; n < frames; ++n) {
    std::vector<Pose> poses;
    for (int k = 0; k < P; ++k) poses.push_back(scene.pose(k, n, frames));
    for (int h = 0; h < res.height; ++h) {
      for (int w = 0; w < res.width; ++w) {
        const Vec2 c{w + 0.5, h + 0.5};
        int label = 0;
        for (int k = P - 1; k >= 0; --k) {
          if (contains(scene.parts[k], poses[k], c)) {
            label = k + 1;
            break;
          }
        }
        out.masks[n].labels[static_cast<std::size_t>(h) * res.width + w] = static_cast<std::uint8_t>(label);
        const auto& color = label == 0 ? scene.background : scene.parts[label - 1].color;
        for (int ch = 0; ch < 3; ++ch) out.video.at(n, h, w, ch) = color[ch];
      }
    }
  }

  for (int k = 0; k < P; ++k) {
    PartTracks pt;
    pt.part = k + 1;
    pt.moving = scene.parts[k].moving();
    const Pose rest = scene.pose(k, 0, frames);
    std::vector<Pose> poses;
    for (int n = 0; n < frames; ++n) poses.push_back(scene.pose(k, n, frames));
    for (int h = 0; h < res.height; ++h) {
      for (int w = 0; w < res.width; ++w) {
        if (out.masks[0].at(h, w) != pt.part) continue;
        const Vec2 local = to_local(rest, {w + 0.5, h + 0.5});
        std::vector<Pixel> track;
        track.reserve(frames);
        for (int n = 0; n < frames; ++n) track.push_back(pixel_of(to_world(poses[n], local), res));
        track.front() = {h, w};
        pt.tracks.push_back(std::move(track));
      }
    }
    out.parts.push_back(std::move(pt));
  }
  return out;
}

ArticulatedScene random_scene(std::uint64_t seed, Resolution res, int frames) {
  validate_resolution(res);
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    ArticulatedScene scene = draw_scene(rng, res);
    scene.seed = seed;
    if (scene_is_valid(scene, res, frames)) return scene;
  }
  throw Error("no valid scene found for seed " + std::to_string(seed));
}

SceneRender generate_scene(std::uint64_t seed, Resolution res, int frames) {
  return render_scene(random_scene(seed, res, frames), res, frames);
}

double path_length(const std::vector<Pixel>& track) {
  double total = 0;
  for (std::size_t i = 1; i < track.size(); ++i) {
    total += std::hypot(track[i].h - track[i - 1].h, track[i].w - track[i - 1].w);
  }
  return total;
}

TrainingTriplet make_training_triplet(const SceneRender& scene, std::mt19937_64& rng) {
  TrainingTriplet t;
  t.video = scene.video;
  t.reference = scene.video.reference_frame();
  const Resolution res = scene.video.resolution();
  const int frames = scene.video.frames;
  DragSet set;
  for (const PartTracks& part : scene.parts) {
    if (!part.moving || part.tracks.empty()) continue;
    std::vector<double> weights;
    weights.reserve(part.tracks.size());
    for (const auto& tr : part.tracks) weights.push_back(path_length(tr));
    if (std::all_of(weights.begin(), weights.end(), [](double w) { return w == 0; })) {
      std::fill(weights.begin(), weights.end(), 1.0);
    }
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    const auto& track = part.tracks[pick(rng)];
    set.drags.push_back(Drag{track.front(), track});
  }
  if (set.size() > kMaxDrags) set.drags.resize(kMaxDrags);
  t.drags = validate_drag_set(dedup_drags(set, default_dedup_delta(res, frames), rng), res, frames);
  return t;
}

MotionClip synthetic_clip(ClipKind kind, std::uint64_t seed, int timesteps, int points) {
  if (timesteps < 2 || points < 8) throw ValidationError("synthetic clip needs T >= 2 and P >= 8");
  std::mt19937_64 rng(seed * 3 + static_cast<int>(kind));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * u01(rng); };

  MotionClip clip(timesteps, points);
  clip.submodels.assign(points, 0);
  const double scale = uni(0.5, 1.5);
  const double bx = 0.5 * scale, by = 0.3 * scale * uni(0.7, 1.3), bz = 0.3 * scale * uni(0.7, 1.3);
  const int slabs = kind == ClipKind::Articulated ? std::uniform_int_distribution<int>(1, 2)(rng) : 2;
  const int body_points = points / 2;

  // Rest positions. Slab s is a flap sticking out of the +x / -x face, hinged
  // along the face's top edge.
  std::vector<std::array<double, 3>> rest(points);
  const double flap = uni(0.4, 0.8) * scale;
  for (int p = 0; p < points; ++p) {
    if (p < body_points) {
      rest[p] = {uni(-bx, bx), uni(-by, by), uni(-bz, bz)};
      // Push to the nearest face so the cloud samples a surface.
      const int axis = std::uniform_int_distribution<int>(0, 2)(rng);
      const double ext[3] = {bx, by, bz};
      rest[p][axis] = (u01(rng) < 0.5 ? -1 : 1) * ext[axis];
    } else {
      const int s = (p - body_points) % slabs;
      clip.submodels[p] = s + 1;
      const double side = s == 0 ? 1.0 : -1.0;
      rest[p] = {side * (bx + 0.02 * scale + uni(0.0, flap)), by - uni(0.0, 0.06) * scale, uni(-bz, bz)};
    }
  }

  std::vector<double> slab_angle(slabs);
  for (auto& a : slab_angle) a = (u01(rng) < 0.5 ? -1 : 1) * uni(0.5, 1.5);
  const double tiny = uni(0.0, 0.004) * scale;
  const std::array<double, 3> travel{uni(-1, 1), uni(-1, 1), uni(-0.3, 0.3)};
  const double travel_len = std::hypot(travel[0], travel[1], travel[2]);
  const double distance = uni(1.0, 3.0) * scale;
  const std::array<double, 3> offset{uni(-0.3, 0.3), uni(-0.3, 0.3), uni(-0.3, 0.3)};

  for (int t = 0; t < timesteps; ++t) {
    const double e = ease(static_cast<double>(t) / (timesteps - 1));
    for (int p = 0; p < points; ++p) {
      std::array<double, 3> x = rest[p];
      const int sub = clip.submodels[p];
      switch (kind) {
        case ClipKind::Static:
          // Imperceptible wobble, as in animations that are static in practice.
          x[1] += tiny * std::sin(0.7 * t + p);
          break;
        case ClipKind::Translation:
          for (int i = 0; i < 3; ++i) x[i] += distance * e * travel[i] / travel_len;
          break;
        case ClipKind::Articulated:
          if (sub > 0) {
            // Rotate about the hinge line y = +by on the slab's face, axis along z.
            const double side = sub == 1 ? 1.0 : -1.0;
            const double a = side * slab_angle[sub - 1] * e;
            const double hx = side * (bx + 0.02 * scale), hy = by;
            const double dx = x[0] - hx, dy = x[1] - hy;
            x[0] = hx + std::cos(a) * dx - std::sin(a) * dy;
            x[1] = hy + std::sin(a) * dx + std::cos(a) * dy;
          }
          break;
      }
      for (int i = 0; i < 3; ++i) clip.at(t, p, i) = x[i] + offset[i];
    }
  }
  Camera cam;
  cam.model = OrthographicCamera{-2.5, -2.5, 5.0, 5.0};
  cam.resolution = {64, 64};
  clip.camera = cam;
  return clip;
}

std::string dataset_config_hash(const ToyDatasetConfig& c) {
  const json j = {{"height", c.height}, {"width", c.width},     {"frames", c.frames},
                  {"first_seed", c.first_seed}, {"count", c.count}, {"generator", 1}};
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

void write_sample_dir(const std::string& sample_dir, const ToySample& s) {
  fs::create_directories(sample_dir);
  for (int n = 0; n < s.video.frames; ++n) write_png(sample_dir + "/" + frame_name("frame", n), s.video, n);
  json masks = json::array();
  for (std::size_t n = 0; n < s.masks.size(); ++n) {
    const std::string name = frame_name("mask", static_cast<int>(n));
    write_label_png(sample_dir + "/" + name, s.masks[n]);
    masks.push_back(name);
  }
  write_json_file(sample_dir + "/drags.json", {{"resolution", {s.video.height, s.video.width}},
                                               {"frames", s.video.frames},
                                               {"seed", s.seed},
                                               {"drags", drag_set_to_json(s.drags)}});
  json parts = json::array();
  for (const PartTracks& p : s.parts) {
    json tracks = json::array();
    for (const auto& tr : p.tracks) {
      json t = json::array();
      for (const Pixel& px : tr) t.push_back(pixel_to_json(px));
      tracks.push_back(std::move(t));
    }
    parts.push_back({{"label", p.part}, {"moving", p.moving}, {"tracks", std::move(tracks)}});
  }
  write_json_file(sample_dir + "/parts.json", {{"masks", masks}, {"parts", parts}});
}

void write_toy_dataset(const std::string& dir, const ToyDatasetConfig& config, int threads) {
  validate_resolution(config.resolution());
  if (config.frames < 2) throw ValidationError("toy videos need at least two frames");
  if (config.count < 1) throw ValidationError("dataset needs at least one sample");
  fs::create_directories(dir);
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, config.count);

  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int i = t; i < config.count; i += threads) {
          const std::uint64_t seed = config.first_seed + static_cast<std::uint64_t>(i);
          ToySample s;
          s.seed = seed;
          s.id = sample_id(seed);
          SceneRender r = generate_scene(seed, config.resolution(), config.frames);
          std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
          TrainingTriplet tri = make_training_triplet(r, rng);
          s.video = std::move(r.video);
          s.drags = std::move(tri.drags);
          s.masks = std::move(r.masks);
          s.parts = std::move(r.parts);
          write_sample_dir(dir + "/" + s.id, s);
        }
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  json seeds = json::array(), samples = json::array();
  for (int i = 0; i < config.count; ++i) {
    const std::uint64_t seed = config.first_seed + static_cast<std::uint64_t>(i);
    seeds.push_back(seed);
    samples.push_back(sample_id(seed));
  }
  write_json_file(dir + "/manifest.json",
                  {{"format", "partdrag-toy-dataset"},
                   {"version", 1},
                   {"config",
                    {{"height", config.height}, {"width", config.width}, {"frames", config.frames},
                     {"first_seed", config.first_seed}, {"count", config.count}}},
                   {"config_hash", dataset_config_hash(config)},
                   {"seeds", seeds},
                   {"samples", samples}});
}

DatasetManifest read_manifest(const std::string& dir) {
  const json j = read_json_file(dir + "/manifest.json");
  try {
    DatasetManifest m;
    const json& c = j.at("config");
    m.config.height = c.at("height").get<int>();
    m.config.width = c.at("width").get<int>();
    m.config.frames = c.at("frames").get<int>();
    m.config.first_seed = c.at("first_seed").get<std::uint64_t>();
    m.config.count = c.at("count").get<int>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.samples = j.at("samples").get<std::vector<std::string>>();
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (m.samples.size() != m.seeds.size()) throw Error("manifest seed and sample lists differ in length");
    return m;
  } catch (const json::exception& e) {
    throw Error("malformed manifest in " + dir + ": " + e.what());
  }
}

ToySample read_toy_sample(const std::string& dir, const std::string& id, bool with_parts) {
  const std::string sdir = dir + "/" + id;
  ToySample s;
  s.id = id;
  json dj = read_json_file(sdir + "/drags.json");
  int frames = 0;
  try {
    frames = dj.at("frames").get<int>();
    s.seed = dj.value("seed", std::uint64_t{0});
    s.drags = drag_set_from_json(dj.at("drags"));
  } catch (const json::exception& e) {
    throw Error("malformed drags.json in " + sdir + ": " + e.what());
  }
  std::vector<Video> fr;
  for (int n = 0; n < frames; ++n) fr.push_back(read_png(sdir + "/" + frame_name("frame", n)));
  s.video = stack_frames(fr);
  s.drags = validate_drag_set(s.drags, s.video.resolution(), frames);
  if (!with_parts) return s;

  json pj = read_json_file(sdir + "/parts.json");
  try {
    for (const auto& name : pj.at("masks")) s.masks.push_back(read_label_png(sdir + "/" + name.get<std::string>()));
    for (const auto& p : pj.at("parts")) {
      PartTracks pt;
      pt.part = p.at("label").get<int>();
      pt.moving = p.at("moving").get<bool>();
      for (const auto& tr : p.at("tracks")) {
        std::vector<Pixel> track;
        for (const auto& px : tr) track.push_back(pixel_from_json(px));
        if (static_cast<int>(track.size()) != frames) throw Error("track length differs from frame count");
        pt.tracks.push_back(std::move(track));
      }
      s.parts.push_back(std::move(pt));
    }
  } catch (const json::exception& e) {
    throw Error("malformed parts.json in " + sdir + ": " + e.what());
  }
  if (static_cast<int>(s.masks.size()) != frames) throw Error("mask count differs from frame count in " + sdir);
  return s;
}

}  // namespace partdrag
