#include "partdrag/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include <json.hpp>

namespace partdrag {

using nlohmann::json;

namespace {

void require_same(const Video& a, const Video& b) {
  if (!a.same_shape(b)) throw ValidationError("videos differ in shape");
  if (a.values.empty()) throw ValidationError("empty video");
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(size);
  const int r = size / 2;
  double sum = 0;
  for (int i = 0; i < size; ++i) {
    k[i] = std::exp(-0.5 * (i - r) * (i - r) / (sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable valid-mode filtering of an H x W plane.
std::vector<double> filter_valid(const std::vector<double>& img, int H, int W, const std::vector<double>& k) {
  const int K = static_cast<int>(k.size());
  const int Ho = H - K + 1, Wo = W - K + 1;
  std::vector<double> rows(static_cast<std::size_t>(H) * Wo, 0.0);
  for (int h = 0; h < H; ++h) {
    for (int w = 0; w < Wo; ++w) {
      double s = 0;
      for (int i = 0; i < K; ++i) s += k[i] * img[static_cast<std::size_t>(h) * W + w + i];
      rows[static_cast<std::size_t>(h) * Wo + w] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(Ho) * Wo, 0.0);
  for (int h = 0; h < Ho; ++h) {
    for (int w = 0; w < Wo; ++w) {
      double s = 0;
      for (int i = 0; i < K; ++i) s += k[i] * rows[static_cast<std::size_t>(h + i) * Wo + w];
      out[static_cast<std::size_t>(h) * Wo + w] = s;
    }
  }
  return out;
}

const char* role_name(PointRole r) { return r == PointRole::Origin ? "origin" : "foreground"; }

}  // namespace

double psnr(const Video& a, const Video& b, double peak) {
  require_same(a, b);
  double se = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = static_cast<double>(a.values[i]) - b.values[i];
    se += d * d;
  }
  if (se == 0) return std::numeric_limits<double>::infinity();
  const double mse = se / static_cast<double>(a.values.size());
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Video& a, const Video& b, double L) {
  require_same(a, b);
  int win = std::min({11, a.height, a.width});
  if (win % 2 == 0) --win;
  const auto k = gaussian_kernel(win, 1.5);
  const double C1 = (0.01 * L) * (0.01 * L);
  const double C2 = (0.03 * L) * (0.03 * L);
  const int H = a.height, W = a.width;
  const std::size_t plane = static_cast<std::size_t>(H) * W;

  double total = 0;
  int planes = 0;
  std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
  for (int n = 0; n < a.frames; ++n) {
    for (int c = 0; c < a.channels; ++c) {
      for (int h = 0; h < H; ++h) {
        for (int w = 0; w < W; ++w) {
          const std::size_t i = static_cast<std::size_t>(h) * W + w;
          x[i] = a.at(n, h, w, c);
          y[i] = b.at(n, h, w, c);
          xx[i] = x[i] * x[i];
          yy[i] = y[i] * y[i];
          xy[i] = x[i] * y[i];
        }
      }
      const auto mx = filter_valid(x, H, W, k), my = filter_valid(y, H, W, k);
      const auto sxx = filter_valid(xx, H, W, k), syy = filter_valid(yy, H, W, k), sxy = filter_valid(xy, H, W, k);
      double sum = 0;
      for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i];
        const double vy = syy[i] - my[i] * my[i];
        const double cxy = sxy[i] - mx[i] * my[i];
        sum += ((2 * mx[i] * my[i] + C1) * (2 * cxy + C2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
      }
      total += sum / static_cast<double>(mx.size());
      ++planes;
    }
  }
  return total / planes;
}

void TrajectorySet::add(int id, PointRole role, const std::vector<std::array<double, 2>>& track) {
  if (ids.empty() && frames == 0) frames = static_cast<int>(track.size());
  if (static_cast<int>(track.size()) != frames) throw ValidationError("track length differs from the set");
  ids.push_back(id);
  roles.push_back(role);
  for (const auto& p : track) {
    coords.push_back(p[0]);
    coords.push_back(p[1]);
  }
}

void TrajectorySet::add(int id, PointRole role, const std::vector<Pixel>& track) {
  std::vector<std::array<double, 2>> t;
  t.reserve(track.size());
  for (const Pixel& p : track) t.push_back({static_cast<double>(p.h), static_cast<double>(p.w)});
  add(id, role, t);
}

void TrajectorySet::validate(Resolution res) const {
  if (roles.size() != ids.size() || coords.size() != ids.size() * frames * 2) {
    throw ValidationError("trajectory set arrays disagree in length");
  }
  std::set<int> seen;
  for (int id : ids) {
    if (!seen.insert(id).second) throw ValidationError("duplicate point id " + std::to_string(id));
  }
  for (int m = 0; m < size(); ++m) {
    for (int n = 0; n < frames; ++n) {
      if (!(h(m, n) >= 0 && w(m, n) >= 0 && h(m, n) <= res.height - 1 && w(m, n) <= res.width - 1)) {
        throw ValidationError("point " + std::to_string(ids[m]) + " leaves the image at frame " + std::to_string(n));
      }
    }
  }
}

double flow_error(const TrajectorySet& pred, const TrajectorySet& gt, FlowMode mode) {
  if (pred.frames != gt.frames) throw ValidationError("trajectory sets differ in frame count");
  if (pred.size() != gt.size()) throw ValidationError("trajectory sets hold different points");
  std::map<int, int> gt_index;
  for (int m = 0; m < gt.size(); ++m) gt_index[gt.ids[m]] = m;
  if (static_cast<int>(gt_index.size()) != gt.size()) throw ValidationError("duplicate ground-truth point id");

  double se = 0;
  std::size_t count = 0;
  std::set<int> used;
  for (int m = 0; m < pred.size(); ++m) {
    const auto it = gt_index.find(pred.ids[m]);
    if (it == gt_index.end()) throw ValidationError("point " + std::to_string(pred.ids[m]) + " has no ground truth");
    if (!used.insert(pred.ids[m]).second) throw ValidationError("duplicate predicted point id");
    const int g = it->second;
    if (pred.roles[m] != gt.roles[g]) throw ValidationError("point roles disagree for id " + std::to_string(pred.ids[m]));
    if (mode == FlowMode::Origins && gt.roles[g] != PointRole::Origin) continue;
    for (int n = 0; n < pred.frames; ++n) {
      const double dh = pred.h(m, n) - gt.h(g, n);
      const double dw = pred.w(m, n) - gt.w(g, n);
      se += dh * dh + dw * dw;
      ++count;
    }
  }
  if (count == 0) throw ValidationError("no points selected for flow error");
  return std::sqrt(se / static_cast<double>(count));
}

std::string trajectories_to_json_text(const TrajectorySet& t) {
  json points = json::array();
  for (int m = 0; m < t.size(); ++m) {
    json track = json::array();
    for (int n = 0; n < t.frames; ++n) track.push_back({t.h(m, n), t.w(m, n)});
    points.push_back({{"id", t.ids[m]}, {"role", role_name(t.roles[m])}, {"track", std::move(track)}});
  }
  return json{{"frames", t.frames}, {"points", std::move(points)}}.dump(1);
}

TrajectorySet trajectories_from_json_text(const std::string& text) {
  try {
    const json j = json::parse(text);
    TrajectorySet t;
    t.frames = j.at("frames").get<int>();
    for (const auto& p : j.at("points")) {
      const std::string role = p.at("role").get<std::string>();
      if (role != "origin" && role != "foreground") throw ValidationError("unknown point role \"" + role + "\"");
      std::vector<std::array<double, 2>> track;
      for (const auto& xy : p.at("track")) track.push_back({xy.at(0).get<double>(), xy.at(1).get<double>()});
      t.add(p.at("id").get<int>(), role == "origin" ? PointRole::Origin : PointRole::Foreground, track);
    }
    return t;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed trajectory file: ") + e.what());
  }
}

Palette estimate_palette(const Video& reference, const LabelImage& mask) {
  if (mask.height != reference.height || mask.width != reference.width) {
    throw ValidationError("mask and reference differ in size");
  }
  std::map<int, std::pair<std::array<double, 3>, int>> acc;
  for (int h = 0; h < mask.height; ++h) {
    for (int w = 0; w < mask.width; ++w) {
      auto& [sum, count] = acc[mask.at(h, w)];
      for (int c = 0; c < 3; ++c) sum[c] += reference.at(0, h, w, c);
      ++count;
    }
  }
  Palette p;
  for (const auto& [label, sc] : acc) {
    p.labels.push_back(label);
    p.colors.push_back({static_cast<float>(sc.first[0] / sc.second), static_cast<float>(sc.first[1] / sc.second),
                        static_cast<float>(sc.first[2] / sc.second)});
  }
  return p;
}

std::vector<LabelImage> segment_video(const Video& video, const Palette& palette) {
  if (palette.labels.empty()) throw ValidationError("empty palette");
  if (video.channels != 3) throw ValidationError("segmentation expects RGB video");
  std::vector<LabelImage> out;
  for (int n = 0; n < video.frames; ++n) {
    LabelImage m{video.height, video.width, std::vector<std::uint8_t>(static_cast<std::size_t>(video.height) * video.width)};
    for (int h = 0; h < video.height; ++h) {
      for (int w = 0; w < video.width; ++w) {
        double best = std::numeric_limits<double>::infinity();
        int label = 0;
        for (std::size_t i = 0; i < palette.labels.size(); ++i) {
          double d = 0;
          for (int c = 0; c < 3; ++c) {
            const double e = video.at(n, h, w, c) - palette.colors[i][c];
            d += e * e;
          }
          if (d < best) {
            best = d;
            label = palette.labels[i];
          }
        }
        m.labels[static_cast<std::size_t>(h) * video.width + w] = static_cast<std::uint8_t>(label);
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<TrackSeed> make_track_seeds(const DragSet& drags, const LabelImage& mask, int max_foreground) {
  std::vector<TrackSeed> seeds;
  int id = 0;
  for (const Drag& d : drags.drags) {
    if (!in_bounds(d.origin, {mask.height, mask.width})) throw ValidationError("drag origin outside the mask", id);
    seeds.push_back({id++, PointRole::Origin, mask.at(d.origin.h, d.origin.w), d.origin});
  }
  std::vector<Pixel> fg;
  for (int h = 0; h < mask.height; ++h) {
    for (int w = 0; w < mask.width; ++w) {
      if (mask.at(h, w) != 0) fg.push_back({h, w});
    }
  }
  if (max_foreground > 0 && !fg.empty()) {
    const std::size_t take = std::min(fg.size(), static_cast<std::size_t>(max_foreground));
    for (std::size_t i = 0; i < take; ++i) {
      const Pixel p = fg[i * fg.size() / take];
      seeds.push_back({id++, PointRole::Foreground, mask.at(p.h, p.w), p});
    }
  }
  return seeds;
}

namespace {

struct PartFrame {
  bool present = false;
  double ch = 0, cw = 0;  // centroid
  double angle = 0;       // principal axis, radians, in (h, w) plane
  bool oriented = false;
};

PartFrame measure(const LabelImage& m, int label) {
  double n = 0, sh = 0, sw = 0;
  for (int h = 0; h < m.height; ++h) {
    for (int w = 0; w < m.width; ++w) {
      if (m.at(h, w) != label) continue;
      n += 1;
      sh += h;
      sw += w;
    }
  }
  PartFrame f;
  if (n == 0) return f;
  f.present = true;
  f.ch = sh / n;
  f.cw = sw / n;
  double mhh = 0, mww = 0, mhw = 0;
  for (int h = 0; h < m.height; ++h) {
    for (int w = 0; w < m.width; ++w) {
      if (m.at(h, w) != label) continue;
      const double dh = h - f.ch, dw = w - f.cw;
      mhh += dh * dh;
      mww += dw * dw;
      mhw += dh * dw;
    }
  }
  const double tr = mhh + mww;
  const double det = mhh * mww - mhw * mhw;
  const double disc = std::sqrt(std::max(0.0, tr * tr / 4 - det));
  const double l1 = tr / 2 + disc, l2 = tr / 2 - disc;
  f.angle = 0.5 * std::atan2(2 * mhw, mww - mhh);
  // Near-isotropic shapes have no reliable axis.
  f.oriented = n >= 4 && l1 > 1.5 * std::max(l2, 1e-9);
  return f;
}

}  // namespace

TrajectorySet track_points(const Video& video, const Palette& palette, const std::vector<TrackSeed>& seeds) {
  const auto masks = segment_video(video, palette);
  const Resolution res = video.resolution();
  std::map<int, std::vector<PartFrame>> parts;
  for (const TrackSeed& s : seeds) {
    if (parts.count(s.label) || s.label == 0) continue;
    auto& frames = parts[s.label];
    for (const auto& m : masks) frames.push_back(measure(m, s.label));
  }

  TrajectorySet out;
  out.frames = video.frames;
  for (const TrackSeed& s : seeds) {
    std::vector<std::array<double, 2>> track(video.frames, {static_cast<double>(s.origin.h),
                                                            static_cast<double>(s.origin.w)});
    const auto it = parts.find(s.label);
    if (it != parts.end() && it->second[0].present) {
      const auto& pf = it->second;
      const PartFrame& f0 = pf[0];
      double prev_angle = f0.angle;
      double rot = 0;
      std::array<double, 2> last = track[0];
      for (int n = 1; n < video.frames; ++n) {
        if (!pf[n].present) {
          track[n] = last;
          continue;
        }
        if (f0.oriented && pf[n].oriented) {
          // Axis angles are defined modulo pi; take the branch nearest the previous frame.
          double d = pf[n].angle - prev_angle;
          d -= std::numbers::pi * std::round(d / std::numbers::pi);
          rot += d;
          prev_angle = pf[n].angle;
        }
        const double c = std::cos(rot), sn = std::sin(rot);
        const double dh = s.origin.h - f0.ch, dw = s.origin.w - f0.cw;
        // Rotation in the (w, h) plane.
        const double nw = pf[n].cw + c * dw - sn * dh;
        const double nh = pf[n].ch + sn * dw + c * dh;
        track[n] = {std::clamp(nh, 0.0, res.height - 1.0), std::clamp(nw, 0.0, res.width - 1.0)};
        last = track[n];
      }
    }
    out.add(s.id, s.role, track);
  }
  return out;
}

DirectionResult direction_accuracy(const std::vector<LabelImage>& video_masks, const DragSet& drags,
                                   const LabelImage& reference_mask, bool lenient) {
  if (video_masks.size() < 2) throw ValidationError("direction accuracy needs at least two frames");
  DirectionResult r;
  for (int k = 0; k < drags.size(); ++k) {
    const Drag& d = drags.drags[k];
    if (!in_bounds(d.origin, {reference_mask.height, reference_mask.width})) {
      throw ValidationError("drag origin outside the mask", k);
    }
    const int label = reference_mask.at(d.origin.h, d.origin.w);
    ++r.total;
    if (label == 0) {
      if (lenient) continue;
      throw ValidationError("drag origin lies on the background", k);
    }
    const PartFrame a = measure(video_masks.front(), label);
    const PartFrame b = measure(video_masks.back(), label);
    if (!a.present || !b.present) {
      if (lenient) continue;
      throw ValidationError("dragged part has an empty mask", k);
    }
    const double mh = b.ch - a.ch, mw = b.cw - a.cw;
    const double vh = d.terminus().h - d.origin.h, vw = d.terminus().w - d.origin.w;
    if (mh * vh + mw * vw > 0) ++r.correct;
  }
  return r;
}

SampleEvaluation evaluate_video(const Video& pred, const Video& gt, const DragSet& drags,
                                const LabelImage& reference_mask, int max_foreground) {
  require_same(pred, gt);
  const Palette palette = estimate_palette(gt, reference_mask);
  const auto seeds = make_track_seeds(drags, reference_mask, max_foreground);
  SampleEvaluation e;
  e.psnr = psnr(pred, gt);
  e.ssim = ssim(pred, gt);
  const TrajectorySet pt = track_points(pred, palette, seeds);
  const TrajectorySet gtt = track_points(gt, palette, seeds);
  e.flow_foreground = flow_error(pt, gtt, FlowMode::Foreground);
  e.flow_origins = drags.empty() ? 0.0 : flow_error(pt, gtt, FlowMode::Origins);
  e.direction = direction_accuracy(segment_video(pred, palette), drags, reference_mask, true);
  return e;
}

}  // namespace partdrag
