#include "partdrag/core_types.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace partdrag {

using nlohmann::json;

void validate_resolution(Resolution res) {
  if (res.height < 8 || res.width < 8) {
    throw ValidationError("resolution must be at least 8x8, got " + std::to_string(res.height) + "x" +
                          std::to_string(res.width));
  }
}

Drag Drag::straight(Pixel origin, Pixel terminus, int n) {
  if (n < 1) throw ValidationError("straight drag needs at least one frame");
  Drag d;
  d.origin = origin;
  d.trajectory.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double a = n == 1 ? 1.0 : static_cast<double>(i) / (n - 1);
    d.trajectory.push_back({static_cast<int>(std::lround(origin.h + a * (terminus.h - origin.h))),
                            static_cast<int>(std::lround(origin.w + a * (terminus.w - origin.w)))});
  }
  d.trajectory.front() = origin;
  return d;
}

DragSet validate_drag_set(const DragSet& set, Resolution res, int n) {
  validate_resolution(res);
  if (set.capacity < 0 || set.capacity > kMaxDrags) {
    throw ValidationError("drag capacity must lie in [0, " + std::to_string(kMaxDrags) + "]");
  }
  if (set.size() > set.capacity) {
    throw ValidationError("too many drags: K=" + std::to_string(set.size()) + " exceeds K_max=" +
                              std::to_string(set.capacity),
                          set.capacity);
  }
  for (int k = 0; k < set.size(); ++k) {
    const Drag& d = set.drags[k];
    const std::string tag = "drag " + std::to_string(k) + ": ";
    if (d.frame_count() != n) {
      throw ValidationError(tag + "trajectory has " + std::to_string(d.frame_count()) + " points, expected " +
                                std::to_string(n),
                            k);
    }
    if (!in_bounds(d.origin, res)) {
      throw ValidationError(tag + "origin (" + std::to_string(d.origin.h) + ", " + std::to_string(d.origin.w) +
                                ") out of bounds",
                            k);
    }
    for (int i = 0; i < n; ++i) {
      const Pixel p = d.trajectory[i];
      if (!in_bounds(p, res)) {
        throw ValidationError(tag + "frame " + std::to_string(i) + " point (" + std::to_string(p.h) + ", " +
                                  std::to_string(p.w) + ") out of bounds",
                              k);
      }
    }
    if (d.trajectory.front() != d.origin) {
      throw ValidationError(tag + "trajectory does not start at the origin", k);
    }
  }
  return set;
}

Video Video::reference_frame() const {
  Video out(1, height, width, channels);
  std::copy(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(frame_size()), out.values.begin());
  return out;
}

Video Video::repeat_reference(int n) const {
  Video out(n, height, width, channels);
  for (int i = 0; i < n; ++i) {
    std::copy(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(frame_size()), out.frame(i).begin());
  }
  return out;
}

void require_finite(const Video& v, std::string_view what) {
  for (float x : v.values) {
    if (!std::isfinite(x)) throw ValidationError(std::string(what) + " contains non-finite values");
  }
}

namespace {

template <typename T>
void check_range(const std::string& key, T value, T lo, T hi) {
  if (!(value >= lo && value <= hi)) {
    std::ostringstream os;
    os << "config field '" << key << "' = " << value << " outside [" << lo << ", " << hi << "]";
    throw ValidationError(os.str());
  }
}

}  // namespace

void RunConfig::validate() const {
  validate_resolution(resolution());
  check_range("frame_count", frame_count, 1, 64);
  if (level_widths.empty() || level_widths.size() > 5) {
    throw ValidationError("config field 'level_widths' must list 1 to 5 widths");
  }
  for (std::size_t i = 0; i < level_widths.size(); ++i) {
    check_range("level_widths", level_widths[i], 4, 1024);
    if (i > 0 && level_widths[i] < level_widths[i - 1]) {
      throw ValidationError("config field 'level_widths' must be nondecreasing");
    }
  }
  const int scale = 1 << (level_widths.size() - 1);
  if (height % scale != 0 || width % scale != 0 || height / scale < 2 || width / scale < 2) {
    throw ValidationError("resolution must be divisible by 2^(levels-1) with at least 2 pixels at the coarsest level");
  }
  check_range("blocks_per_level", blocks_per_level, 1, 8);
  check_range("heads", heads, 1, 64);
  for (int w : level_widths) {
    if (w % heads != 0) throw ValidationError("every level width must be divisible by 'heads'");
    if (w % 4 != 0) throw ValidationError("every level width must be divisible by 4 (group norm)");
  }
  check_range("max_drags", max_drags, 1, kMaxDrags);
  if (attention != "all_to_first" && attention != "per_frame") {
    throw ValidationError("config field 'attention' must be 'all_to_first' or 'per_frame'");
  }
  check_range("attention_max_resolution", attention_max_resolution, 0, 4096);
  check_range("diffusion_steps", diffusion_steps, 2, 100000);
  if (schedule != "discrete" && schedule != "continuous") {
    throw ValidationError("config field 'schedule' must be 'discrete' or 'continuous'");
  }
  check_range("log_sigma_mean", log_sigma_mean, -10.0, 10.0);
  check_range("log_sigma_std", log_sigma_std, 1e-6, 10.0);
  check_range("sampler_steps", sampler_steps, 1, diffusion_steps);
  check_range("guidance_max", guidance_max, 0.0, 50.0);
  check_range("guidance_min", guidance_min, 0.0, 50.0);
  check_range("cfg_drop_prob", cfg_drop_prob, 0.0, 1.0);
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw ValidationError("config field 'ema_decay' must lie in (0, 1)");
  check_range("learning_rate", learning_rate, 1e-8, 1.0);
  check_range("grad_clip", grad_clip, 0.0, 1e6);
  check_range("batch_size", batch_size, 1, 1024);
}

std::string to_json_text(const RunConfig& c) {
  json j;
  j["height"] = c.height;
  j["width"] = c.width;
  j["frame_count"] = c.frame_count;
  j["level_widths"] = c.level_widths;
  j["blocks_per_level"] = c.blocks_per_level;
  j["heads"] = c.heads;
  j["max_drags"] = c.max_drags;
  j["attention"] = c.attention;
  j["attention_max_resolution"] = c.attention_max_resolution;
  j["diffusion_steps"] = c.diffusion_steps;
  j["schedule"] = c.schedule;
  j["log_sigma_mean"] = c.log_sigma_mean;
  j["log_sigma_std"] = c.log_sigma_std;
  j["sampler_steps"] = c.sampler_steps;
  j["guidance_max"] = c.guidance_max;
  j["guidance_min"] = c.guidance_min;
  j["cfg_drop_prob"] = c.cfg_drop_prob;
  j["ema_decay"] = c.ema_decay;
  j["learning_rate"] = c.learning_rate;
  j["grad_clip"] = c.grad_clip;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  return j.dump(2);
}

RunConfig run_config_from_json_text(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config must be a JSON object");

  RunConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "height") c.height = value.get<int>();
      else if (key == "width") c.width = value.get<int>();
      else if (key == "frame_count") c.frame_count = value.get<int>();
      else if (key == "level_widths") c.level_widths = value.get<std::vector<int>>();
      else if (key == "blocks_per_level") c.blocks_per_level = value.get<int>();
      else if (key == "heads") c.heads = value.get<int>();
      else if (key == "max_drags") c.max_drags = value.get<int>();
      else if (key == "attention") c.attention = value.get<std::string>();
      else if (key == "attention_max_resolution") c.attention_max_resolution = value.get<int>();
      else if (key == "diffusion_steps") c.diffusion_steps = value.get<int>();
      else if (key == "schedule") c.schedule = value.get<std::string>();
      else if (key == "log_sigma_mean") c.log_sigma_mean = value.get<double>();
      else if (key == "log_sigma_std") c.log_sigma_std = value.get<double>();
      else if (key == "sampler_steps") c.sampler_steps = value.get<int>();
      else if (key == "guidance_max") c.guidance_max = value.get<double>();
      else if (key == "guidance_min") c.guidance_min = value.get<double>();
      else if (key == "cfg_drop_prob") c.cfg_drop_prob = value.get<double>();
      else if (key == "ema_decay") c.ema_decay = value.get<double>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "grad_clip") c.grad_clip = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw ValidationError("unknown config key '" + key + "'");
    }
  } catch (const json::type_error& e) {
    throw ValidationError(std::string("config field has the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json_text(ss.str());
}

void save_run_config(const RunConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write config file '" + path + "'");
  out << to_json_text(config) << "\n";
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace partdrag
