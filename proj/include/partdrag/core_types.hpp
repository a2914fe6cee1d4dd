#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace partdrag {

/// Maximum number of drags a conditioning signal can carry.
inline constexpr int kMaxDrags = 5;

/// Channels per drag in the multi-resolution encoding: (u), (v^n), (v^N), two each.
inline constexpr int kEncodingChannels = 6;

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Raised when a value violates a documented invariant. Carries the offending
/// drag index when the failure concerns a specific drag.
class ValidationError : public Error {
public:
  explicit ValidationError(const std::string& what, std::optional<int> drag_index = std::nullopt)
      : Error(what), drag_index_(drag_index) {}

  std::optional<int> drag_index() const noexcept { return drag_index_; }

private:
  std::optional<int> drag_index_;
};

struct Resolution {
  int height = 64;
  int width = 64;

  friend bool operator==(const Resolution&, const Resolution&) = default;
};

/// Throws ValidationError unless both sides are at least 8 pixels.
void validate_resolution(Resolution res);

/// 0-based, row-major pixel coordinate.
struct Pixel {
  int h = 0;
  int w = 0;

  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

inline bool in_bounds(Pixel p, Resolution res) {
  return p.h >= 0 && p.w >= 0 && p.h < res.height && p.w < res.width;
}

/// A tracked point: origin in the reference frame plus its location in every
/// frame. trajectory[0] must equal origin.
struct Drag {
  Pixel origin;
  std::vector<Pixel> trajectory;

  int frame_count() const { return static_cast<int>(trajectory.size()); }
  Pixel terminus() const { return trajectory.back(); }

  /// Straight drag from origin to terminus, linearly interpolated and rounded
  /// over n frames.
  static Drag straight(Pixel origin, Pixel terminus, int n);

  friend bool operator==(const Drag&, const Drag&) = default;
};

struct DragSet {
  std::vector<Drag> drags;
  int capacity = kMaxDrags;

  int size() const { return static_cast<int>(drags.size()); }
  bool empty() const { return drags.empty(); }

  friend bool operator==(const DragSet&, const DragSet&) = default;
};

/// Returns the set unchanged when every drag is in bounds, has exactly n
/// trajectory points starting at its origin, and the set fits its capacity.
DragSet validate_drag_set(const DragSet& drags, Resolution res, int n);

/// Dense N x H x W x C video, values in [-1, 1]. Frame 0 is the reference.
struct Video {
  int frames = 0;
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<float> values;

  Video() = default;
  Video(int n, int h, int w, int c, float fill = 0.0f)
      : frames(n), height(h), width(w), channels(c),
        values(static_cast<std::size_t>(n) * h * w * c, fill) {}

  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width * channels; }

  std::size_t index(int n, int h, int w, int c) const {
    return ((static_cast<std::size_t>(n) * height + h) * width + w) * channels + c;
  }
  float& at(int n, int h, int w, int c) { return values[index(n, h, w, c)]; }
  float at(int n, int h, int w, int c) const { return values[index(n, h, w, c)]; }

  std::span<float> frame(int n) { return {values.data() + n * frame_size(), frame_size()}; }
  std::span<const float> frame(int n) const { return {values.data() + n * frame_size(), frame_size()}; }

  Resolution resolution() const { return {height, width}; }
  bool same_shape(const Video& o) const {
    return frames == o.frames && height == o.height && width == o.width && channels == o.channels;
  }

  /// Single-frame video holding frame 0.
  Video reference_frame() const;

  /// Video of n copies of frame 0.
  Video repeat_reference(int n) const;

  friend bool operator==(const Video&, const Video&) = default;
};

/// Throws ValidationError if any value is NaN or infinite.
void require_finite(const Video& v, std::string_view what);

/// Every tunable of a run. Serialized as a flat JSON object; unknown keys are
/// rejected on load.
struct RunConfig {
  int height = 64;
  int width = 64;
  int frame_count = 8;
  std::vector<int> level_widths{64, 128, 256};
  int blocks_per_level = 2;
  int heads = 4;
  int max_drags = kMaxDrags;
  std::string attention = "all_to_first";  // or "per_frame"
  int attention_max_resolution = 16;
  int diffusion_steps = 1000;
  std::string schedule = "discrete";  // or "continuous"
  double log_sigma_mean = 0.7;
  double log_sigma_std = 1.6;
  int sampler_steps = 50;
  double guidance_max = 5.0;
  double guidance_min = 1.0;
  double cfg_drop_prob = 0.1;
  double ema_decay = 0.9999;
  double learning_rate = 2e-4;
  double grad_clip = 1.0;
  int batch_size = 8;
  std::uint64_t seed = 0;

  Resolution resolution() const { return {height, width}; }

  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

std::string to_json_text(const RunConfig& config);
RunConfig run_config_from_json_text(std::string_view text);
RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& config, const std::string& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace partdrag
