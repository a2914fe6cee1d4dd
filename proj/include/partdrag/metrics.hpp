#pragma once

#include <array>
#include <limits>
#include <string>
#include <vector>

#include "partdrag/core_types.hpp"
#include "partdrag/image_io.hpp"

namespace partdrag {

/// 10 log10(peak^2 / MSE). Video values live in [-1, 1], so the default peak
/// is 2. Identical inputs return +infinity.
double psnr(const Video& a, const Video& b, double peak = 2.0);

/// Mean SSIM with an 11 x 11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range L, over valid window positions, averaged over
/// frames and channels. Frames smaller than the window use the largest odd
/// window that fits.
double ssim(const Video& a, const Video& b, double dynamic_range = 2.0);

enum class PointRole { Origin, Foreground };

/// M point tracks of N frames each, in continuous (h, w) pixel coordinates.
struct TrajectorySet {
  int frames = 0;
  std::vector<int> ids;
  std::vector<PointRole> roles;
  std::vector<double> coords;  // M x N x 2

  int size() const { return static_cast<int>(ids.size()); }
  double h(int m, int n) const { return coords[(static_cast<std::size_t>(m) * frames + n) * 2]; }
  double w(int m, int n) const { return coords[(static_cast<std::size_t>(m) * frames + n) * 2 + 1]; }

  void add(int id, PointRole role, const std::vector<std::array<double, 2>>& track);
  void add(int id, PointRole role, const std::vector<Pixel>& track);

  /// Throws ValidationError if ids repeat, lengths disagree or points leave the image.
  void validate(Resolution res) const;
};

enum class FlowMode { Origins, Foreground };

/// RMSE of positions over the selected points and all frames. Origins mode
/// keeps only points tagged as drag origins; foreground mode keeps all.
/// Points are matched by id; the two sets must hold the same ids.
double flow_error(const TrajectorySet& pred, const TrajectorySet& gt, FlowMode mode);

std::string trajectories_to_json_text(const TrajectorySet& t);
TrajectorySet trajectories_from_json_text(const std::string& text);

/// Mean colour of each label in the reference frame; label 0 is the background.
struct Palette {
  std::vector<int> labels;
  std::vector<std::array<float, 3>> colors;
};

Palette estimate_palette(const Video& reference, const LabelImage& mask);

/// Nearest-palette-colour label per pixel for every frame.
std::vector<LabelImage> segment_video(const Video& video, const Palette& palette);

struct TrackSeed {
  int id = 0;
  PointRole role = PointRole::Foreground;
  int label = 0;
  Pixel origin;
};

/// Seeds for drag origins plus up to max_foreground part pixels, taken with
/// a uniform stride over the frame-0 mask.
std::vector<TrackSeed> make_track_seeds(const DragSet& drags, const LabelImage& mask, int max_foreground = 256);

/// Colour-segmentation tracker: each part's per-frame mask centroid and
/// principal-axis angle define a rigid motion that carries its seeds.
TrajectorySet track_points(const Video& video, const Palette& palette, const std::vector<TrackSeed>& seeds);

struct DirectionResult {
  int correct = 0;
  int total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
};

/// A drag is correct when the centroid of its part (the label under u in the
/// reference mask), measured in the evaluated video's masks between first and
/// last frame, moves with positive dot product against v^N - u. Throws
/// ValidationError on an empty mask unless lenient, in which case it counts
/// as incorrect.
DirectionResult direction_accuracy(const std::vector<LabelImage>& video_masks, const DragSet& drags,
                                   const LabelImage& reference_mask, bool lenient = false);

struct SampleEvaluation {
  double psnr = 0;
  double ssim = 0;
  double flow_origins = 0;
  double flow_foreground = 0;
  DirectionResult direction;
};

/// Scores a video against toy ground truth. Both videos are tracked with the
/// same colour tracker, seeded from the drag origins and the reference mask,
/// so identical videos score zero flow error.
SampleEvaluation evaluate_video(const Video& pred, const Video& gt, const DragSet& drags,
                                const LabelImage& reference_mask, int max_foreground = 256);

}  // namespace partdrag
