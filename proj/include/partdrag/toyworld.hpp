#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "partdrag/core_types.hpp"
#include "partdrag/curation.hpp"
#include "partdrag/image_io.hpp"

namespace partdrag {

/// Plane point in continuous pixel units: x runs along width, y along height.
/// Pixel (h, w) covers [w, w + 1) x [h, h + 1).
struct Vec2 {
  double x = 0;
  double y = 0;
};

enum class JointKind { Root, Hinge, Prismatic };

/// Rigid rectangle. The root never moves; a hinge part rotates about its pivot
/// by amplitude * ease(t) radians; a prismatic part slides along its axis by
/// amplitude * ease(t) pixels.
struct ScenePart {
  JointKind joint = JointKind::Root;
  Vec2 center;              // rest pose
  double angle = 0;         // rest orientation of the long axis, radians
  double half_length = 1;   // along the long axis
  double half_thickness = 1;
  Vec2 pivot;               // hinge only
  Vec2 axis{1, 0};          // prismatic only, unit length
  double amplitude = 0;
  std::array<float, 3> color{};

  bool moving() const { return joint != JointKind::Root && amplitude != 0; }
};

struct Pose {
  Vec2 center;
  double angle = 0;
};

/// Smoothstep 3t^2 - 2t^3, monotone on [0, 1].
double ease(double t);

struct ArticulatedScene {
  std::uint64_t seed = 0;
  std::array<float, 3> background{};
  std::vector<ScenePart> parts;  // parts[0] is the root; later parts draw on top

  Pose pose(int part, int frame, int frames) const;
};

/// Dense tracks of every frame-0 pixel of one part; tracks[i] has N entries.
struct PartTracks {
  int part = 0;  // label in the masks (index into scene.parts plus one)
  bool moving = false;
  std::vector<std::vector<Pixel>> tracks;
};

struct SceneRender {
  ArticulatedScene scene;
  Video video;
  std::vector<LabelImage> masks;  // per frame; 0 is background, k + 1 is parts[k]
  std::vector<PartTracks> parts;
};

/// Random scene with a static root and one to three limbs, at least one of
/// them moving. Seeds whose parts would leave the frame, or become hidden,
/// are resampled from the same stream.
ArticulatedScene random_scene(std::uint64_t seed, Resolution res, int frames);

/// Rasterizes and tracks an explicit scene. No validity checks.
SceneRender render_scene(const ArticulatedScene& scene, Resolution res, int frames);

/// random_scene followed by render_scene.
SceneRender generate_scene(std::uint64_t seed, Resolution res, int frames);

/// Sum of Euclidean step lengths along a pixel track.
double path_length(const std::vector<Pixel>& track);

struct TrainingTriplet {
  Video video;
  Video reference;
  DragSet drags;
};

/// One drag per moving part, its origin drawn on that part's frame-0 pixels
/// with probability proportional to path length; then dedup.
TrainingTriplet make_training_triplet(const SceneRender& scene, std::mt19937_64& rng);

/// Synthetic 3-D point-cloud clips for the curation filter.
enum class ClipKind { Static, Translation, Articulated };

/// Box-shaped body with attached slabs. Static: nothing moves. Translation:
/// the whole object slides a large distance. Articulated: one or two slabs
/// swing about a hinge edge while the body stays put.
MotionClip synthetic_clip(ClipKind kind, std::uint64_t seed, int timesteps = 16, int points = 400);

/// Keep label by construction: only articulated clips are kept.
inline bool construction_label(ClipKind kind) { return kind == ClipKind::Articulated; }

/// On-disk toy dataset.
struct ToyDatasetConfig {
  int height = 32;
  int width = 32;
  int frames = 4;
  std::uint64_t first_seed = 0;
  int count = 8;

  Resolution resolution() const { return {height, width}; }
};

struct ToySample {
  std::string id;
  std::uint64_t seed = 0;
  Video video;
  DragSet drags;
  std::vector<LabelImage> masks;
  std::vector<PartTracks> parts;
};

/// Pure function of (seed range, config).
std::string dataset_config_hash(const ToyDatasetConfig& config);

/// Writes manifest.json and one directory per sample. Samples are generated in parallel.
void write_toy_dataset(const std::string& dir, const ToyDatasetConfig& config, int threads = 0);

struct DatasetManifest {
  ToyDatasetConfig config;
  std::string config_hash;
  std::vector<std::string> samples;
  std::vector<std::uint64_t> seeds;
};

DatasetManifest read_manifest(const std::string& dir);

/// Reads one sample directory. Throws Error when files are missing or inconsistent.
ToySample read_toy_sample(const std::string& dir, const std::string& id, bool with_parts = true);

void write_sample_dir(const std::string& sample_dir, const ToySample& sample);

}  // namespace partdrag
