#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "partdrag/core_types.hpp"

namespace partdrag {

/// Maps world (x, y) in [x0, x0 + width) x [y0, y0 + height) onto the image,
/// y pointing up. Depth is z; smaller is closer.
struct OrthographicCamera {
  double x0 = 0;
  double y0 = 0;
  double width = 1;
  double height = 1;
};

/// X_cam = R X + t; w = fx X_cam.x / X_cam.z + cx, h = fy X_cam.y / X_cam.z + cy.
/// Depth is X_cam.z, which must be positive.
struct PinholeCamera {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  std::array<double, 3> translation{0, 0, 0};
};

struct Camera {
  std::variant<OrthographicCamera, PinholeCamera> model{OrthographicCamera{}};
  Resolution resolution{256, 256};
};

struct Projection {
  double h = 0;  // continuous pixel coordinates
  double w = 0;
  double depth = 0;
  bool valid = true;  // false behind a pinhole camera
};

Projection project(const Camera& camera, double x, double y, double z);

/// Pixel containing a projection, clamped to the image.
Pixel to_pixel(const Projection& p, Resolution res);

/// Aligned point clouds: persistent point identity across timesteps.
struct MotionClip {
  int timesteps = 0;
  int points = 0;
  std::vector<double> positions;  // T x P x 3
  std::vector<int> submodels;     // empty or P entries
  std::optional<Camera> camera;

  MotionClip() = default;
  MotionClip(int t, int p) : timesteps(t), points(p), positions(static_cast<std::size_t>(t) * p * 3, 0.0) {}

  double at(int t, int p, int axis) const { return positions[(static_cast<std::size_t>(t) * points + p) * 3 + axis]; }
  double& at(int t, int p, int axis) { return positions[(static_cast<std::size_t>(t) * points + p) * 3 + axis]; }

  /// Throws ValidationError unless T >= 2, P >= 1, sizes agree and all values are finite.
  void validate() const;
};

/// Path length of every point, sum over consecutive timesteps of step lengths.
std::vector<double> total_displacements(const MotionClip& clip);

struct MotionMetrics {
  std::array<double, 3> bbox_dims{};    // union over all timesteps
  std::array<double, 3> bbox_center{};
  double largest_bbox = 0;  // diagonal of the largest single-timestep bbox
  double mean_displacement = 0;
  double max_displacement = 0;

  /// The nine metrics followed by mean/max displacement and
  /// union-diagonal/largest-single-diagonal ratios.
  std::vector<double> features() const;
};

inline constexpr int kMotionFeatureCount = 11;

MotionMetrics compute_motion_metrics(const MotionClip& clip);

/// Bagged CART trees with Gini splits.
struct ForestConfig {
  int trees = 64;
  int max_depth = 10;
  int min_samples_split = 2;
  int features_per_split = 0;  // 0 means round(sqrt(feature count))
  std::uint64_t seed = 0;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0;
  int left = -1;
  int right = -1;
  double keep_probability = 0;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;

  double predict_probability(const std::vector<double>& x) const;
  int depth() const;
};

struct FilterModel {
  ForestConfig config;
  int feature_count = 0;
  std::vector<DecisionTree> trees;
  double training_accuracy = 0;

  /// Fraction of trees voting keep.
  double keep_probability(const std::vector<double>& x) const;
  bool keep(const std::vector<double>& x) const { return keep_probability(x) >= 0.5; }
  bool keep(const MotionMetrics& m) const { return keep(m.features()); }

  std::string to_json_text() const;
  static FilterModel from_json_text(const std::string& text);
};

/// Generic entry point on raw feature rows; labels are true for keep.
FilterModel train_forest(const std::vector<std::vector<double>>& rows, const std::vector<bool>& labels,
                         const ForestConfig& config);

FilterModel train_filter(const std::vector<std::pair<MotionMetrics, bool>>& samples, const ForestConfig& config);

/// Multimodal realism review.
enum class ReviewVerdict { Keep, Discard };

struct ReviewPrompt {
  std::string system;
  std::string user;
};

/// The fixed instruction pair sent with the four renders.
const ReviewPrompt& realism_prompt();

class MalformedReplyError : public Error {
public:
  using Error::Error;
};

/// "Yes" means filter out. Surrounding whitespace, case and punctuation are ignored.
ReviewVerdict parse_review_reply(const std::string& reply);

class ReviewClient {
public:
  virtual ~ReviewClient() = default;
  /// Returns the raw text answer for the prompt and PNG images.
  virtual std::string complete(const ReviewPrompt& prompt, const std::vector<std::vector<std::uint8_t>>& images) = 0;
};

/// Deterministic offline client answering a fixed reply.
class MockReviewClient : public ReviewClient {
public:
  explicit MockReviewClient(std::string reply = "No") : reply_(std::move(reply)) {}
  std::string complete(const ReviewPrompt& prompt, const std::vector<std::vector<std::uint8_t>>& images) override;
  int calls() const { return calls_.load(); }
  const ReviewPrompt& last_prompt() const { return last_prompt_; }

private:
  std::string reply_;
  std::atomic<int> calls_{0};
  ReviewPrompt last_prompt_;
  std::mutex mutex_;
};

struct HttpReviewOptions {
  std::string url = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-4o";
  std::string token_env = "PARTDRAG_REVIEW_TOKEN";
  int max_attempts = 4;
  std::chrono::milliseconds initial_backoff{500};
  int max_in_flight = 2;
  int timeout_seconds = 60;
};

/// Chat-completions style JSON over HTTP(S) with retry and exponential
/// backoff; concurrent calls beyond max_in_flight wait.
class HttpReviewClient : public ReviewClient {
public:
  explicit HttpReviewClient(HttpReviewOptions options);
  std::string complete(const ReviewPrompt& prompt, const std::vector<std::vector<std::uint8_t>>& images) override;

  /// Request body for the prompt and images; exposed for inspection.
  std::string request_body(const ReviewPrompt& prompt, const std::vector<std::vector<std::uint8_t>>& images) const;

private:
  HttpReviewOptions options_;
  std::string token_;
  std::mutex mutex_;
  std::condition_variable slot_free_;
  int in_flight_ = 0;
};

/// Timesteps of the four animation quarters: round(q (T - 1) / 3), q = 0..3.
std::array<int, 4> quarter_timesteps(int timesteps);

/// Point-splat render of one timestep; points shaded by sub-model and depth.
Video render_clip(const MotionClip& clip, const Camera& camera, int timestep, int splat_radius = 1);

/// Sends the four renders and parses the answer.
ReviewVerdict realism_review_request(const std::vector<Video>& renders, ReviewClient& client);

/// Renders the quarters of a clip and reviews them.
ReviewVerdict review_clip(const MotionClip& clip, const Camera& camera, ReviewClient& client);

/// Points whose frame-0 projection wins the z-buffer test. Each point writes
/// its depth to a (2r + 1)^2 square.
std::vector<bool> visible_points(const MotionClip& clip, const Camera& camera, int timestep, int splat_radius);

struct DragSamplingPolicy {
  int max_drags = kMaxDrags;
  int count = 0;  // drags without sub-models; 0 draws uniformly from [1, max_drags]
  /// A sub-model moves when its mean displacement exceeds this fraction of the clip maximum.
  double moving_fraction = 0.1;
  int splat_radius = 1;
  int frames = 0;  // 0 uses every timestep
  std::optional<double> delta;  // dedup threshold; default_dedup_delta when empty
};

/// Squared distance threshold under which two drags count as duplicates:
/// 20 N at 256 x 256, scaled by image area.
double default_dedup_delta(Resolution res, int frames);

/// sum_n ||v_i^n - v_j^n||^2.
double trajectory_distance2(const Drag& a, const Drag& b);

/// Repeatedly drops a uniformly chosen member of a uniformly chosen violating
/// pair until every pair is farther apart than delta.
DragSet dedup_drags(const DragSet& drags, double delta, std::mt19937_64& rng);

/// Frame-0-visible points drawn with probability proportional to total
/// displacement, one per moving sub-model when sub-models exist; their 3-D
/// tracks project to drag trajectories. Throws ValidationError when no
/// visible point moves.
DragSet sample_drags(const MotionClip& clip, const Camera& camera, const DragSamplingPolicy& policy,
                     std::mt19937_64& rng);

/// Clip directory: positions.txt ("T P" then T*P lines "x y z", timestep-major),
/// optional submodels.txt (P integers), optional camera.json.
MotionClip read_clip_dir(const std::string& dir);
void write_clip_dir(const std::string& dir, const MotionClip& clip);

std::string camera_to_json_text(const Camera& camera);
Camera camera_from_json_text(const std::string& text);

}  // namespace partdrag
