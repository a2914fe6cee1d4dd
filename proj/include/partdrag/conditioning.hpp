#pragma once

#include <vector>

#include <torch/torch.h>

#include "partdrag/core_types.hpp"
#include "partdrag/drag_encoding.hpp"

namespace partdrag {

/// Scale and shift fields for adaptive normalization, each [B, N, s, s, C].
struct ModulationParams {
  torch::Tensor scale;
  torch::Tensor shift;
};

/// Drag tokens for cross-attention: one key/value pair per slot for every
/// batch item and frame. keys/values are [B, N, K_max, C]; occupied is
/// [B, K_max] (bool). Unoccupied slots hold exact zeros.
struct DragTokenBank {
  torch::Tensor keys;
  torch::Tensor values;
  torch::Tensor occupied;
};

/// f * (1 + scale) + shift, elementwise.
torch::Tensor modulate(const torch::Tensor& features, const ModulationParams& params);

/// Stacks per-item encodings into a [B * N, 6 * K_max, s, s] tensor.
torch::Tensor encodings_to_tensor(const std::vector<const DragEncoding*>& encodings,
                                  torch::TensorOptions options = {});

/// Bilinear sample of `features` ([M, s, s, C], channel-last) at fractional
/// grid positions (row, col), one per row of `map_index`. Positions are
/// clamped to the grid. Returns [P, C].
torch::Tensor bilinear_sample(const torch::Tensor& features, const std::vector<int64_t>& map_index,
                              const std::vector<double>& rows, const std::vector<double>& cols);

/// Maps a pixel coordinate at full resolution to a fractional cell position
/// on an s-sized grid (cell centres at integers).
double pixel_to_grid(int pixel, int extent, int s);

/// Convolutional embedding of the drag encoding into scale/shift fields.
/// The final convolution starts at zero, so the module outputs zeros until
/// trained.
class DragEmbedderImpl : public torch::nn::Module {
public:
  DragEmbedderImpl(int max_drags, int width);

  /// encoding: [B * N, 6 * K_max, s, s]. Returns [B, N, s, s, 2C] with the
  /// scale half first.
  torch::Tensor forward(const torch::Tensor& encoding, int64_t batch, int64_t frames);

  ModulationParams split(const torch::Tensor& embedded) const;

  int width() const { return width_; }

private:
  int width_;
  torch::nn::Conv2d conv_in{nullptr};
  torch::nn::Conv2d conv_out{nullptr};
};
TORCH_MODULE(DragEmbedder);

/// Regresses one key and one value vector per drag from normalized
/// coordinates of u, v^n and v^N and the block features sampled there.
/// Output projections start at zero.
class DragTokenizerImpl : public torch::nn::Module {
public:
  DragTokenizerImpl(int width, int max_drags);

  /// features: [B, N, s, s, C] channel-last block features. drags.size() == B.
  /// The origin is sampled on frame 0, v^n on frame n and v^N on the last frame.
  DragTokenBank forward(const std::vector<DragSet>& drags, const torch::Tensor& features, Resolution res);

  int width() const { return width_; }
  int max_drags() const { return max_drags_; }

private:
  int width_;
  int max_drags_;
  torch::nn::Sequential key_mlp{nullptr};
  torch::nn::Sequential value_mlp{nullptr};
};
TORCH_MODULE(DragTokenizer);

/// Softmax attention of query tokens over the reference pair followed by the
/// K_max drag slots. Zero slots take part in the softmax as literal zero
/// keys/values.
///
/// queries: [X, L, C]; reference_key/value: [X, C]; drag_keys/values: [X, K_max, C].
torch::Tensor cross_attend(const torch::Tensor& queries, const torch::Tensor& reference_key,
                           const torch::Tensor& reference_value, const torch::Tensor& drag_keys,
                           const torch::Tensor& drag_values, int heads, torch::Tensor* weights = nullptr);

/// Cross-attention sub-layer: projects queries from features and the
/// reference token into key/value, attends over 1 + K_max pairs, and projects
/// back. Returns the residual update (not added to the input).
class ConditionedCrossAttentionImpl : public torch::nn::Module {
public:
  ConditionedCrossAttentionImpl(int width, int heads);

  /// features: [B, N, s, s, C]; reference: [B, C].
  torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& reference, const DragTokenBank& bank);

private:
  int heads_;
  torch::nn::Linear to_q{nullptr}, to_k{nullptr}, to_v{nullptr}, to_out{nullptr};
};
TORCH_MODULE(ConditionedCrossAttention);

}  // namespace partdrag
