#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "partdrag/conditioning.hpp"
#include "partdrag/core_types.hpp"
#include "partdrag/drag_encoding.hpp"

namespace partdrag {

enum class SpatialAttention { AllToFirst, PerFrame };

struct DenoiserConfig {
  Resolution resolution{64, 64};
  int frames = 8;
  int image_channels = 3;
  std::vector<int> widths{64, 128, 256};
  int blocks_per_level = 2;
  int heads = 4;
  int max_drags = kMaxDrags;
  SpatialAttention attention = SpatialAttention::AllToFirst;
  /// Spatial attention runs only at levels whose side is at most this value;
  /// finer levels use a 3x3 convolution on the modulated features instead.
  int attention_max_resolution = 16;

  static DenoiserConfig from(const RunConfig& run);

  int levels() const { return static_cast<int>(widths.size()); }
  int level_size(int level) const { return resolution.height >> level; }
  void validate() const;
};

/// [N, C, H, W] float tensor from a video (channel-last storage is transposed).
torch::Tensor video_to_tensor(const Video& video);
/// Inverse of video_to_tensor; accepts [N, C, H, W].
Video tensor_to_video(const torch::Tensor& frames);

/// Sinusoidal features of a per-item scalar, [B] -> [B, dim].
torch::Tensor sinusoidal_embedding(const torch::Tensor& values, int dim);

class ResBlockImpl : public torch::nn::Module {
public:
  ResBlockImpl(int in, int out, int embed_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& embed);

private:
  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
  torch::nn::Linear embed_proj{nullptr};
};
TORCH_MODULE(ResBlock);

/// Everything a transformer block needs besides its input features.
struct BlockContext {
  int64_t batch = 0;
  int64_t frames = 0;
  torch::Tensor encoding;   // [B * N, 6 K_max, s, s] at this block's size
  torch::Tensor reference;  // [B, C] pooled reference token
  const std::vector<DragSet>* drags = nullptr;
  Resolution resolution;
};

/// Per-level conditioning block, in order: drag modulation of the normalized
/// features, spatial attention (all-to-first or per-frame), cross-attention
/// over the reference and drag tokens, temporal attention across frames.
class VideoTransformerBlockImpl : public torch::nn::Module {
public:
  VideoTransformerBlockImpl(int width, int heads, int max_drags, bool spatial, SpatialAttention mode);

  /// x: [B * N, C, s, s].
  torch::Tensor forward(const torch::Tensor& x, const BlockContext& ctx);

  DragEmbedder embedder{nullptr};
  DragTokenizer tokenizer{nullptr};

private:
  int width_;
  int heads_;
  bool spatial_;
  SpatialAttention mode_;
  torch::nn::GroupNorm norm_mod{nullptr};
  torch::nn::Linear to_qkv{nullptr}, spatial_out{nullptr};
  torch::nn::Conv2d local_mix{nullptr};
  torch::nn::LayerNorm norm_cross{nullptr}, norm_temporal{nullptr};
  ConditionedCrossAttention cross{nullptr};
  torch::nn::Linear temporal_qkv{nullptr}, temporal_out{nullptr};
};
TORCH_MODULE(VideoTransformerBlock);

/// Strided convolutional encoder of the reference frame, globally pooled.
class ReferenceEncoderImpl : public torch::nn::Module {
public:
  ReferenceEncoderImpl(int image_channels, int width);
  torch::Tensor forward(const torch::Tensor& image);

private:
  torch::nn::Sequential convs{nullptr};
};
TORCH_MODULE(ReferenceEncoder);

/// Toy U-shaped video noise predictor eps_theta(z_t, t, y, D).
class DenoiserImpl : public torch::nn::Module {
public:
  explicit DenoiserImpl(DenoiserConfig config);

  /// z_t: [B, N, C, H, W]; alpha_bar: [B]; reference: [B, C, H, W];
  /// drags.size() == B. Returns the predicted noise, same shape as z_t. The
  /// network output is read as v and mapped to eps = sqrt(1 - ab) z_t + sqrt(ab) v.
  torch::Tensor forward(const torch::Tensor& z_t, const torch::Tensor& alpha_bar, const torch::Tensor& reference,
                        const std::vector<DragSet>& drags);

  const DenoiserConfig& config() const { return config_; }
  EncodingCache& encoding_cache() { return cache_; }

private:
  torch::Tensor level_encoding(const std::vector<DragSet>& drags, int level, torch::TensorOptions options);

  DenoiserConfig config_;
  EncodingCache cache_;
  int embed_dim_;
  torch::nn::Sequential time_mlp{nullptr};
  ReferenceEncoder ref_encoder{nullptr};
  torch::nn::ModuleList ref_proj{nullptr};
  torch::nn::Conv2d conv_in{nullptr};
  torch::nn::ModuleList down_res{nullptr}, down_tr{nullptr}, downsample{nullptr};
  ResBlock mid_res1{nullptr}, mid_res2{nullptr};
  VideoTransformerBlock mid_tr{nullptr};
  torch::nn::ModuleList up_res{nullptr}, up_tr{nullptr}, upsample{nullptr};
  torch::nn::GroupNorm norm_out{nullptr};
  torch::nn::Conv2d conv_out{nullptr};
};
TORCH_MODULE(Denoiser);

int64_t parameter_count(const torch::nn::Module& module);

/// shadow <- decay * shadow + (1 - decay) * live for every named parameter.
/// Throws ValidationError when names or shapes differ.
void ema_update(torch::nn::Module& shadow, const torch::nn::Module& live, double decay);

/// Copies every parameter of `from` into `to` (names and shapes must agree).
void copy_parameters(torch::nn::Module& to, const torch::nn::Module& from);

/// Trainable parameters plus their EMA shadow and run metadata.
class DenoiserState {
public:
  explicit DenoiserState(RunConfig config);

  Denoiser& live() { return live_; }
  Denoiser& ema() { return ema_; }
  Denoiser& model(bool use_ema) { return use_ema ? ema_ : live_; }
  const RunConfig& config() const { return config_; }

  int64_t step = 0;

  /// Binary checkpoint: magic, version, JSON header, live and EMA tensors,
  /// trailing checksum.
  void save(const std::string& path) const;
  static std::unique_ptr<DenoiserState> load(const std::string& path);

private:
  RunConfig config_;
  Denoiser live_{nullptr};
  Denoiser ema_{nullptr};
};

void ema_update(DenoiserState& state, double decay);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace partdrag
