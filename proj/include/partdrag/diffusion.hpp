#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <torch/torch.h>

#include "partdrag/core_types.hpp"
#include "partdrag/denoiser.hpp"

namespace partdrag {

enum class ScheduleMode { Discrete, Continuous };

/// Noise levels expressed as alpha_bar (signal fraction). Discrete mode is a
/// cosine schedule over t = 0..T with alpha_bar[0] = 1 and alpha_bar[T] = 0.
/// Continuous mode draws log sigma ~ N(mean, std^2) and maps it through
/// alpha_bar = 1 / (1 + sigma^2).
class NoiseSchedule {
public:
  static NoiseSchedule discrete_cosine(int steps);
  static NoiseSchedule continuous(double log_sigma_mean, double log_sigma_std);
  static NoiseSchedule from(const RunConfig& config);

  ScheduleMode mode() const { return mode_; }
  int steps() const { return static_cast<int>(alpha_bars_.size()) - 1; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }
  double alpha_bar(int t) const { return alpha_bars_.at(static_cast<std::size_t>(t)); }

  /// Noise level of one training example.
  double sample_training_level(std::mt19937_64& rng) const;

  /// S + 1 levels from the noisiest point down to alpha_bar = 1, uniformly
  /// spaced in t for the discrete schedule.
  std::vector<double> sampling_levels(int sampler_steps) const;

private:
  ScheduleMode mode_ = ScheduleMode::Discrete;
  std::vector<double> alpha_bars_;
  double log_sigma_mean_ = 0.7;
  double log_sigma_std_ = 1.6;
};

/// sqrt(alpha_bar) z0 + sqrt(1 - alpha_bar) eps.
torch::Tensor add_noise(const torch::Tensor& z0, double alpha_bar, const torch::Tensor& eps);
/// Per-item variant; alpha_bar is [B] and z0 is [B, ...].
torch::Tensor add_noise(const torch::Tensor& z0, const torch::Tensor& alpha_bar, const torch::Tensor& eps);

/// Linearly increasing per-frame guidance: w_n = w_min + (w_max - w_min) n / (N - 1),
/// n = 0..N-1. A single frame gets w_min.
std::vector<double> guidance_weights(int frames, double w_max, double w_min = 1.0);

/// eps_uncond + w_n (eps_cond - eps_uncond) per frame; inputs are [B, N, ...].
torch::Tensor cfg_combine(const torch::Tensor& eps_cond, const torch::Tensor& eps_uncond,
                          const std::vector<double>& weights);

/// eps_theta(z_t, alpha_bar, reference, drags) with z_t [B, N, C, H, W].
using NoisePredictor = std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&, const torch::Tensor&,
                                                   const std::vector<DragSet>&)>;

NoisePredictor predictor_of(Denoiser model);

struct DiffusionRng {
  explicit DiffusionRng(std::uint64_t seed);
  std::mt19937_64 host;
  torch::Generator noise;
};

struct TrainingBatch {
  torch::Tensor videos;  // [B, N, C, H, W]; frame 0 is the reference
  std::vector<DragSet> drags;
};

struct LossResult {
  torch::Tensor loss;
  std::vector<double> alpha_bars;
  std::vector<bool> dropped;
};

/// Mean squared error between the sampled noise and the prediction. Each
/// item's drags are replaced by the empty set with probability drop_prob.
LossResult training_loss(const TrainingBatch& batch, const NoisePredictor& predict, const NoiseSchedule& schedule,
                         double drop_prob, DiffusionRng& rng);

struct SampleOptions {
  int steps = 50;
  double guidance_max = 5.0;
  double guidance_min = 1.0;
  std::uint64_t seed = 0;
  /// Evaluate the unconditional branch even when it matches the conditional one.
  bool force_two_branches = false;
};

/// Ancestral sampling from pure noise with per-frame linearly increasing
/// guidance. reference: [B, C, H, W]. Returns [B, N, C, H, W] clipped to [-1, 1].
torch::Tensor sample(const NoisePredictor& predict, const torch::Tensor& reference, const std::vector<DragSet>& drags,
                     int frames, const NoiseSchedule& schedule, const SampleOptions& options);

struct TrainingExample {
  Video video;
  DragSet drags;
};

/// Optimizer loop over a DenoiserState: AdamW, gradient clipping, EMA with
/// warmup (effective decay min(decay, (1 + step) / (10 + step))).
class Trainer {
public:
  Trainer(DenoiserState& state, std::uint64_t seed);

  /// One optimizer step on the given examples. Returns the loss.
  double step(const std::vector<const TrainingExample*>& batch);

  /// Steps on the next config.batch_size examples of a reshuffled pass over the dataset.
  double step(const std::vector<TrainingExample>& dataset);

  const NoiseSchedule& schedule() const { return schedule_; }

private:
  DenoiserState& state_;
  NoiseSchedule schedule_;
  DiffusionRng rng_;
  torch::optim::AdamW optimizer_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

TrainingBatch make_batch(const std::vector<const TrainingExample*>& examples);

}  // namespace partdrag
