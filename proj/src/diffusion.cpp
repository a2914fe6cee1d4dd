#include "partdrag/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace partdrag {

NoiseSchedule NoiseSchedule::discrete_cosine(int steps) {
  if (steps < 2) throw ValidationError("discrete schedule needs at least 2 steps");
  NoiseSchedule s;
  s.mode_ = ScheduleMode::Discrete;
  s.alpha_bars_.resize(static_cast<std::size_t>(steps) + 1);
  constexpr double offset = 0.008;
  auto f = [&](double t) {
    const double c = std::cos((t / steps + offset) / (1 + offset) * std::numbers::pi / 2);
    return c * c;
  };
  const double f0 = f(0);
  for (int t = 0; t <= steps; ++t) s.alpha_bars_[t] = f(t) / f0;
  s.alpha_bars_.front() = 1.0;
  s.alpha_bars_.back() = 0.0;
  return s;
}

NoiseSchedule NoiseSchedule::continuous(double log_sigma_mean, double log_sigma_std) {
  if (!(log_sigma_std > 0)) throw ValidationError("log-sigma std must be positive");
  NoiseSchedule s;
  s.mode_ = ScheduleMode::Continuous;
  s.log_sigma_mean_ = log_sigma_mean;
  s.log_sigma_std_ = log_sigma_std;
  return s;
}

NoiseSchedule NoiseSchedule::from(const RunConfig& config) {
  if (config.schedule == "continuous") return continuous(config.log_sigma_mean, config.log_sigma_std);
  return discrete_cosine(config.diffusion_steps);
}

double NoiseSchedule::sample_training_level(std::mt19937_64& rng) const {
  if (mode_ == ScheduleMode::Discrete) {
    std::uniform_int_distribution<int> t(1, steps());
    return alpha_bars_[t(rng)];
  }
  std::normal_distribution<double> log_sigma(log_sigma_mean_, log_sigma_std_);
  const double sigma = std::exp(log_sigma(rng));
  return 1.0 / (1.0 + sigma * sigma);
}

std::vector<double> NoiseSchedule::sampling_levels(int sampler_steps) const {
  if (sampler_steps < 1) throw ValidationError("sampler needs at least one step");
  std::vector<double> levels;
  levels.reserve(static_cast<std::size_t>(sampler_steps) + 1);
  if (mode_ == ScheduleMode::Discrete) {
    if (sampler_steps > steps()) throw ValidationError("more sampler steps than schedule steps");
    for (int i = sampler_steps; i >= 0; --i) {
      const int t = static_cast<int>(std::lround(static_cast<double>(i) * steps() / sampler_steps));
      levels.push_back(alpha_bars_[t]);
    }
    return levels;
  }
  // Karras-spaced sigmas between the usual EDM extremes, then the clean end.
  constexpr double sigma_max = 80.0, sigma_min = 0.002, rho = 7.0;
  for (int i = 0; i < sampler_steps; ++i) {
    const double a = sampler_steps == 1 ? 0.0 : static_cast<double>(i) / (sampler_steps - 1);
    const double sigma = std::pow(std::pow(sigma_max, 1 / rho) + a * (std::pow(sigma_min, 1 / rho) -
                                                                       std::pow(sigma_max, 1 / rho)),
                                  rho);
    levels.push_back(1.0 / (1.0 + sigma * sigma));
  }
  levels.push_back(1.0);
  return levels;
}

torch::Tensor add_noise(const torch::Tensor& z0, double alpha_bar, const torch::Tensor& eps) {
  if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) throw ValidationError("alpha_bar must lie in [0, 1]");
  if (z0.sizes() != eps.sizes()) throw ValidationError("signal and noise shapes differ");
  if (alpha_bar == 1.0) return z0.clone();
  if (alpha_bar == 0.0) return eps.clone();
  return std::sqrt(alpha_bar) * z0 + std::sqrt(1.0 - alpha_bar) * eps;
}

torch::Tensor add_noise(const torch::Tensor& z0, const torch::Tensor& alpha_bar, const torch::Tensor& eps) {
  if (z0.sizes() != eps.sizes()) throw ValidationError("signal and noise shapes differ");
  if (alpha_bar.dim() != 1 || alpha_bar.size(0) != z0.size(0)) throw ValidationError("alpha_bar must be [B]");
  std::vector<int64_t> shape(z0.dim(), 1);
  shape[0] = z0.size(0);
  auto a = alpha_bar.to(z0.dtype()).reshape(shape);
  return a.sqrt() * z0 + (1 - a).sqrt() * eps;
}

std::vector<double> guidance_weights(int frames, double w_max, double w_min) {
  if (frames < 1) throw ValidationError("guidance needs at least one frame");
  std::vector<double> w(frames, w_min);
  if (frames == 1) return w;
  for (int n = 0; n < frames; ++n) w[n] = w_min + (w_max - w_min) * n / (frames - 1);
  w.back() = w_max;
  return w;
}

torch::Tensor cfg_combine(const torch::Tensor& eps_cond, const torch::Tensor& eps_uncond,
                          const std::vector<double>& weights) {
  if (eps_cond.sizes() != eps_uncond.sizes()) throw ValidationError("guidance branches differ in shape");
  if (eps_cond.dim() < 2 || eps_cond.size(1) != static_cast<int64_t>(weights.size())) {
    throw ValidationError("one guidance weight per frame is required");
  }
  std::vector<int64_t> shape(eps_cond.dim(), 1);
  shape[1] = eps_cond.size(1);
  auto w = torch::tensor(weights, torch::kFloat64).to(eps_cond.dtype()).reshape(shape);
  return eps_uncond + w * (eps_cond - eps_uncond);
}

NoisePredictor predictor_of(Denoiser model) {
  return [model](const torch::Tensor& z, const torch::Tensor& a, const torch::Tensor& ref,
                 const std::vector<DragSet>& d) mutable { return model->forward(z, a, ref, d); };
}

DiffusionRng::DiffusionRng(std::uint64_t seed)
    : host(seed), noise(at::make_generator<at::CPUGeneratorImpl>(seed ^ 0x9e3779b97f4a7c15ULL)) {}

LossResult training_loss(const TrainingBatch& batch, const NoisePredictor& predict, const NoiseSchedule& schedule,
                         double drop_prob, DiffusionRng& rng) {
  const auto& videos = batch.videos;
  if (videos.dim() != 5) throw ValidationError("training videos must be [B, N, C, H, W]");
  const auto B = videos.size(0);
  if (static_cast<int64_t>(batch.drags.size()) != B) throw ValidationError("one drag set per video is required");

  LossResult result;
  std::bernoulli_distribution drop(std::clamp(drop_prob, 0.0, 1.0));
  std::vector<DragSet> drags;
  drags.reserve(B);
  for (int64_t b = 0; b < B; ++b) {
    result.alpha_bars.push_back(schedule.sample_training_level(rng.host));
    const bool d = drop(rng.host);
    result.dropped.push_back(d);
    drags.push_back(d ? DragSet{{}, batch.drags[b].capacity} : batch.drags[b]);
  }

  auto eps = torch::randn(videos.sizes(), rng.noise, videos.options());
  auto alpha = torch::tensor(result.alpha_bars, torch::kFloat64).to(videos.dtype());
  auto z_t = add_noise(videos, alpha, eps);
  auto reference = videos.select(1, 0);
  auto pred = predict(z_t, alpha, reference, drags);
  result.loss = (pred - eps).pow(2).mean();
  if (!std::isfinite(result.loss.item<double>())) throw Error("training loss is not finite");
  return result;
}

torch::Tensor sample(const NoisePredictor& predict, const torch::Tensor& reference, const std::vector<DragSet>& drags,
                     int frames, const NoiseSchedule& schedule, const SampleOptions& options) {
  if (reference.dim() != 4) throw ValidationError("reference must be [B, C, H, W]");
  const auto B = reference.size(0);
  if (static_cast<int64_t>(drags.size()) != B) throw ValidationError("one drag set per reference is required");
  torch::NoGradGuard no_grad;

  const auto levels = schedule.sampling_levels(options.steps);
  const auto weights = guidance_weights(frames, options.guidance_max, options.guidance_min);
  const bool guided = options.force_two_branches ||
                      std::any_of(drags.begin(), drags.end(), [](const DragSet& d) { return !d.empty(); });
  std::vector<DragSet> empty;
  for (const auto& d : drags) empty.push_back(DragSet{{}, d.capacity});

  auto gen = at::make_generator<at::CPUGeneratorImpl>(options.seed);
  const std::vector<int64_t> shape{B, frames, reference.size(1), reference.size(2), reference.size(3)};
  auto z = torch::randn(shape, gen, reference.options());

  // Levels below this floor are treated as the floor; at alpha_bar = 0 the
  // predicted noise equals z_t and carries no signal estimate.
  constexpr double kAlphaFloor = 1e-4;
  for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
    const double a = std::max(levels[i], kAlphaFloor);
    const double b = levels[i + 1];
    auto alpha = torch::full({B}, a, reference.options());
    auto eps = predict(z, alpha, reference, drags);
    if (guided) eps = cfg_combine(eps, predict(z, alpha, reference, empty), weights);

    auto z0 = ((z - std::sqrt(1 - a) * eps) / std::sqrt(a)).clamp(-1.0, 1.0);
    if (b >= 1.0) {
      z = z0;
      break;
    }
    const double beta = 1 - a / b;
    const double c0 = std::sqrt(b) * beta / (1 - a);
    const double ct = std::sqrt(a / b) * (1 - b) / (1 - a);
    const double var = (1 - b) / (1 - a) * beta;
    z = c0 * z0 + ct * z + std::sqrt(std::max(var, 0.0)) * torch::randn(shape, gen, reference.options());
    if (!torch::isfinite(z).all().item<bool>()) throw Error("sampler state became non-finite");
  }
  return z.clamp(-1.0, 1.0);
}

TrainingBatch make_batch(const std::vector<const TrainingExample*>& examples) {
  if (examples.empty()) throw ValidationError("empty training batch");
  TrainingBatch batch;
  std::vector<torch::Tensor> vids;
  for (const auto* e : examples) {
    vids.push_back(video_to_tensor(e->video));
    batch.drags.push_back(e->drags);
  }
  batch.videos = torch::stack(vids, 0);
  return batch;
}

Trainer::Trainer(DenoiserState& state, std::uint64_t seed)
    : state_(state),
      schedule_(NoiseSchedule::from(state.config())),
      rng_(seed),
      optimizer_(state.live()->parameters(),
                 torch::optim::AdamWOptions(state.config().learning_rate).weight_decay(0.0)) {}

double Trainer::step(const std::vector<const TrainingExample*>& examples) {
  const auto& cfg = state_.config();
  auto batch = make_batch(examples);
  state_.live()->train();

  // Short linear warmup keeps the first Adam steps small.
  constexpr int kWarmup = 100;
  const double lr = cfg.learning_rate * std::min(1.0, static_cast<double>(state_.step + 1) / kWarmup);
  for (auto& group : optimizer_.param_groups()) {
    static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
  }

  optimizer_.zero_grad();
  auto result = training_loss(batch, predictor_of(state_.live()), schedule_, cfg.cfg_drop_prob, rng_);
  result.loss.backward();
  if (cfg.grad_clip > 0) torch::nn::utils::clip_grad_norm_(state_.live()->parameters(), cfg.grad_clip);
  optimizer_.step();

  ++state_.step;
  const double warm = (1.0 + state_.step) / (10.0 + state_.step);
  ema_update(state_, std::min(cfg.ema_decay, warm));
  return result.loss.item<double>();
}

double Trainer::step(const std::vector<TrainingExample>& dataset) {
  if (dataset.empty()) throw ValidationError("empty training dataset");
  if (order_.size() != dataset.size()) {
    order_.resize(dataset.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    cursor_ = order_.size();
  }
  std::vector<const TrainingExample*> batch;
  for (int i = 0; i < state_.config().batch_size; ++i) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_.host);
      cursor_ = 0;
    }
    batch.push_back(&dataset[order_[cursor_++]]);
  }
  return step(batch);
}

}  // namespace partdrag
