#include <gtest/gtest.h>

#include <cmath>

#include <torch/torch.h>

#include "partdrag/diffusion.hpp"

using namespace partdrag;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.height = 8;
  c.width = 8;
  c.frame_count = 3;
  c.level_widths = {8, 16};
  c.blocks_per_level = 1;
  c.heads = 2;
  c.attention_max_resolution = 8;
  c.diffusion_steps = 100;
  c.batch_size = 2;
  return c;
}

NoisePredictor zero_predictor() {
  return [](const torch::Tensor& z, const torch::Tensor&, const torch::Tensor&, const std::vector<DragSet>&) {
    return torch::zeros_like(z);
  };
}

DragSet one_drag(int n) {
  DragSet s;
  s.drags.push_back(Drag::straight({1, 1}, {6, 5}, n));
  return s;
}

}  // namespace

TEST(AddNoise, Endpoints) {
  torch::manual_seed(1);
  const auto z0 = torch::randn({2, 3, 4}), eps = torch::randn({2, 3, 4});
  EXPECT_TRUE(torch::equal(add_noise(z0, 1.0, eps), z0));
  EXPECT_TRUE(torch::equal(add_noise(z0, 0.0, eps), eps));
  EXPECT_THROW(add_noise(z0, 1.5, eps), ValidationError);
  EXPECT_THROW(add_noise(z0, 0.5, eps.slice(0, 0, 1)), ValidationError);
}

TEST(AddNoise, HandValue) {
  const auto out = add_noise(torch::full({1}, 2.0, torch::kDouble), 0.75, torch::full({1}, 1.0, torch::kDouble));
  EXPECT_NEAR(out.item<double>(), std::sqrt(0.75) * 2 + 0.5, 1e-12);
  EXPECT_NEAR(out.item<double>(), 2.23205, 1e-5);
}

TEST(AddNoise, PerItemMatchesScalar) {
  torch::manual_seed(2);
  const auto z0 = torch::randn({3, 2, 2}), eps = torch::randn({3, 2, 2});
  const std::vector<double> a{0.1, 0.5, 0.9};
  const auto out = add_noise(z0, torch::tensor(a), eps);
  for (int b = 0; b < 3; ++b) EXPECT_TRUE(torch::allclose(out[b], add_noise(z0[b], a[b], eps[b]), 1e-6, 1e-6));
}

TEST(AddNoise, UnitMarginalVariance) {
  // Unit-variance signal independent of unit-variance noise keeps unit variance at every level.
  torch::manual_seed(3);
  for (double a : {0.0, 0.2, 0.5, 0.8, 1.0}) {
    const auto z0 = torch::randn({20000}), eps = torch::randn({20000});
    EXPECT_NEAR(add_noise(z0, a, eps).var().item<double>(), 1.0, 0.05) << a;
  }
}

TEST(NoiseScheduleTest, DiscreteEndpointsAndMonotonicity) {
  const auto s = NoiseSchedule::discrete_cosine(1000);
  EXPECT_EQ(s.steps(), 1000);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
  EXPECT_EQ(s.alpha_bar(1000), 0.0);
  for (int t = 1; t <= 1000; ++t) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
  const auto levels = s.sampling_levels(50);
  ASSERT_EQ(levels.size(), 51u);
  EXPECT_EQ(levels.front(), 0.0);
  EXPECT_EQ(levels.back(), 1.0);
  EXPECT_THROW(s.sampling_levels(1001), ValidationError);
  EXPECT_THROW(NoiseSchedule::discrete_cosine(1), ValidationError);
}

TEST(NoiseScheduleTest, ContinuousLevels) {
  const auto s = NoiseSchedule::continuous(0.7, 1.6);
  std::mt19937_64 rng(4);
  double mean_log_sigma = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double a = s.sample_training_level(rng);
    ASSERT_GT(a, 0.0);
    ASSERT_LT(a, 1.0);
    mean_log_sigma += 0.5 * std::log((1 - a) / a);
  }
  EXPECT_NEAR(mean_log_sigma / n, 0.7, 0.05);
  const auto levels = s.sampling_levels(10);
  EXPECT_EQ(levels.back(), 1.0);
  for (std::size_t i = 1; i < levels.size(); ++i) EXPECT_GT(levels[i], levels[i - 1]);
  EXPECT_THROW(NoiseSchedule::continuous(0, 0), ValidationError);
}

TEST(Guidance, LinearWeights) {
  const auto w = guidance_weights(5, 5.0, 1.0);
  const std::vector<double> expect{1.0, 2.0, 3.0, 4.0, 5.0};
  EXPECT_EQ(w, expect);
  EXPECT_EQ(guidance_weights(1, 5.0, 1.0), std::vector<double>{1.0});
  EXPECT_EQ(guidance_weights(8, 5.0).back(), 5.0);
  EXPECT_THROW(guidance_weights(0, 5.0), ValidationError);
}

TEST(Guidance, CombineIdentities) {
  torch::manual_seed(5);
  const auto c = torch::randn({2, 3, 1, 2, 2}), u = torch::randn({2, 3, 1, 2, 2});
  EXPECT_TRUE(torch::equal(cfg_combine(c, u, {0, 0, 0}), u));
  EXPECT_TRUE(torch::allclose(cfg_combine(c, u, {1, 1, 1}), c));
  EXPECT_TRUE(torch::equal(cfg_combine(c, c, {1, 3, 7}), c));
  const auto mixed = cfg_combine(c, u, {0, 1, 2});
  EXPECT_TRUE(torch::allclose(mixed.select(1, 2), 2 * c.select(1, 2) - u.select(1, 2), 1e-6, 1e-6));
  EXPECT_THROW(cfg_combine(c, u, {1, 1}), ValidationError);
}

TEST(TrainingLoss, ZeroPredictorGivesUnitLoss) {
  torch::manual_seed(6);
  TrainingBatch batch{torch::rand({4, 3, 3, 16, 16}) * 2 - 1, std::vector<DragSet>(4)};
  DiffusionRng rng(7);
  const auto r = training_loss(batch, zero_predictor(), NoiseSchedule::discrete_cosine(100), 0.1, rng);
  EXPECT_NEAR(r.loss.item<double>(), 1.0, 0.05);
  EXPECT_EQ(r.alpha_bars.size(), 4u);
  EXPECT_EQ(r.dropped.size(), 4u);
}

TEST(TrainingLoss, OraclePredictorGivesZeroLoss) {
  // Predicting eps exactly from z_t and the known clean video gives zero loss.
  torch::manual_seed(8);
  const auto videos = torch::rand({2, 3, 3, 4, 4}, torch::kDouble) * 2 - 1;
  NoisePredictor oracle = [&](const torch::Tensor& z, const torch::Tensor& a, const torch::Tensor&,
                              const std::vector<DragSet>&) {
    const auto ab = a.reshape({-1, 1, 1, 1, 1});
    return (z - ab.sqrt() * videos) / (1 - ab).sqrt();
  };
  DiffusionRng rng(9);
  const auto r = training_loss({videos, std::vector<DragSet>(2)}, oracle, NoiseSchedule::discrete_cosine(100), 0, rng);
  EXPECT_LT(r.loss.item<double>(), 1e-18);
}

TEST(TrainingLoss, DropProbabilityExtremes) {
  const TrainingBatch batch{torch::zeros({3, 3, 3, 8, 8}), {one_drag(3), one_drag(3), one_drag(3)}};
  std::vector<bool> saw_drags;
  NoisePredictor spy = [&](const torch::Tensor& z, const torch::Tensor&, const torch::Tensor&,
                           const std::vector<DragSet>& d) {
    saw_drags.clear();
    for (const auto& s : d) saw_drags.push_back(!s.empty());
    return torch::zeros_like(z);
  };
  DiffusionRng rng(10);
  training_loss(batch, spy, NoiseSchedule::discrete_cosine(100), 1.0, rng);
  EXPECT_EQ(saw_drags, std::vector<bool>(3, false));
  training_loss(batch, spy, NoiseSchedule::discrete_cosine(100), 0.0, rng);
  EXPECT_EQ(saw_drags, std::vector<bool>(3, true));
}

TEST(TrainingLoss, FullDropLeavesTokenizerWithoutGradient) {
  torch::manual_seed(11);
  const RunConfig c = tiny_config();
  Denoiser model(DenoiserConfig::from(c));
  for (auto& p : model->parameters()) {
    torch::NoGradGuard g;
    p.add_(0.05 * torch::randn_like(p));
  }
  TrainingBatch batch{torch::rand({2, 3, 3, 8, 8}) * 2 - 1, {one_drag(3), one_drag(3)}};
  DiffusionRng rng(12);
  training_loss(batch, predictor_of(model), NoiseSchedule::from(c), 1.0, rng).loss.backward();
  int tokenizer_params = 0;
  for (const auto& p : model->named_parameters()) {
    if (p.key().find("tokenizer") == std::string::npos) continue;
    ++tokenizer_params;
    const auto& g = p.value().grad();
    EXPECT_TRUE(!g.defined() || g.abs().max().item<double>() == 0.0) << p.key();
  }
  EXPECT_GT(tokenizer_params, 0);

  model->zero_grad();
  training_loss(batch, predictor_of(model), NoiseSchedule::from(c), 0.0, rng).loss.backward();
  double total = 0;
  for (const auto& p : model->named_parameters()) {
    if (p.key().find("tokenizer") != std::string::npos && p.value().grad().defined()) {
      total += p.value().grad().abs().sum().item<double>();
    }
  }
  EXPECT_GT(total, 0.0);
}

TEST(Sampler, SeedDeterminism) {
  torch::manual_seed(13);
  const RunConfig c = tiny_config();
  Denoiser model(DenoiserConfig::from(c));
  const auto ref = torch::rand({1, 3, 8, 8}) * 2 - 1;
  SampleOptions o;
  o.steps = 1;
  o.seed = 42;
  const auto schedule = NoiseSchedule::from(c);
  const auto a = sample(predictor_of(model), ref, {one_drag(3)}, 3, schedule, o);
  const auto b = sample(predictor_of(model), ref, {one_drag(3)}, 3, schedule, o);
  EXPECT_TRUE(torch::equal(a, b));
  EXPECT_EQ(a.sizes(), (std::vector<int64_t>{1, 3, 3, 8, 8}));
  EXPECT_LE(a.abs().max().item<double>(), 1.0);
  o.seed = 43;
  EXPECT_FALSE(torch::equal(a, sample(predictor_of(model), ref, {one_drag(3)}, 3, schedule, o)));
  o.steps = 5;
  o.seed = 42;
  const auto c5 = sample(predictor_of(model), ref, {one_drag(3)}, 3, schedule, o);
  EXPECT_TRUE(torch::equal(c5, sample(predictor_of(model), ref, {one_drag(3)}, 3, schedule, o)));
}

TEST(Sampler, EmptyDragsMatchTwoIdenticalBranches) {
  torch::manual_seed(14);
  const RunConfig c = tiny_config();
  Denoiser model(DenoiserConfig::from(c));
  const auto ref = torch::rand({2, 3, 8, 8}) * 2 - 1;
  SampleOptions o;
  o.steps = 4;
  o.seed = 5;
  const auto schedule = NoiseSchedule::from(c);
  const auto one = sample(predictor_of(model), ref, {DragSet{}, DragSet{}}, 3, schedule, o);
  o.force_two_branches = true;
  const auto two = sample(predictor_of(model), ref, {DragSet{}, DragSet{}}, 3, schedule, o);
  EXPECT_TRUE(torch::equal(one, two));
}

TEST(Sampler, PerfectDenoiserRecoversTheSignal) {
  // With eps predicted from a known clean video the first step's z0 estimate
  // is already exact, so the sampler returns that video.
  torch::manual_seed(15);
  const auto target = torch::rand({1, 2, 3, 4, 4}, torch::kDouble) * 1.6 - 0.8;
  NoisePredictor oracle = [&](const torch::Tensor& z, const torch::Tensor& a, const torch::Tensor&,
                              const std::vector<DragSet>&) {
    const auto ab = a.reshape({-1, 1, 1, 1, 1});
    return (z - ab.sqrt() * target) / (1 - ab).sqrt();
  };
  SampleOptions o;
  o.steps = 10;
  const auto out = sample(oracle, torch::zeros({1, 3, 4, 4}, torch::kDouble), {DragSet{}}, 2,
                          NoiseSchedule::discrete_cosine(100), o);
  EXPECT_LT((out - target).abs().max().item<double>(), 1e-6);
}

TEST(Sampler, RejectsMismatchedInputs) {
  const auto ref = torch::zeros({2, 3, 8, 8});
  SampleOptions o;
  EXPECT_THROW(sample(zero_predictor(), ref, {DragSet{}}, 3, NoiseSchedule::discrete_cosine(100), o), ValidationError);
  EXPECT_THROW(sample(zero_predictor(), ref.select(0, 0), {DragSet{}}, 3, NoiseSchedule::discrete_cosine(100), o),
               ValidationError);
}

TEST(Trainer, LossDecreasesOnATinyProblem) {
  torch::manual_seed(16);
  RunConfig c = tiny_config();
  c.learning_rate = 2e-3;
  DenoiserState state(c);
  std::vector<TrainingExample> data;
  for (int i = 0; i < 2; ++i) {
    Video v(3, 8, 8, 3, i == 0 ? 0.5f : -0.5f);
    data.push_back({v, DragSet{}});
  }
  Trainer trainer(state, 1);
  double early = 0, late = 0;
  for (int i = 0; i < 120; ++i) {
    const double l = trainer.step(data);
    if (i < 20) early += l;
    if (i >= 100) late += l;
  }
  EXPECT_EQ(state.step, 120);
  EXPECT_LT(late, early);
}
