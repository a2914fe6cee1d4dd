#include "partdrag/conditioning.hpp"

#include <cmath>

#include "partdrag/attention.hpp"

namespace partdrag {

namespace {

void require(bool cond, const char* what) {
  if (!cond) throw ValidationError(what);
}

torch::nn::Sequential make_mlp(int in, int hidden, int out) {
  torch::nn::Sequential mlp(torch::nn::Linear(in, hidden), torch::nn::SiLU(), torch::nn::Linear(hidden, hidden),
                            torch::nn::SiLU(), torch::nn::Linear(hidden, out));
  auto last = mlp->ptr<torch::nn::LinearImpl>(4);
  torch::NoGradGuard no_grad;
  last->weight.zero_();
  last->bias.zero_();
  return mlp;
}

}  // namespace

torch::Tensor modulate(const torch::Tensor& features, const ModulationParams& params) {
  require(features.sizes() == params.scale.sizes() && features.sizes() == params.shift.sizes(),
          "modulation parameters must match the feature shape");
  return features * (1 + params.scale) + params.shift;
}

torch::Tensor encodings_to_tensor(const std::vector<const DragEncoding*>& encodings, torch::TensorOptions options) {
  require(!encodings.empty(), "no encodings to stack");
  const auto& first = *encodings.front();
  std::vector<torch::Tensor> parts;
  parts.reserve(encodings.size());
  for (const DragEncoding* e : encodings) {
    require(e->frames == first.frames && e->size == first.size && e->slots == first.slots,
            "encodings in one batch must share frame count, size and slots");
    auto t = torch::from_blob(const_cast<float*>(e->values.data()), {e->frames, e->size, e->size, e->channels()},
                              torch::kFloat32);
    parts.push_back(t.permute({0, 3, 1, 2}));
  }
  return torch::cat(parts, 0).to(options.has_dtype() ? options.dtype() : caffe2::TypeMeta::Make<float>()).contiguous();
}

double pixel_to_grid(int pixel, int extent, int s) {
  return (pixel + 0.5) * static_cast<double>(s) / extent - 0.5;
}

torch::Tensor bilinear_sample(const torch::Tensor& features, const std::vector<int64_t>& map_index,
                              const std::vector<double>& rows, const std::vector<double>& cols) {
  require(features.dim() == 4, "features must be [M, s, s, C]");
  require(map_index.size() == rows.size() && rows.size() == cols.size(), "sample lists disagree in length");
  const auto Hs = features.size(1);
  const auto Ws = features.size(2);
  const auto C = features.size(3);
  const auto P = static_cast<int64_t>(rows.size());
  auto flat = features.reshape({-1, C});

  std::vector<int64_t> idx[4];
  std::vector<double> wts[4];
  for (int64_t p = 0; p < P; ++p) {
    const double r = std::clamp(rows[p], 0.0, static_cast<double>(Hs - 1));
    const double c = std::clamp(cols[p], 0.0, static_cast<double>(Ws - 1));
    const auto r0 = static_cast<int64_t>(std::floor(r));
    const auto c0 = static_cast<int64_t>(std::floor(c));
    const auto r1 = std::min(r0 + 1, Hs - 1);
    const auto c1 = std::min(c0 + 1, Ws - 1);
    const double fr = r - r0;
    const double fc = c - c0;
    const int64_t base = map_index[p] * Hs * Ws;
    idx[0].push_back(base + r0 * Ws + c0);
    idx[1].push_back(base + r0 * Ws + c1);
    idx[2].push_back(base + r1 * Ws + c0);
    idx[3].push_back(base + r1 * Ws + c1);
    wts[0].push_back((1 - fr) * (1 - fc));
    wts[1].push_back((1 - fr) * fc);
    wts[2].push_back(fr * (1 - fc));
    wts[3].push_back(fr * fc);
  }

  torch::Tensor out;
  for (int i = 0; i < 4; ++i) {
    auto index = torch::tensor(idx[i], torch::kLong);
    auto w = torch::tensor(wts[i], torch::kFloat64).to(features.dtype()).unsqueeze(1);
    auto term = flat.index_select(0, index) * w;
    out = i == 0 ? term : out + term;
  }
  return out;
}

DragEmbedderImpl::DragEmbedderImpl(int max_drags, int width) : width_(width) {
  const int in = max_drags * kEncodingChannels;
  conv_in = register_module("conv_in", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, width, 3).padding(1)));
  conv_out =
      register_module("conv_out", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, 2 * width, 3).padding(1)));
  torch::NoGradGuard no_grad;
  conv_out->weight.zero_();
  conv_out->bias.zero_();
}

torch::Tensor DragEmbedderImpl::forward(const torch::Tensor& encoding, int64_t batch, int64_t frames) {
  require(encoding.dim() == 4 && encoding.size(0) == batch * frames, "encoding must be [B * N, 6 K_max, s, s]");
  require(encoding.size(1) == conv_in->options.in_channels(), "encoding channel count does not match K_max");
  auto h = conv_out->forward(torch::silu(conv_in->forward(encoding)));
  const auto s = h.size(2);
  return h.reshape({batch, frames, 2 * width_, s, s}).permute({0, 1, 3, 4, 2});
}

ModulationParams DragEmbedderImpl::split(const torch::Tensor& embedded) const {
  auto halves = embedded.chunk(2, -1);
  return {halves[0], halves[1]};
}

DragTokenizerImpl::DragTokenizerImpl(int width, int max_drags) : width_(width), max_drags_(max_drags) {
  const int in = 6 + 3 * width;
  key_mlp = register_module("key_mlp", make_mlp(in, 4 * width, width));
  value_mlp = register_module("value_mlp", make_mlp(in, 4 * width, width));
}

DragTokenBank DragTokenizerImpl::forward(const std::vector<DragSet>& drags, const torch::Tensor& features,
                                         Resolution res) {
  require(features.dim() == 5, "features must be [B, N, s, s, C]");
  const auto B = features.size(0);
  const auto N = features.size(1);
  const auto s = static_cast<int>(features.size(2));
  const auto C = features.size(4);
  require(static_cast<int64_t>(drags.size()) == B, "one drag set per batch item is required");
  require(C == width_, "feature width does not match the tokenizer");

  auto opts = features.options();
  auto occupied = torch::zeros({B, max_drags_}, torch::kBool);
  std::vector<int64_t> slot_index, map_index;
  std::vector<double> rows, cols;
  std::vector<double> coords;
  for (int64_t b = 0; b < B; ++b) {
    const DragSet& set = drags[b];
    require(set.size() <= max_drags_, "drag set exceeds the tokenizer capacity");
    for (int k = 0; k < set.size(); ++k) {
      occupied[b][k] = true;
      const Drag& d = set.drags[k];
      require(d.frame_count() == N, "drag frame count does not match the features");
      for (int64_t n = 0; n < N; ++n) {
        slot_index.push_back((b * N + n) * max_drags_ + k);
        const Pixel pts[3] = {d.origin, d.trajectory[n], d.terminus()};
        const int64_t maps[3] = {b * N, b * N + n, b * N + N - 1};
        for (int i = 0; i < 3; ++i) {
          coords.push_back(static_cast<double>(pts[i].h) / res.height);
          coords.push_back(static_cast<double>(pts[i].w) / res.width);
          map_index.push_back(maps[i]);
          rows.push_back(pixel_to_grid(pts[i].h, res.height, s));
          cols.push_back(pixel_to_grid(pts[i].w, res.width, s));
        }
      }
    }
  }

  auto keys = torch::zeros({B * N * max_drags_, C}, opts);
  auto values = torch::zeros({B * N * max_drags_, C}, opts);
  if (!slot_index.empty()) {
    const auto M = static_cast<int64_t>(slot_index.size());
    auto coord_t = torch::tensor(coords, torch::kFloat64).to(opts.dtype()).reshape({M, 6});
    auto sampled = bilinear_sample(features.reshape({B * N, s, s, C}), map_index, rows, cols).reshape({M, 3 * C});
    auto input = torch::cat({coord_t, sampled}, 1);
    auto index = torch::tensor(slot_index, torch::kLong);
    keys = keys.index_copy(0, index, key_mlp->forward(input));
    values = values.index_copy(0, index, value_mlp->forward(input));
  }
  return {keys.reshape({B, N, max_drags_, C}), values.reshape({B, N, max_drags_, C}), occupied};
}

torch::Tensor cross_attend(const torch::Tensor& queries, const torch::Tensor& reference_key,
                           const torch::Tensor& reference_value, const torch::Tensor& drag_keys,
                           const torch::Tensor& drag_values, int heads, torch::Tensor* weights) {
  require(queries.dim() == 3 && reference_key.dim() == 2 && drag_keys.dim() == 3, "cross-attention shape mismatch");
  require(reference_key.sizes() == reference_value.sizes() && drag_keys.sizes() == drag_values.sizes(),
          "cross-attention key/value shapes disagree");
  require(queries.size(0) == reference_key.size(0) && queries.size(0) == drag_keys.size(0),
          "cross-attention batch sizes disagree");
  auto k = torch::cat({reference_key.unsqueeze(1), drag_keys}, 1);
  auto v = torch::cat({reference_value.unsqueeze(1), drag_values}, 1);
  return multihead_attention(queries, k, v, heads, weights);
}

ConditionedCrossAttentionImpl::ConditionedCrossAttentionImpl(int width, int heads) : heads_(heads) {
  to_q = register_module("to_q", torch::nn::Linear(torch::nn::LinearOptions(width, width).bias(false)));
  to_k = register_module("to_k", torch::nn::Linear(torch::nn::LinearOptions(width, width).bias(false)));
  to_v = register_module("to_v", torch::nn::Linear(torch::nn::LinearOptions(width, width).bias(false)));
  to_out = register_module("to_out", torch::nn::Linear(width, width));
}

torch::Tensor ConditionedCrossAttentionImpl::forward(const torch::Tensor& features, const torch::Tensor& reference,
                                                     const DragTokenBank& bank) {
  require(features.dim() == 5, "features must be [B, N, s, s, C]");
  const auto B = features.size(0);
  const auto N = features.size(1);
  const auto L = features.size(2) * features.size(3);
  const auto C = features.size(4);
  require(reference.dim() == 2 && reference.size(0) == B && reference.size(1) == C,
          "reference token must be [B, C]");

  auto q = to_q->forward(features.reshape({B * N, L, C}));
  auto rk = to_k->forward(reference).unsqueeze(1).expand({B, N, C}).reshape({B * N, C});
  auto rv = to_v->forward(reference).unsqueeze(1).expand({B, N, C}).reshape({B * N, C});
  const auto K = bank.keys.size(2);
  auto out = cross_attend(q, rk, rv, bank.keys.reshape({B * N, K, C}), bank.values.reshape({B * N, K, C}), heads_);
  return to_out->forward(out).reshape(features.sizes());
}

}  // namespace partdrag
