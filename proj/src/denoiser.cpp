#include "partdrag/denoiser.hpp"

#include <cmath>
#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "partdrag/attention.hpp"

namespace partdrag {

namespace {

int norm_groups(int channels) {
  for (int g : {8, 4, 2}) {
    if (channels % g == 0) return g;
  }
  return 1;
}

torch::Tensor to_channel_last(const torch::Tensor& x, int64_t B, int64_t N) {
  return x.reshape({B, N, x.size(1), x.size(2), x.size(3)}).permute({0, 1, 3, 4, 2});
}

torch::Tensor to_channel_first(const torch::Tensor& x) {
  return x.permute({0, 1, 4, 2, 3}).reshape({x.size(0) * x.size(1), x.size(4), x.size(2), x.size(3)});
}

/// ln(sigma) of the equivalent variance-exploding noise level, clamped.
torch::Tensor log_sigma_of(const torch::Tensor& alpha_bar) {
  auto a = alpha_bar.clamp(1e-8, 1.0);
  auto sigma2 = ((1 - a) / a).clamp(1e-6, 1e8);
  return 0.5 * sigma2.log();
}

}  // namespace

DenoiserConfig DenoiserConfig::from(const RunConfig& run) {
  DenoiserConfig c;
  c.resolution = run.resolution();
  c.frames = run.frame_count;
  c.widths = run.level_widths;
  c.blocks_per_level = run.blocks_per_level;
  c.heads = run.heads;
  c.max_drags = run.max_drags;
  c.attention = run.attention == "per_frame" ? SpatialAttention::PerFrame : SpatialAttention::AllToFirst;
  c.attention_max_resolution = run.attention_max_resolution;
  c.validate();
  return c;
}

void DenoiserConfig::validate() const {
  validate_resolution(resolution);
  if (resolution.height != resolution.width) throw ValidationError("the denoiser requires square frames");
  if (widths.empty()) throw ValidationError("denoiser needs at least one level");
  const int scale = 1 << (levels() - 1);
  if (resolution.height % scale != 0 || resolution.height / scale < 2) {
    throw ValidationError("resolution does not halve cleanly across the levels");
  }
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] % heads != 0) throw ValidationError("level width must be divisible by the head count");
    if (i > 0 && widths[i] < widths[i - 1]) throw ValidationError("level widths must be nondecreasing");
  }
  if (frames < 1) throw ValidationError("frame count must be positive");
  if (max_drags < 1 || max_drags > kMaxDrags) throw ValidationError("max_drags out of range");
}

torch::Tensor video_to_tensor(const Video& video) {
  auto t = torch::from_blob(const_cast<float*>(video.values.data()),
                            {video.frames, video.height, video.width, video.channels}, torch::kFloat32);
  return t.permute({0, 3, 1, 2}).contiguous().clone();
}

Video tensor_to_video(const torch::Tensor& frames) {
  if (frames.dim() != 4) throw ValidationError("expected a [N, C, H, W] tensor");
  auto t = frames.detach().to(torch::kFloat32).permute({0, 2, 3, 1}).contiguous();
  Video v(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), static_cast<int>(t.size(2)),
          static_cast<int>(t.size(3)));
  std::memcpy(v.values.data(), t.data_ptr<float>(), v.values.size() * sizeof(float));
  return v;
}

torch::Tensor sinusoidal_embedding(const torch::Tensor& values, int dim) {
  const int half = dim / 2;
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, values.options()) / half);
  auto args = values.unsqueeze(1) * freqs.unsqueeze(0);
  auto emb = torch::cat({args.sin(), args.cos()}, 1);
  if (dim % 2 == 1) emb = torch::cat({emb, torch::zeros({values.size(0), 1}, values.options())}, 1);
  return emb;
}

ResBlockImpl::ResBlockImpl(int in, int out, int embed_dim) {
  norm1 = register_module("norm1", torch::nn::GroupNorm(norm_groups(in), in));
  conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)));
  embed_proj = register_module("embed_proj", torch::nn::Linear(embed_dim, out));
  norm2 = register_module("norm2", torch::nn::GroupNorm(norm_groups(out), out));
  conv2 = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).padding(1)));
  if (in != out) skip = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& embed) {
  auto h = conv1->forward(torch::silu(norm1->forward(x)));
  h = h + embed_proj->forward(torch::silu(embed)).unsqueeze(-1).unsqueeze(-1);
  h = conv2->forward(torch::silu(norm2->forward(h)));
  return (skip ? skip->forward(x) : x) + h;
}

VideoTransformerBlockImpl::VideoTransformerBlockImpl(int width, int heads, int max_drags, bool spatial,
                                                     SpatialAttention mode)
    : width_(width), heads_(heads), spatial_(spatial), mode_(mode) {
  norm_mod = register_module("norm_mod", torch::nn::GroupNorm(norm_groups(width), width));
  embedder = register_module("embedder", DragEmbedder(max_drags, width));
  if (spatial_) {
    to_qkv = register_module("to_qkv", torch::nn::Linear(torch::nn::LinearOptions(width, 3 * width).bias(false)));
    spatial_out = register_module("spatial_out", torch::nn::Linear(width, width));
  } else {
    local_mix =
        register_module("local_mix", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, width, 3).padding(1)));
  }
  norm_cross = register_module("norm_cross", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
  tokenizer = register_module("tokenizer", DragTokenizer(width, max_drags));
  cross = register_module("cross", ConditionedCrossAttention(width, heads));
  norm_temporal = register_module("norm_temporal", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
  temporal_qkv =
      register_module("temporal_qkv", torch::nn::Linear(torch::nn::LinearOptions(width, 3 * width).bias(false)));
  temporal_out = register_module("temporal_out", torch::nn::Linear(width, width));
}

torch::Tensor VideoTransformerBlockImpl::forward(const torch::Tensor& x, const BlockContext& ctx) {
  const auto B = ctx.batch;
  const auto N = ctx.frames;
  const auto s = x.size(2);

  // Drag modulation of the normalized features.
  auto normed = to_channel_last(norm_mod->forward(x), B, N);
  auto modulated = modulate(normed, embedder->split(embedder->forward(ctx.encoding, B, N)));

  torch::Tensor h;
  if (spatial_) {
    auto qkv = to_qkv->forward(modulated).chunk(3, -1);
    auto attended = mode_ == SpatialAttention::AllToFirst ? all_to_first(qkv[0], qkv[1], qkv[2], heads_)
                                                          : per_frame_self_attention(qkv[0], qkv[1], qkv[2], heads_);
    h = to_channel_last(x, B, N) + spatial_out->forward(attended);
  } else {
    h = to_channel_last(x + local_mix->forward(to_channel_first(modulated)), B, N);
  }

  // Cross-attention over the reference token and drag tokens.
  auto cross_in = norm_cross->forward(h);
  auto bank = tokenizer->forward(*ctx.drags, cross_in, ctx.resolution);
  h = h + cross->forward(cross_in, ctx.reference, bank);

  // Temporal attention at every spatial location.
  auto frame_ids = torch::arange(N, h.options());
  auto frame_embed = sinusoidal_embedding(frame_ids, width_).reshape({1, N, 1, 1, width_});
  auto t_in = (norm_temporal->forward(h) + frame_embed).permute({0, 2, 3, 1, 4}).reshape({B * s * s, N, width_});
  auto tqkv = temporal_qkv->forward(t_in).chunk(3, -1);
  auto t_out = temporal_out->forward(multihead_attention(tqkv[0], tqkv[1], tqkv[2], heads_));
  h = h + t_out.reshape({B, s, s, N, width_}).permute({0, 3, 1, 2, 4});

  return to_channel_first(h);
}

ReferenceEncoderImpl::ReferenceEncoderImpl(int image_channels, int width) {
  auto conv = [](int in, int out) { return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(2).padding(1)); };
  convs = register_module("convs", torch::nn::Sequential(conv(image_channels, width / 4), torch::nn::SiLU(),
                                                         conv(width / 4, width / 2), torch::nn::SiLU(),
                                                         conv(width / 2, width), torch::nn::SiLU(),
                                                         conv(width, width)));
}

torch::Tensor ReferenceEncoderImpl::forward(const torch::Tensor& image) {
  return convs->forward(image).mean({2, 3});
}

DenoiserImpl::DenoiserImpl(DenoiserConfig config) : config_(std::move(config)) {
  config_.validate();
  const int L = config_.levels();
  const int c0 = config_.widths.front();
  embed_dim_ = 4 * c0;
  const int ref_width = 64;

  time_mlp = register_module("time_mlp", torch::nn::Sequential(torch::nn::Linear(c0, embed_dim_), torch::nn::SiLU(),
                                                               torch::nn::Linear(embed_dim_, embed_dim_)));
  ref_encoder = register_module("ref_encoder", ReferenceEncoder(config_.image_channels, ref_width));
  ref_proj = register_module("ref_proj", torch::nn::ModuleList());
  for (int w : config_.widths) ref_proj->push_back(torch::nn::Linear(ref_width, w));

  conv_in = register_module(
      "conv_in", torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * config_.image_channels, c0, 3).padding(1)));

  auto block = [&](int level) {
    const bool spatial = config_.level_size(level) <= config_.attention_max_resolution;
    return VideoTransformerBlock(config_.widths[level], config_.heads, config_.max_drags, spatial, config_.attention);
  };

  down_res = register_module("down_res", torch::nn::ModuleList());
  down_tr = register_module("down_tr", torch::nn::ModuleList());
  downsample = register_module("downsample", torch::nn::ModuleList());
  for (int l = 0; l < L; ++l) {
    const int w = config_.widths[l];
    for (int b = 0; b < config_.blocks_per_level; ++b) {
      down_res->push_back(ResBlock(w, w, embed_dim_));
      down_tr->push_back(block(l));
    }
    if (l + 1 < L) {
      downsample->push_back(torch::nn::Conv2d(
          torch::nn::Conv2dOptions(w, config_.widths[l + 1], 3).stride(2).padding(1)));
    }
  }

  const int wl = config_.widths.back();
  mid_res1 = register_module("mid_res1", ResBlock(wl, wl, embed_dim_));
  mid_tr = register_module("mid_tr", block(L - 1));
  mid_res2 = register_module("mid_res2", ResBlock(wl, wl, embed_dim_));

  up_res = register_module("up_res", torch::nn::ModuleList());
  up_tr = register_module("up_tr", torch::nn::ModuleList());
  upsample = register_module("upsample", torch::nn::ModuleList());
  for (int l = L - 1; l >= 0; --l) {
    const int w = config_.widths[l];
    for (int b = 0; b < config_.blocks_per_level; ++b) {
      up_res->push_back(ResBlock(b == 0 ? 2 * w : w, w, embed_dim_));
      up_tr->push_back(block(l));
    }
    if (l > 0) {
      upsample->push_back(
          torch::nn::Conv2d(torch::nn::Conv2dOptions(w, config_.widths[l - 1], 3).padding(1)));
    }
  }

  norm_out = register_module("norm_out", torch::nn::GroupNorm(norm_groups(c0), c0));
  conv_out = register_module(
      "conv_out", torch::nn::Conv2d(torch::nn::Conv2dOptions(c0, config_.image_channels, 3).padding(1)));
}

torch::Tensor DenoiserImpl::level_encoding(const std::vector<DragSet>& drags, int level,
                                           torch::TensorOptions options) {
  const int s = config_.level_size(level);
  std::vector<std::shared_ptr<const DragEncoding>> held;
  std::vector<const DragEncoding*> ptrs;
  for (const DragSet& set : drags) {
    DragSet sized = set;
    sized.capacity = config_.max_drags;
    held.push_back(cache_.get(sized, s, config_.resolution, config_.frames));
    ptrs.push_back(held.back().get());
  }
  return encodings_to_tensor(ptrs, options);
}

torch::Tensor DenoiserImpl::forward(const torch::Tensor& z_t, const torch::Tensor& alpha_bar,
                                    const torch::Tensor& reference, const std::vector<DragSet>& drags) {
  const auto& cfg = config_;
  if (z_t.dim() != 5 || z_t.size(1) != cfg.frames || z_t.size(2) != cfg.image_channels ||
      z_t.size(3) != cfg.resolution.height || z_t.size(4) != cfg.resolution.width) {
    throw ValidationError("noised input must be [B, N, C, H, W] matching the denoiser config");
  }
  const auto B = z_t.size(0);
  const auto N = z_t.size(1);
  if (reference.dim() != 4 || reference.size(0) != B || reference.sizes().slice(1) != z_t.sizes().slice(2)) {
    throw ValidationError("reference must be [B, C, H, W] matching the noised input");
  }
  if (alpha_bar.dim() != 1 || alpha_bar.size(0) != B) throw ValidationError("noise level must be [B]");
  if (static_cast<int64_t>(drags.size()) != B) throw ValidationError("one drag set per batch item is required");
  if (!torch::isfinite(z_t).all().item<bool>() || !torch::isfinite(reference).all().item<bool>()) {
    throw ValidationError("denoiser input contains non-finite values");
  }

  const auto C = z_t.size(2);
  const auto H = z_t.size(3);
  const auto W = z_t.size(4);
  auto x = torch::cat({z_t, reference.unsqueeze(1).expand({B, N, C, H, W})}, 2).reshape({B * N, 2 * C, H, W});

  auto embed = time_mlp->forward(sinusoidal_embedding(100.0 * log_sigma_of(alpha_bar.to(z_t.dtype())),
                                                      cfg.widths.front()));
  embed = embed.repeat_interleave(N, 0);
  auto ref_feat = ref_encoder->forward(reference);

  const int L = cfg.levels();
  std::vector<BlockContext> ctx(L);
  for (int l = 0; l < L; ++l) {
    ctx[l].batch = B;
    ctx[l].frames = N;
    ctx[l].encoding = level_encoding(drags, l, z_t.options());
    ctx[l].reference = ref_proj[l]->as<torch::nn::Linear>()->forward(ref_feat);
    ctx[l].drags = &drags;
    ctx[l].resolution = cfg.resolution;
  }

  auto h = conv_in->forward(x);
  std::vector<torch::Tensor> skips;
  int i = 0;
  for (int l = 0; l < L; ++l) {
    for (int b = 0; b < cfg.blocks_per_level; ++b, ++i) {
      h = down_res[i]->as<ResBlock>()->forward(h, embed);
      h = down_tr[i]->as<VideoTransformerBlock>()->forward(h, ctx[l]);
    }
    skips.push_back(h);
    if (l + 1 < L) h = downsample[l]->as<torch::nn::Conv2d>()->forward(h);
  }

  h = mid_res1->forward(h, embed);
  h = mid_tr->forward(h, ctx[L - 1]);
  h = mid_res2->forward(h, embed);

  int j = 0;
  int u = 0;
  for (int l = L - 1; l >= 0; --l) {
    h = torch::cat({h, skips[l]}, 1);
    for (int b = 0; b < cfg.blocks_per_level; ++b, ++j) {
      h = up_res[j]->as<ResBlock>()->forward(h, embed);
      h = up_tr[j]->as<VideoTransformerBlock>()->forward(h, ctx[l]);
    }
    if (l > 0) {
      h = torch::nn::functional::interpolate(
          h, torch::nn::functional::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(
                 torch::kNearest));
      h = upsample[u++]->as<torch::nn::Conv2d>()->forward(h);
    }
  }

  // The network regresses v = sqrt(ab) eps - sqrt(1 - ab) z0; convert to eps.
  auto v = conv_out->forward(torch::silu(norm_out->forward(h))).reshape({B, N, C, H, W});
  auto ab = alpha_bar.to(z_t.dtype()).reshape({B, 1, 1, 1, 1});
  return (1 - ab).sqrt() * z_t + ab.sqrt() * v;
}

int64_t parameter_count(const torch::nn::Module& module) {
  int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

namespace {

void check_same_layout(const torch::OrderedDict<std::string, torch::Tensor>& a,
                       const torch::OrderedDict<std::string, torch::Tensor>& b) {
  if (a.size() != b.size()) throw ValidationError("parameter collections differ in size");
  for (const auto& item : a) {
    const auto* other = b.find(item.key());
    if (!other) throw ValidationError("parameter '" + item.key() + "' missing from the other collection");
    if (other->sizes() != item.value().sizes()) {
      throw ValidationError("parameter '" + item.key() + "' differs in shape");
    }
  }
}

}  // namespace

void ema_update(torch::nn::Module& shadow, const torch::nn::Module& live, double decay) {
  if (!(decay > 0.0 && decay < 1.0)) throw ValidationError("EMA decay must lie in (0, 1)");
  auto s = shadow.named_parameters();
  const auto l = live.named_parameters();
  check_same_layout(s, l);
  torch::NoGradGuard no_grad;
  for (auto& item : s) {
    item.value().mul_(decay).add_(l[item.key()], 1.0 - decay);
  }
}

void copy_parameters(torch::nn::Module& to, const torch::nn::Module& from) {
  auto t = to.named_parameters();
  const auto f = from.named_parameters();
  check_same_layout(t, f);
  torch::NoGradGuard no_grad;
  for (auto& item : t) item.value().copy_(f[item.key()]);
}

DenoiserState::DenoiserState(RunConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto dc = DenoiserConfig::from(config_);
  torch::manual_seed(config_.seed);
  live_ = Denoiser(dc);
  ema_ = Denoiser(dc);
  copy_parameters(*ema_, *live_);
  for (auto& p : ema_->parameters()) p.set_requires_grad(false);
}

void ema_update(DenoiserState& state, double decay) { ema_update(*state.ema(), *state.live(), decay); }

namespace {

constexpr char kMagic[8] = {'P', 'D', 'C', 'K', 'P', 'T', '\0', '\1'};

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out += s;
}

class Reader {
public:
  Reader(const std::string& data, std::size_t end) : data_(data), end_(end) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void read_floats(float* dst, std::size_t count) {
    need(count * sizeof(float));
    std::memcpy(dst, data_.data() + pos_, count * sizeof(float));
    pos_ += count * sizeof(float);
  }
  std::size_t pos() const { return pos_; }

private:
  void need(std::size_t n) {
    if (pos_ + n > end_) throw Error("corrupt checkpoint: truncated");
  }
  const std::string& data_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

void write_section(std::string& out, const std::string& name, const torch::nn::Module& module) {
  put_string(out, name);
  const auto params = module.named_parameters();
  put<std::uint64_t>(out, params.size());
  for (const auto& item : params) {
    put_string(out, item.key());
    auto t = item.value().detach().to(torch::kFloat32).contiguous();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.sizes()) put<std::int64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data_ptr<float>()), t.numel() * sizeof(float));
  }
}

void read_section(Reader& in, const std::string& expected, torch::nn::Module& module) {
  if (in.get_string() != expected) throw Error("corrupt checkpoint: expected section '" + expected + "'");
  auto params = module.named_parameters();
  const auto count = in.get<std::uint64_t>();
  if (count != params.size()) throw Error("corrupt checkpoint: parameter count mismatch in '" + expected + "'");
  torch::NoGradGuard no_grad;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = in.get_string();
    auto* target = params.find(name);
    if (!target) throw Error("corrupt checkpoint: unknown parameter '" + name + "'");
    const auto ndim = in.get<std::uint32_t>();
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) d = in.get<std::int64_t>();
    if (torch::IntArrayRef(dims) != target->sizes()) {
      throw Error("corrupt checkpoint: shape mismatch for '" + name + "'");
    }
    auto buf = torch::empty(dims, torch::kFloat32);
    in.read_floats(buf.data_ptr<float>(), buf.numel());
    target->copy_(buf);
  }
}

}  // namespace

void DenoiserState::save(const std::string& path) const {
  nlohmann::json header;
  header["format"] = "partdrag-checkpoint";
  header["config"] = nlohmann::json::parse(to_json_text(config_));
  header["step"] = step;
  header["parameters"] = parameter_count(*live_);

  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, header.dump());
  put<std::uint32_t>(out, 2);
  write_section(out, "live", *live_);
  write_section(out, "ema", *ema_);
  put<std::uint64_t>(out, fnv1a64(out));

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write checkpoint '" + path + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("failed writing checkpoint '" + path + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot move checkpoint into place at '" + path + "'");
}

std::unique_ptr<DenoiserState> DenoiserState::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string data = ss.str();
  if (data.size() < sizeof kMagic + 12 || std::memcmp(data.data(), kMagic, sizeof kMagic) != 0) {
    throw Error("corrupt checkpoint: bad magic in '" + path + "'");
  }
  const std::size_t body = data.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, data.data() + body, sizeof stored);
  if (stored != fnv1a64(std::string_view(data.data(), body))) {
    throw Error("corrupt checkpoint: checksum mismatch in '" + path + "'");
  }

  Reader in(data, body);
  in.get<std::array<char, 8>>();
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error("unsupported checkpoint version " + std::to_string(version));
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.get_string());
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("corrupt checkpoint header: ") + e.what());
  }
  auto state = std::make_unique<DenoiserState>(run_config_from_json_text(header.at("config").dump()));
  state->step = header.value("step", int64_t{0});
  if (in.get<std::uint32_t>() != 2) throw Error("corrupt checkpoint: expected two parameter sections");
  read_section(in, "live", *state->live_);
  read_section(in, "ema", *state->ema_);
  return state;
}

}  // namespace partdrag
