#include "partdrag/attention.hpp"

#include <cmath>

#include "partdrag/core_types.hpp"

namespace partdrag {

namespace {

void require(bool cond, const char* what) {
  if (!cond) throw ValidationError(what);
}

void check_video_tokens(const torch::Tensor& Q, const torch::Tensor& K, const torch::Tensor& V, int heads) {
  require(Q.dim() == 5 && K.dim() == 5 && V.dim() == 5, "attention tensors must be [B, N, s, s, C]");
  require(Q.sizes() == K.sizes() && K.sizes() == V.sizes(), "attention tensors must share one shape");
  require(heads > 0 && Q.size(4) % heads == 0, "channel count must be divisible by the head count");
}

}  // namespace

torch::Tensor multihead_attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
                                  int heads, torch::Tensor* weights) {
  require(q.dim() == 3 && k.dim() == 3 && v.dim() == 3, "attention tokens must be [X, L, C]");
  require(q.size(0) == k.size(0) && k.sizes() == v.sizes(), "attention token batches disagree");
  require(q.size(2) == k.size(2), "query and key widths disagree");
  require(heads > 0 && q.size(2) % heads == 0, "channel count must be divisible by the head count");

  const auto X = q.size(0);
  const auto Lq = q.size(1);
  const auto Lk = k.size(1);
  const auto C = q.size(2);
  const auto D = C / heads;

  auto split = [&](const torch::Tensor& t, int64_t L) { return t.reshape({X, L, heads, D}).permute({0, 2, 1, 3}); };
  const auto qh = split(q, Lq);
  const auto kh = split(k, Lk);
  const auto vh = split(v, Lk);

  auto logits = torch::matmul(qh * (1.0 / std::sqrt(static_cast<double>(D))), kh.transpose(-1, -2));
  // The fused softmax shifts each row by its maximum logit before exponentiating.
  auto w = logits.softmax(-1);
  if (weights) *weights = w;

  return torch::matmul(w, vh).permute({0, 2, 1, 3}).reshape({X, Lq, C});
}

torch::Tensor all_to_first(const torch::Tensor& Q, const torch::Tensor& K, const torch::Tensor& V, int heads,
                           torch::Tensor* weights) {
  check_video_tokens(Q, K, V, heads);
  const auto B = Q.size(0);
  const auto N = Q.size(1);
  const auto L = Q.size(2) * Q.size(3);
  const auto C = Q.size(4);

  // All N*L queries of a clip share the first frame's L keys.
  const auto q = Q.reshape({B, N * L, C});
  const auto k = K.select(1, 0).reshape({B, L, C});
  const auto v = V.select(1, 0).reshape({B, L, C});
  torch::Tensor w;
  auto out = multihead_attention(q, k, v, heads, weights ? &w : nullptr);
  if (weights) *weights = w.reshape({B, heads, N, L, L}).permute({0, 2, 1, 3, 4});
  return out.reshape(Q.sizes());
}

torch::Tensor per_frame_self_attention(const torch::Tensor& Q, const torch::Tensor& K, const torch::Tensor& V,
                                       int heads, torch::Tensor* weights) {
  check_video_tokens(Q, K, V, heads);
  const auto B = Q.size(0);
  const auto N = Q.size(1);
  const auto L = Q.size(2) * Q.size(3);
  const auto C = Q.size(4);

  torch::Tensor w;
  auto out = multihead_attention(Q.reshape({B * N, L, C}), K.reshape({B * N, L, C}), V.reshape({B * N, L, C}), heads,
                                 weights ? &w : nullptr);
  if (weights) *weights = w.reshape({B, N, heads, L, L});
  return out.reshape(Q.sizes());
}

}  // namespace partdrag
