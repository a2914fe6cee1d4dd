#pragma once

#include <torch/torch.h>

namespace partdrag {

/// Multi-head scaled dot-product attention over generic token batches.
///
/// q: [X, Lq, C], k and v: [X, Lk, C], C = heads * D. Returns [X, Lq, C].
/// Logits are shifted by their per-row maximum before exponentiation. When
/// `weights` is non-null it receives the attention matrix [X, heads, Lq, Lk].
torch::Tensor multihead_attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
                                  int heads, torch::Tensor* weights = nullptr);

/// Spatial attention where every frame queries the first frame only.
///
/// Q, K, V: [B, N, s, s, C]. Keys and values of frames 1..N-1 are ignored.
/// Output [B, N, s, s, C] with frame i equal to
/// softmax(flat(Q[:, i]) flat(K[:, 0])^T / sqrt(D)) flat(V[:, 0]) per head.
torch::Tensor all_to_first(const torch::Tensor& Q, const torch::Tensor& K, const torch::Tensor& V, int heads,
                           torch::Tensor* weights = nullptr);

/// Ordinary spatial self-attention inside each frame. Same shapes as all_to_first.
torch::Tensor per_frame_self_attention(const torch::Tensor& Q, const torch::Tensor& K, const torch::Tensor& V,
                                       int heads, torch::Tensor* weights = nullptr);

}  // namespace partdrag
