#pragma once

#include <vector>

#include "arci/tensor.hpp"

namespace arci {

/// Cross-visit transformer: Query from visit t, Key from visit t+1,
/// transposed masked softmax so each (t+1)-code's incoming weights over
/// t-codes sum to 1, value sharing, and a fusing linear layer.
struct CrossVisitParams {
  Tensor w_query, w_key, w_value;  // [d, d]
  Tensor w_temporal;               // [2*d/J, d/J]
  int heads = 1;
};

struct QkvProjection {
  Tensor query, key, value;  // each [B, L, d]
};

QkvProjection project_qkv(const Tensor& visit_embed, const CrossVisitParams& params);

// q_prev/k_next/[B, L, d/J] head slices for visits t and t+1; masks [B, L].
// Returns [B, L, L] with rows = codes at t+1, cols = codes at t; every real
// row is a distribution over real t-codes, padded rows are exactly zero.
Tensor cross_attention(const Tensor& q_prev, const Tensor& k_next, const Tensor& mask_prev,
                       const Tensor& mask_next);

// e_hat[t+1] = att[t+1] . v_prev
Tensor temporal_embed(const Tensor& attention, const Tensor& v_prev);

// [temporal, value_next] W_T
Tensor fuse(const Tensor& temporal, const Tensor& value_next, const Tensor& w_temporal);

/// Raw per-pair attention values captured during encoding, for
/// interpretability export and invariant checks. att[t][j] is the flattened
/// [B, L, L] matrix linking visit t-1 to visit t; att[0] is empty.
struct AttentionCapture {
  int batch = 0, codes = 0;
  std::vector<std::vector<std::vector<double>>> att;
};

struct CrossVisitOutput {
  std::vector<Tensor> fused;     // J x [B, T, L, d/J]; fused[.][t=0] is the visit-level slice
  std::vector<Tensor> temporal;  // J x [B, T, L, d/J]; same fallback at t=0
  AttentionCapture capture;      // filled only when requested
};

// visit_heads: J tensors [B, T, L, d/J] from the visit-level encoder.
CrossVisitOutput encode_sequence(const std::vector<Tensor>& visit_heads, const Tensor& code_mask,
                                 const CrossVisitParams& params, bool capture_attention = false);

}  // namespace arci
