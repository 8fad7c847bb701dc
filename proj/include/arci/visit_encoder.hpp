#pragma once

#include <vector>

#include "arci/tensor.hpp"

namespace arci {

/// Code embedding plus per-visit multi-head self-attention. A visit is a
/// set of codes, so there is no positional encoding and the encoder is a
/// single bare attention layer (no FFN, residual, or norm).
struct VisitEncoderParams {
  Tensor embedding;               // [H+1, d]; last row is the pad row
  Tensor w_query, w_key, w_value;  // [d, d], split across heads
  int heads = 1;

  int dim() const { return embedding.dim(1); }
  int head_dim() const { return dim() / heads; }
};

// codes [B, T, L] -> [B, T, L, d]; -1 slots read the reserved pad row.
Tensor embed(const IndexGrid& codes, const VisitEncoderParams& params);

// Scaled dot-product attention among the codes of one visit.
// visit_codes [B, L, d], mask [B, L]. Masked keys are excluded with the
// additive sentinel; output rows of masked codes are zeroed.
// Returns one [B, L, d/J] tensor per head.
std::vector<Tensor> visit_self_attention(const Tensor& visit_codes, const Tensor& mask,
                                         const VisitEncoderParams& params);

// Applies visit_self_attention at every time step of P [B, T, L, d].
// Returns J tensors of shape [B, T, L, d/J].
std::vector<Tensor> encode_visits(const Tensor& P, const Tensor& code_mask,
                                  const VisitEncoderParams& params);

}  // namespace arci
