#pragma once

#include <vector>

#include "arci/tensor.hpp"

namespace arci {

/// Per-head intent projections and the head-anchored contrastive objective.
/// One intent per attention head; W_CL is shared across heads and across the
/// three view families.
struct IntentParams {
  std::vector<Tensor> w_intent;  // J x [d, d/J]
  Tensor w_contrast;             // [t_max * d/J, d/J]
  int t_max = 1;

  int heads() const { return static_cast<int>(w_intent.size()); }
};

// P [B, T, L, d] with code_mask [B, T, L]: visits are pooled by masked sum
// and pushed through each intent's linear layer. Returns J x [B, T, d/J].
std::vector<Tensor> intent_project(const Tensor& P, const Tensor& code_mask,
                                   const IntentParams& params);

// Masked sum over the code axis: [B, T, L, dh] -> [B, T, dh].
Tensor pool_heads(const Tensor& head_embed, const Tensor& code_mask);

// Zeroes padded visits, right-pads the time axis to t_max, flattens it, and
// projects with w_contrast: [B, T, dh] -> [B, dh]. T > t_max is an error.
Tensor flatten_project(const Tensor& x, const Tensor& visit_mask, const Tensor& w_contrast,
                       int t_max);

/// One [B, d/J] view per head: projected intents, visit-level sums, and
/// cross-visit sums.
struct ContrastViews {
  std::vector<Tensor> intent;  // Z_I
  std::vector<Tensor> visit;   // Z_O
  std::vector<Tensor> cross;   // Z_O over the temporal path embeddings
};

// InfoNCE-style loss with every intent as an anchor. For anchor i the
// positive pair is (intent_i, view_i); negatives are (intent_i, view_k) for
// k != i plus the other intents (intent_i, intent_k). Both the visit-level
// and cross-visit view families contribute; the batch is averaged.
Tensor contrastive_loss(const ContrastViews& views, double tau);

}  // namespace arci
