#pragma once

#include <vector>

#include "arci/tensor.hpp"

namespace arci {

/// GRU-scored visit-instance attention over the fused embeddings and over
/// the intents, followed by the two-layer linear prediction head.
/// Per-visit attention weights are scalars (the score matrices map to one
/// dimension), which is what makes them directly plottable per visit.
struct AggregatorParams {
  GruParams gru_visit, gru_intent;   // both at dim d
  Tensor w_visit_score;              // W_a [d, 1]
  Tensor w_intent_score;             // W_b [d, 1]
  Tensor w_fuse;                     // W_IP [2d, d]
  Tensor w_output;                   // [d, H]
  // optional bias toggle; undefined tensors when disabled (the default)
  Tensor b_visit_score, b_intent_score, b_fuse, b_output;
};

// Concatenates the fused head embeddings back to [B, T, L, d] and pools the
// code axis with a masked sum -> [B, T, d].
Tensor fuse_and_pool(const std::vector<Tensor>& fused_heads, const Tensor& code_mask);

struct InstanceAttention {
  Tensor pooled;   // [B, d]
  Tensor weights;  // [B, T]; a distribution over real visits, 0 on padding
};

// GRU over the sequence, scalar score per visit, masked softmax, and a
// weights-scaled sum of the *input* sequence.
InstanceAttention instance_attention(const Tensor& sequence, const Tensor& visit_mask,
                                     const GruParams& gru, const Tensor& w_score,
                                     const Tensor& bias = Tensor());

// [y_visit, y_intent] W_IP W_output -> raw scores [B, H].
Tensor predict(const Tensor& y_visit, const Tensor& y_intent, const AggregatorParams& params);

}  // namespace arci
