#include "arci/aggregator.hpp"

#include <stdexcept>

namespace arci {

Tensor fuse_and_pool(const std::vector<Tensor>& fused_heads, const Tensor& code_mask) {
  if (fused_heads.empty()) throw std::invalid_argument("fuse_and_pool needs at least one head");
  return masked_sum(concat(fused_heads, -1), code_mask, 2);
}

namespace {

Tensor visit_mask_bias(const Tensor& visit_mask) {
  std::vector<double> out(visit_mask.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = visit_mask.values()[i] == 1.0 ? 0.0 : kNegMask;
  }
  return Tensor::from(visit_mask.shape(), std::move(out));
}

}  // namespace

InstanceAttention instance_attention(const Tensor& sequence, const Tensor& visit_mask,
                                     const GruParams& gru, const Tensor& w_score,
                                     const Tensor& bias) {
  if (sequence.ndim() != 3) throw std::invalid_argument("instance_attention expects [B, T, d]");
  const int b = sequence.dim(0), t_len = sequence.dim(1);

  Tensor states = gru_sequence(sequence, gru, visit_mask);  // [B, T, d]
  Tensor scores = matmul(states, w_score);                  // [B, T, 1]
  if (bias.defined()) scores = add_rowvec(scores, bias);
  scores = reshape(scores, {b, t_len});

  Tensor weights = softmax(add(scores, visit_mask_bias(visit_mask)), -1);
  Tensor pooled = sum_axis(broadcast_mul(sequence, weights), 1);
  return {pooled, weights};
}

Tensor predict(const Tensor& y_visit, const Tensor& y_intent, const AggregatorParams& params) {
  Tensor fused = matmul(concat({y_visit, y_intent}, -1), params.w_fuse);
  if (params.b_fuse.defined()) fused = add_rowvec(fused, params.b_fuse);
  Tensor scores = matmul(fused, params.w_output);
  if (params.b_output.defined()) scores = add_rowvec(scores, params.b_output);
  return scores;
}

}  // namespace arci
