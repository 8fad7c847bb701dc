#include "arci/cross_visit.hpp"

#include <cmath>
#include <stdexcept>

namespace arci {

QkvProjection project_qkv(const Tensor& visit_embed, const CrossVisitParams& params) {
  if (visit_embed.ndim() != 3) {
    throw std::invalid_argument("project_qkv expects [B, L, d], got " + shape_str(visit_embed.shape()));
  }
  return {matmul(visit_embed, params.w_query), matmul(visit_embed, params.w_key),
          matmul(visit_embed, params.w_value)};
}

namespace {

// Pairwise additive mask: entry (i, j) is kNegMask unless both the code at
// row position i and the one at column position j are real.
Tensor pair_mask_bias(const Tensor& row_mask, const Tensor& col_mask) {
  const int b = row_mask.dim(0), l = row_mask.dim(1);
  std::vector<double> out(static_cast<std::size_t>(b) * l * l);
  for (int bi = 0; bi < b; ++bi)
    for (int i = 0; i < l; ++i)
      for (int j = 0; j < l; ++j) {
        const bool real = row_mask.values()[static_cast<std::size_t>(bi) * l + i] == 1.0 &&
                          col_mask.values()[static_cast<std::size_t>(bi) * l + j] == 1.0;
        out[(static_cast<std::size_t>(bi) * l + i) * l + j] = real ? 0.0 : kNegMask;
      }
  return Tensor::from({b, l, l}, std::move(out));
}

}  // namespace

Tensor cross_attention(const Tensor& q_prev, const Tensor& k_next, const Tensor& mask_prev,
                       const Tensor& mask_next) {
  const int dh = q_prev.dim(2);
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  // logits rows = codes at t, cols = codes at t+1
  Tensor logits = scale(matmul(q_prev, transpose_last2(k_next)), inv_scale);
  Tensor bias = pair_mask_bias(mask_prev, mask_next);
  // transpose: normalization runs over codes at t, so every (t+1)-code's
  // incoming attention sums to 1; padded (t+1)-rows are zeroed outright
  Tensor att = softmax(transpose_last2(add(logits, bias)), -1);
  return broadcast_mul(att, mask_next);
}

Tensor temporal_embed(const Tensor& attention, const Tensor& v_prev) {
  return matmul(attention, v_prev);
}

Tensor fuse(const Tensor& temporal, const Tensor& value_next, const Tensor& w_temporal) {
  return matmul(concat({temporal, value_next}, -1), w_temporal);
}

CrossVisitOutput encode_sequence(const std::vector<Tensor>& visit_heads, const Tensor& code_mask,
                                 const CrossVisitParams& params, bool capture_attention) {
  if (static_cast<int>(visit_heads.size()) != params.heads) {
    throw std::invalid_argument("expected " + std::to_string(params.heads) + " head tensors, got " +
                                std::to_string(visit_heads.size()));
  }
  const int b = visit_heads[0].dim(0), t_len = visit_heads[0].dim(1), l = visit_heads[0].dim(2);
  const int dh = visit_heads[0].dim(3);

  Tensor e_concat = concat(visit_heads, -1);  // [B, T, L, d]

  // per-visit projections, head-split lazily below
  std::vector<QkvProjection> qkv;
  std::vector<Tensor> masks;
  qkv.reserve(t_len);
  for (int t = 0; t < t_len; ++t) {
    Tensor et = reshape(narrow(e_concat, 1, t, 1), {b, l, params.heads * dh});
    masks.push_back(reshape(narrow(code_mask, 1, t, 1), {b, l}));
    qkv.push_back(project_qkv(et, params));
  }

  CrossVisitOutput out;
  out.capture.batch = b;
  out.capture.codes = l;
  if (capture_attention) out.capture.att.resize(static_cast<std::size_t>(t_len));

  for (int j = 0; j < params.heads; ++j) {
    std::vector<Tensor> fused_steps, temporal_steps;
    for (int t = 0; t < t_len; ++t) {
      if (t == 0) {
        // no incoming attention at the first visit: visit-level output stands in
        Tensor first = narrow(visit_heads[static_cast<std::size_t>(j)], 1, 0, 1);
        fused_steps.push_back(first);
        temporal_steps.push_back(first);
        continue;
      }
      Tensor q_prev = narrow(qkv[static_cast<std::size_t>(t - 1)].query, 2, j * dh, dh);
      Tensor k_next = narrow(qkv[static_cast<std::size_t>(t)].key, 2, j * dh, dh);
      Tensor v_prev = narrow(qkv[static_cast<std::size_t>(t - 1)].value, 2, j * dh, dh);
      Tensor v_next = narrow(qkv[static_cast<std::size_t>(t)].value, 2, j * dh, dh);

      Tensor att = cross_attention(q_prev, k_next, masks[static_cast<std::size_t>(t - 1)],
                                   masks[static_cast<std::size_t>(t)]);
      if (capture_attention) {
        out.capture.att[static_cast<std::size_t>(t)].emplace_back(att.values().begin(),
                                                                  att.values().end());
      }
      Tensor temporal = temporal_embed(att, v_prev);
      Tensor fused = broadcast_mul(fuse(temporal, v_next, params.w_temporal),
                                   masks[static_cast<std::size_t>(t)]);
      temporal_steps.push_back(reshape(temporal, {b, 1, l, dh}));
      fused_steps.push_back(reshape(fused, {b, 1, l, dh}));
    }
    out.fused.push_back(concat(fused_steps, 1));
    out.temporal.push_back(concat(temporal_steps, 1));
  }
  return out;
}

}  // namespace arci
