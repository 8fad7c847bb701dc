#include "arci/visit_encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace arci {

Tensor embed(const IndexGrid& codes, const VisitEncoderParams& params) {
  return embedding_lookup(params.embedding, codes);
}

namespace {

// Additive key mask: column c gets kNegMask wherever mask[b, c] == 0,
// replicated over all L query rows. Constant, carries no gradient.
Tensor key_mask_bias(const Tensor& mask, int rows) {
  const int b = mask.dim(0), l = mask.dim(1);
  std::vector<double> out(static_cast<std::size_t>(b) * rows * l);
  for (int bi = 0; bi < b; ++bi)
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < l; ++c)
        out[(static_cast<std::size_t>(bi) * rows + r) * l + c] =
            mask.values()[static_cast<std::size_t>(bi) * l + c] == 1.0 ? 0.0 : kNegMask;
  return Tensor::from({b, rows, l}, std::move(out));
}

}  // namespace

std::vector<Tensor> visit_self_attention(const Tensor& visit_codes, const Tensor& mask,
                                         const VisitEncoderParams& params) {
  if (visit_codes.ndim() != 3) {
    throw std::invalid_argument("visit_self_attention expects [B, L, d], got " +
                                shape_str(visit_codes.shape()));
  }
  const int l = visit_codes.dim(1), d = visit_codes.dim(2);
  if (mask.ndim() != 2 || mask.dim(0) != visit_codes.dim(0) || mask.dim(1) != l) {
    throw std::invalid_argument("mask " + shape_str(mask.shape()) + " does not match visit " +
                                shape_str(visit_codes.shape()));
  }
  if (d % params.heads != 0) throw std::invalid_argument("d must be divisible by the head count");
  const int dh = d / params.heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor q = matmul(visit_codes, params.w_query);
  Tensor k = matmul(visit_codes, params.w_key);
  Tensor v = matmul(visit_codes, params.w_value);
  Tensor bias = key_mask_bias(mask, l);

  std::vector<Tensor> heads;
  heads.reserve(params.heads);
  for (int j = 0; j < params.heads; ++j) {
    Tensor qj = narrow(q, 2, j * dh, dh);
    Tensor kj = narrow(k, 2, j * dh, dh);
    Tensor vj = narrow(v, 2, j * dh, dh);
    Tensor logits = scale(matmul(qj, transpose_last2(kj)), inv_scale);
    Tensor att = softmax(add(logits, bias), -1);
    heads.push_back(broadcast_mul(matmul(att, vj), mask));
  }
  return heads;
}

std::vector<Tensor> encode_visits(const Tensor& P, const Tensor& code_mask,
                                  const VisitEncoderParams& params) {
  if (P.ndim() != 4) throw std::invalid_argument("encode_visits expects [B, T, L, d]");
  const int b = P.dim(0), t_len = P.dim(1), l = P.dim(2), d = P.dim(3);
  const int dh = d / params.heads;

  std::vector<std::vector<Tensor>> per_head(params.heads);
  for (int t = 0; t < t_len; ++t) {
    Tensor pt = reshape(narrow(P, 1, t, 1), {b, l, d});
    Tensor mt = reshape(narrow(code_mask, 1, t, 1), {b, l});
    auto heads = visit_self_attention(pt, mt, params);
    for (int j = 0; j < params.heads; ++j) {
      per_head[j].push_back(reshape(heads[j], {b, 1, l, dh}));
    }
  }
  std::vector<Tensor> out;
  out.reserve(params.heads);
  for (int j = 0; j < params.heads; ++j) out.push_back(concat(per_head[j], 1));
  return out;
}

}  // namespace arci
