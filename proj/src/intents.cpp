#include "arci/intents.hpp"

#include <stdexcept>

namespace arci {

std::vector<Tensor> intent_project(const Tensor& P, const Tensor& code_mask,
                                   const IntentParams& params) {
  if (P.ndim() != 4) throw std::invalid_argument("intent_project expects [B, T, L, d]");
  Tensor pooled = masked_sum(P, code_mask, 2);  // [B, T, d]; padded visits sum to zero
  std::vector<Tensor> intents;
  intents.reserve(params.w_intent.size());
  for (const auto& w : params.w_intent) intents.push_back(matmul(pooled, w));
  return intents;
}

Tensor pool_heads(const Tensor& head_embed, const Tensor& code_mask) {
  if (head_embed.ndim() != 4) throw std::invalid_argument("pool_heads expects [B, T, L, dh]");
  return masked_sum(head_embed, code_mask, 2);
}

Tensor flatten_project(const Tensor& x, const Tensor& visit_mask, const Tensor& w_contrast,
                       int t_max) {
  if (x.ndim() != 3) throw std::invalid_argument("flatten_project expects [B, T, dh]");
  const int b = x.dim(0), t_len = x.dim(1), dh = x.dim(2);
  if (t_len > t_max) {
    throw std::invalid_argument("sequence length " + std::to_string(t_len) + " exceeds t_max " +
                                std::to_string(t_max));
  }
  Tensor masked = broadcast_mul(x, visit_mask);
  if (t_len < t_max) {
    masked = concat({masked, Tensor::zeros({b, t_max - t_len, dh})}, 1);
  }
  return matmul(reshape(masked, {b, t_max * dh}), w_contrast);
}

Tensor contrastive_loss(const ContrastViews& views, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("temperature must be positive");
  const int heads = static_cast<int>(views.intent.size());
  if (heads == 0 || views.visit.size() != views.intent.size() ||
      views.cross.size() != views.intent.size()) {
    throw std::invalid_argument("contrastive views must carry one entry per head");
  }
  const int b = views.intent[0].dim(0);
  const double inv_tau = 1.0 / tau;

  // intent-vs-intent negatives are shared by both view families
  std::vector<std::vector<Tensor>> intent_sim(static_cast<std::size_t>(heads));
  for (int i = 0; i < heads; ++i) {
    for (int k = 0; k < heads; ++k) {
      intent_sim[static_cast<std::size_t>(i)].push_back(
          k == i ? Tensor()
                 : exp(scale(cosine_similarity(views.intent[static_cast<std::size_t>(i)],
                                               views.intent[static_cast<std::size_t>(k)]),
                             inv_tau)));
    }
  }

  auto anchor_term = [&](int i, const std::vector<Tensor>& family) {
    Tensor positive;
    Tensor denom;
    for (int k = 0; k < heads; ++k) {
      Tensor sim = scale(cosine_similarity(views.intent[static_cast<std::size_t>(i)],
                                           family[static_cast<std::size_t>(k)]),
                         inv_tau);
      if (k == i) positive = sim;
      Tensor e = exp(sim);
      denom = denom.defined() ? add(denom, e) : e;
    }
    for (int k = 0; k < heads; ++k) {
      if (k == i) continue;
      denom = add(denom, intent_sim[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]);
    }
    return sub(log(denom), positive);  // [B]
  };

  Tensor total;
  for (int i = 0; i < heads; ++i) {
    Tensor term = add(anchor_term(i, views.visit), anchor_term(i, views.cross));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(sum_all(total), 1.0 / static_cast<double>(b));
}

}  // namespace arci
