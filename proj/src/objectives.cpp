#include "arci/objectives.hpp"

namespace arci {

Tensor bce(const Tensor& scores, const Tensor& targets) {
  return bce_with_logits(scores, targets);
}

Tensor multilabel_hinge(const Tensor& scores, const Tensor& targets) {
  return pairwise_hinge(sigmoid(scores), targets);
}

Tensor total_loss(const Tensor& bce_term, const Tensor& contrastive_term, const Tensor& hinge_term,
                  const LossWeights& weights) {
  Tensor loss = bce_term;
  if (contrastive_term.defined() && weights.gamma != 0.0) {
    loss = add(loss, scale(contrastive_term, weights.gamma));
  }
  if (hinge_term.defined() && weights.lambda != 0.0) {
    loss = add(loss, scale(hinge_term, weights.lambda));
  }
  return loss;
}

}  // namespace arci
