#pragma once

#include "arci/tensor.hpp"

namespace arci {

struct LossWeights {
  double gamma = 0.2;    // contrastive coefficient
  double lambda = 0.05;  // hinge coefficient
};

// Binary cross entropy on raw scores, summed over drugs and averaged over
// the batch, computed in log-sum-exp form.
Tensor bce(const Tensor& scores, const Tensor& targets);

// One-margin superiority of truth labels: for each (positive i, negative j)
// pair, max(0, 1 - (sigmoid(s_i) - sigmoid(s_j))) / H, rows averaged.
Tensor multilabel_hinge(const Tensor& scores, const Tensor& targets);

// bce + gamma * contrastive + lambda * hinge. Undefined components are
// treated as absent.
Tensor total_loss(const Tensor& bce_term, const Tensor& contrastive_term, const Tensor& hinge_term,
                  const LossWeights& weights);

}  // namespace arci
