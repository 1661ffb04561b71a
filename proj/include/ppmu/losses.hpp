#pragma once

#include <vector>

#include "ppmu/tensor.hpp"

namespace ppmu {

enum class LossKind { MSE, HeteroRegression, CrossEntropy, AttenuatedCE };

struct LossSpec {
  LossKind kind = LossKind::MSE;
  int t_softmax = 20;   // MC draws for the attenuated classification loss
  double alpha_elu = 1.0;
};

// Mean of (y - yhat)^2 / 2 over the batch.
Tensor mse_loss(const Tensor& yhat, const Tensor& y);

// Attenuated regression loss: mean of (y-yhat)^2/(2 exp(s)) + s/2,
// with s the per-sample log variance. Collapses to mse_loss at s = 0.
Tensor hetero_regression_loss(const Tensor& yhat, const Tensor& s, const Tensor& y);

// Mean per-row cross entropy with log-sum-exp stabilization.
Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels);

// Sampled attenuated classification loss. Draws t_softmax corrupted logit
// vectors a_t = logits + sigma*eps_t (eps ~ N(0,I), sigma = exp(s/2)) and
// computes, per sample,
//   CEL*(1 + mean_t ELU(CEL_t - CEL)) + exp(sigma^2) - 1,
// mean-reduced over the batch. Differentiable in logits and s.
Tensor attenuated_ce_loss(const Tensor& logits, const Tensor& s,
                          const std::vector<int>& labels, int t_softmax,
                          RngStream& rng, double alpha_elu = 1.0);

}  // namespace ppmu
