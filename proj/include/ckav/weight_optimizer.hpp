#pragma once

#include <span>
#include <vector>

#include "ckav/averaging.hpp"
#include "ckav/tensor_store.hpp"
#include "ckav/toy_model.hpp"

namespace ckav {

struct OptimizeConfig {
    double eta = 0.0;
};

struct OptimizeReport {
    std::vector<double> gradient;  // dL/dg at g = 0
    std::vector<double> logits;    // g1 = -eta * gradient
    WeightVector weights;          // softmax(g1)
    LossResult before;             // uniform weights
    LossResult after;
};

// Max-shifted softmax.
WeightVector softmax(std::span<const double> logits);

// Evaluates the objective at theta = sum_k w_k theta_k, kept in 64-bit.
LossResult dev_loss_of_weights(std::span<const Checkpoint* const> ckpts, const WeightVector& w,
                               const Objective& objective);

// Gradient of the dev loss with respect to the softmax logits:
//   dL/dg_k = w_k (s_k - sum_j w_j s_j),  s_j = <grad L(theta), theta_j>.
std::vector<double> grad_wrt_logits(std::span<const Checkpoint* const> ckpts, std::span<const double> logits,
                                    const Objective& objective);

// One gradient step on the logits from g = 0. Checkpoint parameters are not modified.
OptimizeReport one_step_optimize(std::span<const Checkpoint* const> ckpts, const Objective& objective,
                                 OptimizeConfig cfg);

// Weights after a step of size eta along a precomputed zero-logit gradient.
WeightVector step_weights(std::span<const double> zero_logit_gradient, double eta);

}  // namespace ckav
