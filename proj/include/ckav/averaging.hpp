#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ckav/tensor_store.hpp"

namespace ckav {

// Interpolation weights aligned with a checkpoint list: non-negative, summing to 1.
class WeightVector {
public:
    WeightVector() = default;
    // Validates non-negativity, finiteness and |sum - 1| <= 1e-12.
    explicit WeightVector(std::vector<double> weights);

    std::size_t size() const { return weights_.size(); }
    double operator[](std::size_t i) const { return weights_[i]; }
    const std::vector<double>& values() const { return weights_; }

    friend bool operator==(const WeightVector&, const WeightVector&) = default;

private:
    std::vector<double> weights_;
};

struct TemperatureConfig {
    double tau = 0.0;
};

struct GradStepConfig {
    double eta = 0.0;
};

WeightVector uniform_weights(std::size_t k);

// w_k proportional to ppl_k^(-tau), evaluated as a max-shifted softmax of -tau * ln(ppl_k).
WeightVector ppl_softmax_weights(std::span<const double> ppls, TemperatureConfig cfg);

// User-supplied weights: must be non-negative and sum to 1 within 1e-9; renormalized.
WeightVector explicit_weights(std::span<const double> weights);

// Positions of `ckpts` in accumulation order: step ascending, then tag, then
// the weight, then input position. Independent of input order whenever the
// (step, tag, weight) keys are distinct.
std::vector<std::size_t> accumulation_order(std::span<const Checkpoint* const> ckpts,
                                            const WeightVector& w);

// Sum_k w_k * params_k in 64-bit without rounding.
WideTensorMap weighted_sum_wide(std::span<const Checkpoint* const> ckpts, const WeightVector& w,
                                std::size_t threads = 1);

// Weighted parameter average. The result has no grads and no dev_ppl; its
// step is the max input step.
Checkpoint weighted_average(std::span<const Checkpoint* const> ckpts, const WeightVector& w,
                            std::size_t threads = 1);

// Weighted average minus eta times the uniform mean of the stored gradients.
// With eta == 0 the output is bit-identical to weighted_average.
Checkpoint gradient_step_average(std::span<const Checkpoint* const> ckpts, const WeightVector& w,
                                 GradStepConfig cfg, std::size_t threads = 1);

}  // namespace ckav
