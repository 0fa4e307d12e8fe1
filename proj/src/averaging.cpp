#include "ckav/averaging.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <tuple>

#include "ckav/error.hpp"
#include "ckav/parallel.hpp"

namespace ckav {

namespace {

std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void check_lengths(std::span<const Checkpoint* const> ckpts, const WeightVector& w) {
    if (ckpts.empty()) throw ValidationError("no checkpoints to average");
    if (ckpts.size() != w.size()) {
        throw ValidationError("weight count " + std::to_string(w.size()) + " does not match checkpoint count " +
                              std::to_string(ckpts.size()));
    }
}

std::uint64_t max_step(std::span<const Checkpoint* const> ckpts) {
    std::uint64_t s = 0;
    for (const auto* c : ckpts) s = std::max(s, c->meta.step);
    return s;
}

// Sum_k w_k * params_k[name] in the fixed accumulation order.
std::vector<double> accumulate_param(std::span<const Checkpoint* const> ckpts, const WeightVector& w,
                                     const std::vector<std::size_t>& order, const std::string& name) {
    std::vector<double> acc(ckpts.front()->params.find(name)->second.numel(), 0.0);
    for (std::size_t k : order) {
        const auto& data = ckpts[k]->params.find(name)->second.data;
        const double wk = w[k];
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += wk * static_cast<double>(data[i]);
    }
    return acc;
}

Tensor combine_tensor(std::span<const Checkpoint* const> ckpts, const WeightVector& w,
                      const std::vector<std::size_t>& order, const std::string& name, double eta,
                      bool with_grads) {
    std::vector<double> acc = accumulate_param(ckpts, w, order, name);
    if (with_grads) {
        std::vector<double> gsum(acc.size(), 0.0);
        for (std::size_t k : order) {
            const auto& g = ckpts[k]->grads->find(name)->second.data;
            for (std::size_t i = 0; i < gsum.size(); ++i) gsum[i] += static_cast<double>(g[i]);
        }
        const double inv_k = 1.0 / static_cast<double>(ckpts.size());
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] -= eta * (gsum[i] * inv_k);
    }
    Tensor out;
    out.shape = ckpts.front()->params.find(name)->second.shape;
    out.data.resize(acc.size());
    std::transform(acc.begin(), acc.end(), out.data.begin(), [](double v) { return static_cast<float>(v); });
    return out;
}

Checkpoint combine(std::span<const Checkpoint* const> ckpts, const WeightVector& w, double eta, bool with_grads,
                   std::size_t threads) {
    const auto order = accumulation_order(ckpts, w);
    std::vector<std::string> names;
    for (const auto& [name, t] : ckpts.front()->params) names.push_back(name);

    std::vector<Tensor> tensors(names.size());
    parallel_for(names.size(), threads, [&](std::size_t i) {
        tensors[i] = combine_tensor(ckpts, w, order, names[i], eta, with_grads);
    });

    Checkpoint out;
    for (std::size_t i = 0; i < names.size(); ++i) out.params.emplace(names[i], std::move(tensors[i]));
    out.meta.step = max_step(ckpts);
    return out;
}

}  // namespace

WeightVector::WeightVector(std::vector<double> weights) : weights_(std::move(weights)) {
    if (weights_.empty()) throw ValidationError("weight vector is empty");
    double sum = 0.0;
    for (double v : weights_) {
        if (!std::isfinite(v) || v < 0.0) throw ValidationError("weights must be finite and non-negative");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
        throw ValidationError("weights sum to " + format_real(sum) + ", expected 1");
    }
}

WeightVector uniform_weights(std::size_t k) {
    if (k == 0) throw ValidationError("uniform_weights requires k >= 1");
    return WeightVector(std::vector<double>(k, 1.0 / static_cast<double>(k)));
}

WeightVector ppl_softmax_weights(std::span<const double> ppls, TemperatureConfig cfg) {
    if (ppls.empty()) throw ValidationError("ppl list is empty");
    if (!std::isfinite(cfg.tau) || cfg.tau < 0.0) throw ValidationError("tau must be finite and >= 0");
    std::vector<double> logits(ppls.size());
    for (std::size_t i = 0; i < ppls.size(); ++i) {
        if (!std::isfinite(ppls[i]) || !(ppls[i] > 0.0)) throw ValidationError("perplexities must be positive and finite");
        logits[i] = -cfg.tau * std::log(ppls[i]);
    }
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double& l : logits) {
        l = std::exp(l - max_logit);
        sum += l;
    }
    for (double& l : logits) l /= sum;
    return WeightVector(std::move(logits));
}

WeightVector explicit_weights(std::span<const double> weights) {
    if (weights.empty()) throw ValidationError("weight list is empty");
    double sum = 0.0;
    for (double v : weights) {
        if (!std::isfinite(v) || v < 0.0) throw ValidationError("weights must be finite and non-negative");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ValidationError("weights sum to " + format_real(sum) + ", expected 1 within 1e-9");
    }
    std::vector<double> out(weights.begin(), weights.end());
    for (double& v : out) v /= sum;
    return WeightVector(std::move(out));
}

std::vector<std::size_t> accumulation_order(std::span<const Checkpoint* const> ckpts, const WeightVector& w) {
    std::vector<std::size_t> order(ckpts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double wa = w[a], wb = w[b];
        return std::tie(ckpts[a]->meta.step, ckpts[a]->meta.tag, wa) <
               std::tie(ckpts[b]->meta.step, ckpts[b]->meta.tag, wb);
    });
    return order;
}

WideTensorMap weighted_sum_wide(std::span<const Checkpoint* const> ckpts, const WeightVector& w,
                                std::size_t threads) {
    check_lengths(ckpts, w);
    validate_compat(ckpts);
    const auto order = accumulation_order(ckpts, w);
    std::vector<std::string> names;
    for (const auto& [name, t] : ckpts.front()->params) names.push_back(name);

    std::vector<WideTensor> tensors(names.size());
    parallel_for(names.size(), threads, [&](std::size_t i) {
        tensors[i].shape = ckpts.front()->params.find(names[i])->second.shape;
        tensors[i].data = accumulate_param(ckpts, w, order, names[i]);
    });
    WideTensorMap out;
    for (std::size_t i = 0; i < names.size(); ++i) out.emplace(names[i], std::move(tensors[i]));
    return out;
}

Checkpoint weighted_average(std::span<const Checkpoint* const> ckpts, const WeightVector& w, std::size_t threads) {
    check_lengths(ckpts, w);
    validate_compat(ckpts);
    Checkpoint out = combine(ckpts, w, 0.0, false, threads);
    out.meta.tag = "weighted_average k=" + std::to_string(ckpts.size());
    return out;
}

Checkpoint gradient_step_average(std::span<const Checkpoint* const> ckpts, const WeightVector& w, GradStepConfig cfg,
                                 std::size_t threads) {
    check_lengths(ckpts, w);
    if (!std::isfinite(cfg.eta) || cfg.eta < 0.0) throw ValidationError("eta must be finite and >= 0");
    for (std::size_t i = 0; i < ckpts.size(); ++i) {
        if (!ckpts[i]->has_grads()) {
            throw ValidationError("gradient required for gradient-step averaging: checkpoint " + std::to_string(i) +
                                  " has none");
        }
    }
    validate_compat(ckpts);
    Checkpoint out = combine(ckpts, w, cfg.eta, cfg.eta != 0.0, threads);
    out.meta.tag = "gradient_step_average k=" + std::to_string(ckpts.size()) + " eta=" + format_real(cfg.eta);
    return out;
}

}  // namespace ckav
