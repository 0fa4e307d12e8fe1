#include "ckav/weight_optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ckav/error.hpp"

namespace ckav {

namespace {

void check_eta(double eta) {
    if (!std::isfinite(eta) || eta < 0.0) throw ValidationError("eta must be finite and >= 0");
}

}  // namespace

WeightVector softmax(std::span<const double> logits) {
    if (logits.empty()) throw ValidationError("softmax of an empty logit vector");
    for (double g : logits) {
        if (!std::isfinite(g)) throw ValidationError("logits must be finite");
    }
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    std::vector<double> w(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = std::exp(logits[i] - max_logit);
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return WeightVector(std::move(w));
}

LossResult dev_loss_of_weights(std::span<const Checkpoint* const> ckpts, const WeightVector& w,
                               const Objective& objective) {
    return objective.evaluate(weighted_sum_wide(ckpts, w));
}

std::vector<double> grad_wrt_logits(std::span<const Checkpoint* const> ckpts, std::span<const double> logits,
                                    const Objective& objective) {
    if (logits.size() != ckpts.size()) throw ValidationError("logit count does not match checkpoint count");
    const WeightVector w = softmax(logits);
    const WideTensorMap grad = objective.gradient(weighted_sum_wide(ckpts, w));

    // s_j accumulated tensor by tensor in name order.
    std::vector<double> s(ckpts.size(), 0.0);
    for (const auto& [name, g] : grad) {
        for (std::size_t j = 0; j < ckpts.size(); ++j) {
            const auto& theta = ckpts[j]->params.find(name)->second.data;
            double dot = 0.0;
            for (std::size_t i = 0; i < theta.size(); ++i) dot += g.data[i] * static_cast<double>(theta[i]);
            s[j] += dot;
        }
    }
    double mean_s = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j) mean_s += w[j] * s[j];
    std::vector<double> out(s.size());
    for (std::size_t k = 0; k < s.size(); ++k) out[k] = w[k] * (s[k] - mean_s);
    return out;
}

WeightVector step_weights(std::span<const double> zero_logit_gradient, double eta) {
    check_eta(eta);
    std::vector<double> g(zero_logit_gradient.size());
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = -eta * zero_logit_gradient[k];
    return softmax(g);
}

OptimizeReport one_step_optimize(std::span<const Checkpoint* const> ckpts, const Objective& objective,
                                 OptimizeConfig cfg) {
    check_eta(cfg.eta);
    if (ckpts.size() < 2) throw ValidationError("weight optimization needs at least 2 checkpoints");
    const std::vector<double> zeros(ckpts.size(), 0.0);

    OptimizeReport report;
    report.gradient = grad_wrt_logits(ckpts, zeros, objective);
    report.logits.resize(ckpts.size());
    for (std::size_t k = 0; k < ckpts.size(); ++k) report.logits[k] = -cfg.eta * report.gradient[k];
    report.weights = softmax(report.logits);
    report.before = dev_loss_of_weights(ckpts, softmax(zeros), objective);
    report.after = dev_loss_of_weights(ckpts, report.weights, objective);
    return report;
}

}  // namespace ckav
