#include "ckav/sweep.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>

#include <json.hpp>

#include "ckav/error.hpp"
#include "ckav/parallel.hpp"
#include "ckav/weight_optimizer.hpp"

namespace ckav {

namespace {

std::vector<CheckpointMeta> metas_of(std::span<const Checkpoint* const> series) {
    if (series.empty()) throw ValidationError("empty checkpoint series");
    std::vector<CheckpointMeta> metas;
    metas.reserve(series.size());
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (i > 0 && series[i]->meta.step < series[i - 1]->meta.step) {
            throw ValidationError("checkpoint series must be ordered by step");
        }
        metas.push_back(series[i]->meta);
    }
    return metas;
}

CheckpointRefs pick(std::span<const Checkpoint* const> series, const SelectionResult& sel) {
    CheckpointRefs out;
    for (std::size_t i : sel.indices) out.push_back(series[i]);
    return out;
}

std::vector<double> ppls_of(std::span<const Checkpoint* const> ckpts) {
    std::vector<double> out;
    for (const auto* c : ckpts) {
        if (!c->meta.dev_ppl) throw ValidationError("selected checkpoint has no dev_ppl");
        out.push_back(*c->meta.dev_ppl);
    }
    return out;
}

SweepRecord evaluate(const Checkpoint& averaged, const Objective& objective) {
    const LossResult r = objective.evaluate(averaged.params);
    SweepRecord rec;
    rec.dev_loss = r.loss;
    rec.dev_ppl = r.ppl;
    return rec;
}

void check_grid(std::span<const double> values, const char* what) {
    if (values.empty()) throw ValidationError(std::string(what) + " grid is empty");
    for (double v : values) {
        if (!std::isfinite(v) || v < 0.0) throw ValidationError(std::string(what) + " grid values must be finite and >= 0");
    }
}

std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::vector<double> default_taus() { return {0.0, 0.1, 1.0, 10.0, 100.0, 1e3, 1e6}; }

std::vector<double> default_etas() {
    std::vector<double> out;
    for (int i = 0; i < 8; ++i) out.push_back(std::pow(10.0, -4.0 + 6.0 * i / 7.0));
    out.front() = 1e-4;
    out.back() = 1e2;
    return out;
}

std::vector<SweepRecord> k_sweep(std::span<const Checkpoint* const> series, SelectionKind kind, std::size_t k_max,
                                 const Objective& objective, std::size_t threads) {
    const auto metas = metas_of(series);
    if (k_max == 0) throw ValidationError("k_max must be >= 1");
    const std::size_t n = std::min(k_max, series.size());
    std::vector<SweepRecord> out(n);
    parallel_for(n, threads, [&](std::size_t i) {
        const std::size_t k = i + 1;
        const CheckpointRefs chosen = pick(series, select(metas, {kind, k}));
        out[i] = evaluate(weighted_average(chosen, uniform_weights(chosen.size())), objective);
        out[i].params = {{"k", static_cast<double>(k)}};
    });
    return out;
}

std::vector<SweepRecord> temp_sweep(std::span<const Checkpoint* const> series, SelectionStrategy strategy,
                                    std::span<const double> taus, const Objective& objective, std::size_t threads) {
    check_grid(taus, "tau");
    const CheckpointRefs chosen = pick(series, select(metas_of(series), strategy));
    const auto ppls = ppls_of(chosen);
    std::vector<SweepRecord> out(taus.size());
    parallel_for(taus.size(), threads, [&](std::size_t i) {
        WeightVector w = ppl_softmax_weights(ppls, {taus[i]});
        out[i] = evaluate(weighted_average(chosen, w), objective);
        out[i].params = {{"tau", taus[i]}};
        out[i].weights = std::move(w);
    });
    return out;
}

std::vector<SweepRecord> eta_sweep_grad(std::span<const Checkpoint* const> series, SelectionStrategy strategy, double tau,
                                        std::span<const double> etas, const Objective& objective,
                                        std::size_t threads) {
    check_grid(etas, "eta");
    const CheckpointRefs chosen = pick(series, select(metas_of(series), strategy));
    const WeightVector w = ppl_softmax_weights(ppls_of(chosen), {tau});
    std::vector<SweepRecord> out(etas.size());
    parallel_for(etas.size(), threads, [&](std::size_t i) {
        out[i] = evaluate(gradient_step_average(chosen, w, {etas[i]}), objective);
        out[i].params = {{"eta", etas[i]}};
        out[i].weights = w;
    });
    return out;
}

std::vector<SweepRecord> eta_sweep_optimize(std::span<const Checkpoint* const> ckpts, std::span<const double> etas,
                                            const Objective& objective, std::size_t threads) {
    check_grid(etas, "eta");
    if (ckpts.size() < 2) throw ValidationError("weight optimization needs at least 2 checkpoints");
    const std::vector<double> zeros(ckpts.size(), 0.0);
    const std::vector<double> gradient = grad_wrt_logits(ckpts, zeros, objective);
    std::vector<SweepRecord> out(etas.size());
    parallel_for(etas.size(), threads, [&](std::size_t i) {
        WeightVector w = step_weights(gradient, etas[i]);
        out[i] = evaluate(weighted_average(ckpts, w), objective);
        out[i].params = {{"eta", etas[i]}};
        out[i].weights = std::move(w);
    });
    return out;
}

std::vector<SweepRecord> simplex_grid(const Checkpoint& c1, const Checkpoint& c2, const Checkpoint& c3,
                                      SimplexGridSpec grid, const Objective& objective, std::size_t threads) {
    if (grid.resolution == 0) throw ValidationError("simplex resolution must be >= 1");
    const CheckpointRefs ckpts = {&c1, &c2, &c3};
    validate_compat(ckpts);

    const std::size_t r = grid.resolution;
    std::vector<std::array<std::size_t, 3>> points;
    for (std::size_t a = 0; a <= r; ++a) {
        for (std::size_t b = 0; a + b <= r; ++b) points.push_back({a, b, r - a - b});
    }
    const double rd = static_cast<double>(r);
    std::vector<SweepRecord> out(points.size());
    parallel_for(points.size(), threads, [&](std::size_t i) {
        const auto [a, b, c] = points[i];
        WeightVector w({static_cast<double>(a) / rd, static_cast<double>(b) / rd, static_cast<double>(c) / rd});
        out[i] = evaluate(weighted_average(ckpts, w), objective);
        out[i].params = {{"a", static_cast<double>(a)}, {"b", static_cast<double>(b)}, {"c", static_cast<double>(c)}};
        out[i].weights = std::move(w);
    });
    return out;
}

FlatnessStats flatness(std::span<const SweepRecord> simplex_records, SimplexGridSpec grid) {
    const double r = static_cast<double>(grid.resolution);
    FlatnessStats stats;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
    std::vector<double> vertices;
    for (const auto& rec : simplex_records) {
        if (rec.params.size() != 3) throw ValidationError("flatness expects simplex records");
        const double a = rec.params[0].second, b = rec.params[1].second, c = rec.params[2].second;
        if (a >= 1 && b >= 1 && c >= 1) {
            ++stats.interior_points;
            lo = std::min(lo, rec.dev_loss);
            hi = std::max(hi, rec.dev_loss);
            sum += rec.dev_loss;
        }
        if (a == r || b == r || c == r) vertices.push_back(rec.dev_loss);
    }
    if (stats.interior_points == 0) return stats;
    stats.interior_spread = hi - lo;
    const double mean = sum / static_cast<double>(stats.interior_points);
    for (double v : vertices) stats.vertex_spread = std::max(stats.vertex_spread, std::abs(v - mean));
    return stats;
}

std::string to_csv(std::span<const SweepRecord> records) {
    std::string out;
    if (records.empty()) return out;
    const auto& first = records.front();
    const std::size_t k = first.weights ? first.weights->size() : 0;
    for (const auto& [name, v] : first.params) out += name + ",";
    out += "dev_loss,dev_ppl";
    for (std::size_t i = 0; i < k; ++i) out += ",w_" + std::to_string(i);
    out += "\n";
    for (const auto& rec : records) {
        if (rec.params.size() != first.params.size() || (rec.weights ? rec.weights->size() : 0) != k) {
            throw ValidationError("sweep records have inconsistent columns");
        }
        for (const auto& [name, v] : rec.params) out += format_real(v) + ",";
        out += format_real(rec.dev_loss) + "," + format_real(rec.dev_ppl);
        for (std::size_t i = 0; i < k; ++i) out += "," + format_real((*rec.weights)[i]);
        out += "\n";
    }
    return out;
}

std::string to_json(std::span<const SweepRecord> records) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& rec : records) {
        nlohmann::json params = nlohmann::json::object();
        for (const auto& [name, v] : rec.params) params[name] = v;
        nlohmann::json row = {{"params", params}, {"dev_loss", rec.dev_loss}, {"dev_ppl", rec.dev_ppl}};
        if (rec.weights) row["weights"] = rec.weights->values();
        arr.push_back(std::move(row));
    }
    return arr.dump(2) + "\n";
}

}  // namespace ckav
