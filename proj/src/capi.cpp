#include "ckav/ckav.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <new>
#include <sstream>
#include <string>

#include <json.hpp>

#include "ckav/averaging.hpp"
#include "ckav/config.hpp"
#include "ckav/error.hpp"
#include "ckav/selection.hpp"
#include "ckav/sweep.hpp"
#include "ckav/tensor_store.hpp"
#include "ckav/toy_model.hpp"
#include "ckav/weight_optimizer.hpp"

#ifndef CKAV_VERSION
#define CKAV_VERSION "0.0.0"
#endif

struct ckav_checkpoint {
    ckav::Checkpoint value;
};

struct ckav_dataset {
    ckav::DevSet value;
};

struct ckav_objective {
    std::unique_ptr<ckav::Objective> value;
};

namespace {

using json = nlohmann::json;

thread_local std::string g_last_error;

// Marks API misuse (null handles, bad enum values).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename Fn>
ckav_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return CKAV_OK;
    } catch (const UsageError& e) {
        g_last_error = e.what();
        return CKAV_ERROR_USAGE;
    } catch (const ckav::ValidationError& e) {
        g_last_error = e.what();
        return CKAV_ERROR_INVALID;
    } catch (const ckav::IoError& e) {
        g_last_error = e.what();
        return CKAV_ERROR_IO;
    } catch (const std::filesystem::filesystem_error& e) {
        g_last_error = e.what();
        return CKAV_ERROR_IO;
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return CKAV_ERROR_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return CKAV_ERROR_INTERNAL;
    }
}

template <typename T>
void require(const T* p, const char* what) {
    if (p == nullptr) throw UsageError(std::string(what) + " is null");
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

ckav::CheckpointRefs unwrap(const ckav_checkpoint* const* ckpts, size_t n) {
    if (n > 0) require(ckpts, "checkpoint array");
    ckav::CheckpointRefs out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        require(ckpts[i], "checkpoint handle");
        out.push_back(&ckpts[i]->value);
    }
    return out;
}

ckav::SelectionKind to_kind(ckav_selection s) {
    switch (s) {
        case CKAV_SELECT_TOP_K: return ckav::SelectionKind::TopK;
        case CKAV_SELECT_LAST_K_BEST: return ckav::SelectionKind::LastKFromBest;
        case CKAV_SELECT_LAST_K_END: return ckav::SelectionKind::LastKFromEnd;
    }
    throw UsageError("unknown selection kind");
}

void copy_weights(const ckav::WeightVector& w, double* out) {
    std::copy(w.values().begin(), w.values().end(), out);
}

json meta_json(const ckav::CheckpointMeta& m) {
    return {{"step", m.step}, {"dev_ppl", m.dev_ppl ? json(*m.dev_ppl) : json(nullptr)}, {"tag", m.tag}};
}

json series_summary(const std::vector<ckav::CheckpointMeta>& metas, const std::filesystem::path& dir) {
    json ckpts = json::array();
    for (const auto& m : metas) {
        json entry = meta_json(m);
        entry["file"] = (dir / ckav::checkpoint_filename(m.step)).string();
        ckpts.push_back(std::move(entry));
    }
    return json{{"checkpoints", ckpts}};
}

}  // namespace

extern "C" {

const char* ckav_version(void) { return CKAV_VERSION; }

const char* ckav_last_error(void) { return g_last_error.c_str(); }

void ckav_string_free(char* s) { std::free(s); }

ckav_status ckav_checkpoint_read(const char* path, int allow_nonfinite, ckav_checkpoint** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        auto handle = std::make_unique<ckav_checkpoint>();
        handle->value = ckav::read_checkpoint(path, {allow_nonfinite != 0});
        *out = handle.release();
    });
}

ckav_status ckav_checkpoint_write(const ckav_checkpoint* ckpt, const char* path) {
    return guarded([&] {
        require(ckpt, "checkpoint");
        require(path, "path");
        ckav::write_checkpoint(path, ckpt->value);
    });
}

void ckav_checkpoint_free(ckav_checkpoint* ckpt) { delete ckpt; }

ckav_status ckav_checkpoint_describe(const ckav_checkpoint* ckpt, char** out_json) {
    return guarded([&] {
        require(ckpt, "checkpoint");
        require(out_json, "out_json");
        json tensors = json::array();
        for (const auto& [name, t] : ckpt->value.params) tensors.push_back({{"name", name}, {"shape", t.shape}});
        json doc = {{"meta", meta_json(ckpt->value.meta)},
                    {"has_grads", ckpt->value.has_grads()},
                    {"tensors", tensors}};
        *out_json = dup_string(doc.dump(2));
    });
}

ckav_status ckav_checkpoint_step(const ckav_checkpoint* ckpt, uint64_t* out_step) {
    return guarded([&] {
        require(ckpt, "checkpoint");
        require(out_step, "out_step");
        *out_step = ckpt->value.meta.step;
    });
}

ckav_status ckav_checkpoint_dev_ppl(const ckav_checkpoint* ckpt, double* out_ppl, int* out_present) {
    return guarded([&] {
        require(ckpt, "checkpoint");
        require(out_ppl, "out_ppl");
        require(out_present, "out_present");
        *out_present = ckpt->value.meta.dev_ppl.has_value() ? 1 : 0;
        *out_ppl = ckpt->value.meta.dev_ppl.value_or(0.0);
    });
}

ckav_status ckav_checkpoint_set_tag(ckav_checkpoint* ckpt, const char* tag) {
    return guarded([&] {
        require(ckpt, "checkpoint");
        require(tag, "tag");
        ckpt->value.meta.tag = tag;
    });
}

ckav_status ckav_checkpoint_set_dev_ppl(ckav_checkpoint* ckpt, double ppl) {
    return guarded([&] {
        require(ckpt, "checkpoint");
        ckav::Checkpoint probe;
        probe.meta.dev_ppl = ppl;
        ckav::validate_checkpoint(probe);
        ckpt->value.meta.dev_ppl = ppl;
    });
}

ckav_status ckav_checkpoint_equal(const ckav_checkpoint* a, const ckav_checkpoint* b, int* out_equal) {
    return guarded([&] {
        require(a, "checkpoint a");
        require(b, "checkpoint b");
        require(out_equal, "out_equal");
        *out_equal = a->value == b->value ? 1 : 0;
    });
}

ckav_status ckav_validate_compat(const ckav_checkpoint* const* ckpts, size_t n) {
    return guarded([&] { ckav::validate_compat(unwrap(ckpts, n)); });
}

ckav_status ckav_weights_uniform(size_t k, double* out) {
    return guarded([&] {
        require(out, "out");
        copy_weights(ckav::uniform_weights(k), out);
    });
}

ckav_status ckav_weights_ppl_softmax(const double* ppls, size_t k, double tau, double* out) {
    return guarded([&] {
        require(ppls, "ppls");
        require(out, "out");
        copy_weights(ckav::ppl_softmax_weights({ppls, k}, {tau}), out);
    });
}

ckav_status ckav_weights_explicit(const double* weights, size_t k, double* out) {
    return guarded([&] {
        require(weights, "weights");
        require(out, "out");
        copy_weights(ckav::explicit_weights({weights, k}), out);
    });
}

ckav_status ckav_select(const ckav_checkpoint* const* series, size_t n, ckav_selection kind, size_t k,
                        size_t* out_indices, size_t* out_count) {
    return guarded([&] {
        require(out_indices, "out_indices");
        require(out_count, "out_count");
        const auto refs = unwrap(series, n);
        std::vector<ckav::CheckpointMeta> metas;
        for (const auto* c : refs) metas.push_back(c->meta);
        const auto result = ckav::select(metas, {to_kind(kind), k});
        std::copy(result.indices.begin(), result.indices.end(), out_indices);
        *out_count = result.indices.size();
    });
}

ckav_status ckav_average(const ckav_checkpoint* const* ckpts, size_t n, const double* weights, size_t threads,
                         ckav_checkpoint** out) {
    return guarded([&] {
        require(weights, "weights");
        require(out, "out");
        auto handle = std::make_unique<ckav_checkpoint>();
        handle->value = ckav::weighted_average(unwrap(ckpts, n), ckav::WeightVector({weights, weights + n}), threads);
        *out = handle.release();
    });
}

ckav_status ckav_gradient_step_average(const ckav_checkpoint* const* ckpts, size_t n, const double* weights,
                                       double eta, size_t threads, ckav_checkpoint** out) {
    return guarded([&] {
        require(weights, "weights");
        require(out, "out");
        auto handle = std::make_unique<ckav_checkpoint>();
        handle->value = ckav::gradient_step_average(unwrap(ckpts, n), ckav::WeightVector({weights, weights + n}),
                                                    {eta}, threads);
        *out = handle.release();
    });
}

ckav_status ckav_dataset_read(const char* path, ckav_dataset** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        auto handle = std::make_unique<ckav_dataset>();
        handle->value = ckav::read_dataset(path);
        *out = handle.release();
    });
}

ckav_status ckav_dataset_write(const ckav_dataset* data, const char* path) {
    return guarded([&] {
        require(data, "dataset");
        require(path, "path");
        ckav::write_dataset(path, data->value);
    });
}

void ckav_dataset_free(ckav_dataset* data) { delete data; }

ckav_status ckav_objective_create(const char* spec_json, const ckav_dataset* dev, ckav_objective** out) {
    return guarded([&] {
        require(spec_json, "spec_json");
        require(out, "out");
        auto handle = std::make_unique<ckav_objective>();
        if (ckav::is_quadratic_spec(spec_json)) {
            handle->value = std::make_unique<ckav::QuadraticObjective>(ckav::parse_quadratic_spec(spec_json).center);
        } else {
            if (dev == nullptr) throw ckav::ValidationError("a dev dataset is required for the toy model objective");
            const auto cfg = ckav::parse_toy_run_config(spec_json);
            handle->value = std::make_unique<ckav::MlpObjective>(cfg.model, dev->value);
        }
        *out = handle.release();
    });
}

void ckav_objective_free(ckav_objective* objective) { delete objective; }

ckav_status ckav_evaluate(const ckav_objective* objective, const ckav_checkpoint* ckpt, double* out_loss,
                          double* out_ppl) {
    return guarded([&] {
        require(objective, "objective");
        require(ckpt, "checkpoint");
        require(out_loss, "out_loss");
        require(out_ppl, "out_ppl");
        const auto r = objective->value->evaluate(ckpt->value.params);
        *out_loss = r.loss;
        *out_ppl = r.ppl;
    });
}

ckav_status ckav_optimize_weights(const ckav_checkpoint* const* ckpts, size_t n, const ckav_objective* objective,
                                  double eta, double* out_weights, char** out_report_json) {
    return guarded([&] {
        require(objective, "objective");
        require(out_weights, "out_weights");
        const auto report = ckav::one_step_optimize(unwrap(ckpts, n), *objective->value, {eta});
        copy_weights(report.weights, out_weights);
        if (out_report_json) {
            json doc = {{"eta", eta},
                        {"gradient", report.gradient},
                        {"logits", report.logits},
                        {"weights", report.weights.values()},
                        {"loss_before", report.before.loss},
                        {"ppl_before", report.before.ppl},
                        {"loss_after", report.after.loss},
                        {"ppl_after", report.after.ppl}};
            *out_report_json = dup_string(doc.dump(2));
        }
    });
}

ckav_status ckav_train_toy(const char* spec_json, const char* adam_json, const char* out_dir, int has_seed,
                           uint64_t seed_override, char** out_json) {
    return guarded([&] {
        require(spec_json, "spec_json");
        require(adam_json, "adam_json");
        require(out_dir, "out_dir");
        const auto run = ckav::parse_toy_run_config(spec_json);
        auto adam = ckav::parse_adam_config(adam_json);
        if (has_seed) adam.seed = seed_override;
        const std::filesystem::path dir(out_dir);
        if (!std::filesystem::is_directory(dir)) throw ckav::IoError("output directory '" + dir.string() + "' does not exist");

        const std::uint64_t data_seed = run.data.seed.value_or(adam.seed);
        const auto all = ckav::make_synthetic_data(run.model, run.data.n_train + run.data.n_dev, data_seed);
        const auto [train, dev] = ckav::split(all, run.data.n_train);
        ckav::write_dataset(dir / "train.ckav", train);
        ckav::write_dataset(dir / "dev.ckav", dev);
        const auto metas = ckav::train_with_checkpoints(run.model, train, dev, adam, dir);

        if (out_json) {
            json doc = series_summary(metas, dir);
            doc["train"] = (dir / "train.ckav").string();
            doc["dev"] = (dir / "dev.ckav").string();
            *out_json = dup_string(doc.dump(2));
        }
    });
}

ckav_status ckav_gen_quadratic(const char* spec_json, const char* out_dir, int has_seed, uint64_t seed_override,
                               char** out_json) {
    return guarded([&] {
        require(spec_json, "spec_json");
        require(out_dir, "out_dir");
        auto spec = ckav::parse_quadratic_spec(spec_json);
        if (has_seed) spec.seed = seed_override;
        const auto metas = ckav::sample_quadratic_checkpoints(spec, out_dir);
        if (out_json) *out_json = dup_string(series_summary(metas, out_dir).dump(2));
    });
}

void ckav_sweep_options_init(ckav_sweep_options* options) {
    if (!options) return;
    options->kind = CKAV_SWEEP_K;
    options->selection = CKAV_SELECT_TOP_K;
    options->k = 10;
    options->tau = 100.0;
    options->grid = nullptr;
    options->grid_len = 0;
    options->resolution = 20;
    options->threads = 1;
    options->format = CKAV_FORMAT_CSV;
}

ckav_status ckav_sweep(const ckav_checkpoint* const* ckpts, size_t n, const ckav_objective* objective,
                       const ckav_sweep_options* options, char** out_text, char** out_summary_json) {
    return guarded([&] {
        require(objective, "objective");
        require(options, "options");
        require(out_text, "out_text");
        const auto& obj = *objective->value;
        auto refs = unwrap(ckpts, n);
        auto series = refs;
        std::stable_sort(series.begin(), series.end(),
                         [](const auto* a, const auto* b) { return a->meta.step < b->meta.step; });

        std::vector<double> grid;
        if (options->grid) {
            grid.assign(options->grid, options->grid + options->grid_len);
        }
        const std::size_t threads = std::max<std::size_t>(options->threads, 1);

        std::vector<ckav::SweepRecord> records;
        json summary = json::object();
        switch (options->kind) {
            case CKAV_SWEEP_K:
                summary["kind"] = "k";
                records = ckav::k_sweep(series, to_kind(options->selection), options->k, obj, threads);
                break;
            case CKAV_SWEEP_TEMP:
                summary["kind"] = "temp";
                if (!options->grid) grid = ckav::default_taus();
                records = ckav::temp_sweep(series, {to_kind(options->selection), options->k}, grid, obj, threads);
                break;
            case CKAV_SWEEP_GRAD_ETA:
                summary["kind"] = "grad-eta";
                if (!options->grid) grid = ckav::default_etas();
                records = ckav::eta_sweep_grad(series, {to_kind(options->selection), options->k}, options->tau, grid,
                                               obj, threads);
                break;
            case CKAV_SWEEP_OPT_ETA:
                summary["kind"] = "opt-eta";
                if (!options->grid) grid = ckav::default_etas();
                records = ckav::eta_sweep_optimize(refs, grid, obj, threads);
                break;
            case CKAV_SWEEP_SIMPLEX: {
                summary["kind"] = "simplex";
                if (refs.size() != 3) throw ckav::ValidationError("simplex sweep needs exactly 3 checkpoints");
                const ckav::SimplexGridSpec spec{options->resolution};
                records = ckav::simplex_grid(*refs[0], *refs[1], *refs[2], spec, obj, threads);
                const auto stats = ckav::flatness(records, spec);
                summary["flatness"] = {{"interior_points", stats.interior_points},
                                       {"interior_spread", stats.interior_spread},
                                       {"vertex_spread", stats.vertex_spread}};
                break;
            }
            default:
                throw UsageError("unknown sweep kind");
        }
        summary["records"] = records.size();
        switch (options->format) {
            case CKAV_FORMAT_CSV: *out_text = dup_string(ckav::to_csv(records)); break;
            case CKAV_FORMAT_JSON: *out_text = dup_string(ckav::to_json(records)); break;
            default: throw UsageError("unknown output format");
        }
        if (out_summary_json) *out_summary_json = dup_string(summary.dump());
    });
}

}  // extern "C"
