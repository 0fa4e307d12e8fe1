#include "ckav/config.hpp"

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "ckav/error.hpp"

namespace ckav {

namespace {

using json = nlohmann::json;

json parse_object(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ValidationError("config must be a JSON object");
    return doc;
}

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : obj.items()) {
        bool known = false;
        for (const char* a : allowed) known = known || key == a;
        if (!known) throw ValidationError("unknown config key '" + key + "'");
    }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        const json& v = obj.at(key);
        if constexpr (std::is_unsigned_v<T>) {
            if (!v.is_number_unsigned()) throw ValidationError(std::string("'") + key + "' must be a non-negative integer");
        }
        out = v.get<T>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("bad value for '") + key + "': " + e.what());
    }
}

}  // namespace

ToyRunConfig parse_toy_run_config(std::string_view json_text) {
    const json doc = parse_object(json_text);
    reject_unknown(doc, {"input_dim", "hidden_dim", "num_classes", "data"});
    ToyRunConfig cfg;
    read(doc, "input_dim", cfg.model.input_dim);
    read(doc, "hidden_dim", cfg.model.hidden_dim);
    read(doc, "num_classes", cfg.model.num_classes);
    if (doc.contains("data")) {
        const json& data = doc.at("data");
        if (!data.is_object()) throw ValidationError("'data' must be an object");
        reject_unknown(data, {"n_train", "n_dev", "seed"});
        read(data, "n_train", cfg.data.n_train);
        read(data, "n_dev", cfg.data.n_dev);
        if (data.contains("seed")) {
            std::uint64_t seed = 0;
            read(data, "seed", seed);
            cfg.data.seed = seed;
        }
    }
    cfg.model.validate();
    if (cfg.data.n_train == 0 || cfg.data.n_dev == 0) throw ValidationError("n_train and n_dev must be >= 1");
    return cfg;
}

AdamConfig parse_adam_config(std::string_view json_text) {
    const json doc = parse_object(json_text);
    reject_unknown(doc, {"lr", "beta1", "beta2", "eps", "batch_size", "steps", "checkpoint_every", "seed"});
    AdamConfig cfg;
    read(doc, "lr", cfg.lr);
    read(doc, "beta1", cfg.beta1);
    read(doc, "beta2", cfg.beta2);
    read(doc, "eps", cfg.eps);
    read(doc, "batch_size", cfg.batch_size);
    read(doc, "steps", cfg.steps);
    read(doc, "checkpoint_every", cfg.checkpoint_every);
    read(doc, "seed", cfg.seed);
    cfg.validate();
    return cfg;
}

QuadraticTaskSpec parse_quadratic_spec(std::string_view json_text) {
    const json doc = parse_object(json_text);
    reject_unknown(doc, {"dim", "center", "noise_sigma", "num_checkpoints", "seed"});
    QuadraticTaskSpec spec;
    read(doc, "dim", spec.dim);
    read(doc, "noise_sigma", spec.noise_sigma);
    read(doc, "num_checkpoints", spec.num_checkpoints);
    read(doc, "seed", spec.seed);
    if (!doc.contains("center")) {
        spec.center.assign(spec.dim, 0.0);
    } else if (doc.at("center").is_number()) {
        spec.center.assign(spec.dim, doc.at("center").get<double>());
    } else {
        read(doc, "center", spec.center);
        if (!doc.contains("dim")) spec.dim = spec.center.size();
    }
    spec.validate();
    return spec;
}

bool is_quadratic_spec(std::string_view json_text) {
    const json doc = parse_object(json_text);
    return doc.contains("dim") || doc.contains("center");
}

}  // namespace ckav
