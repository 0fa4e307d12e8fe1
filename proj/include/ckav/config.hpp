#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include "ckav/toy_model.hpp"

namespace ckav {

// Synthetic data sizes for train-toy: one dataset of n_train + n_dev examples
// drawn with `seed`, split into train and dev.
struct DataConfig {
    std::size_t n_train = 2000;
    std::size_t n_dev = 500;
    std::optional<std::uint64_t> seed;  // falls back to the Adam seed
};

struct ToyRunConfig {
    ToyModelSpec model;
    DataConfig data;
};

// Parsers for the JSON config files. Unknown keys are rejected; missing keys
// keep their defaults. All throw ValidationError.

// {"input_dim", "hidden_dim", "num_classes", "data": {"n_train", "n_dev", "seed"}}
ToyRunConfig parse_toy_run_config(std::string_view json_text);
// {"lr", "beta1", "beta2", "eps", "batch_size", "steps", "checkpoint_every", "seed"}
AdamConfig parse_adam_config(std::string_view json_text);
// {"dim", "center": number | [numbers], "noise_sigma", "num_checkpoints", "seed"}
QuadraticTaskSpec parse_quadratic_spec(std::string_view json_text);

// True when the document describes a quadratic task (has "dim" or "center").
bool is_quadratic_spec(std::string_view json_text);

}  // namespace ckav
