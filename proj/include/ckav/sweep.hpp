#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ckav/averaging.hpp"
#include "ckav/selection.hpp"
#include "ckav/tensor_store.hpp"
#include "ckav/toy_model.hpp"

namespace ckav {

// One evaluated grid point: swept parameter values, dev loss, and optionally
// the interpolation weights that produced the model.
struct SweepRecord {
    std::vector<std::pair<std::string, double>> params;
    double dev_loss = 0.0;
    double dev_ppl = 1.0;
    std::optional<WeightVector> weights;
};

struct SimplexGridSpec {
    std::size_t resolution = 20;
};

std::vector<double> default_taus();  // {0, 0.1, 1, 10, 100, 1e3, 1e6}
std::vector<double> default_etas();  // 8 log-spaced points from 1e-4 to 1e2

// Every sweep evaluates the float32 averaged checkpoint, i.e. the model the
// `average` command would write. `series` must be ordered by step ascending.
// Grid points run on up to `threads` workers; output order is fixed.

// K = 1..min(k_max, |series|): select, uniform mean, evaluate. Column "k".
std::vector<SweepRecord> k_sweep(std::span<const Checkpoint* const> series, SelectionKind kind, std::size_t k_max,
                                 const Objective& objective, std::size_t threads = 1);

// Perplexity-softmax weights for each tau. Column "tau"; weights recorded.
std::vector<SweepRecord> temp_sweep(std::span<const Checkpoint* const> series, SelectionStrategy strategy,
                                    std::span<const double> taus, const Objective& objective, std::size_t threads = 1);

// Gradient-step average with perplexity-softmax weights at `tau`, for each eta. Column "eta".
std::vector<SweepRecord> eta_sweep_grad(std::span<const Checkpoint* const> series, SelectionStrategy strategy, double tau,
                                        std::span<const double> etas, const Objective& objective,
                                        std::size_t threads = 1);

// One-step logit optimization for each eta; the logit gradient is computed
// once and scaled. Column "eta"; weights recorded.
std::vector<SweepRecord> eta_sweep_optimize(std::span<const Checkpoint* const> ckpts, std::span<const double> etas,
                                            const Objective& objective, std::size_t threads = 1);

// All (a, b, c) with a + b + c = R, weights (a/R, b/R, c/R), in lexicographic
// (a, b) order: (R+1)(R+2)/2 records. Columns "a", "b", "c".
std::vector<SweepRecord> simplex_grid(const Checkpoint& c1, const Checkpoint& c2, const Checkpoint& c3,
                                      SimplexGridSpec grid, const Objective& objective, std::size_t threads = 1);

struct FlatnessStats {
    std::size_t interior_points = 0;
    double interior_spread = 0.0;  // max - min dev loss over points with a, b, c >= 1
    double vertex_spread = 0.0;    // max |vertex loss - interior mean|
};

// Summary of a simplex_grid result; interior values are 0 when R < 3.
FlatnessStats flatness(std::span<const SweepRecord> simplex_records, SimplexGridSpec grid);

// Header row, then one row per record; floats with 17 significant digits.
std::string to_csv(std::span<const SweepRecord> records);
std::string to_json(std::span<const SweepRecord> records);

}  // namespace ckav
