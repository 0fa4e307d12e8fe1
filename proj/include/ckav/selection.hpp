#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "ckav/tensor_store.hpp"

namespace ckav {

enum class SelectionKind {
    TopK,           // K smallest dev_ppl
    LastKFromBest,  // K consecutive checkpoints ending at the best one
    LastKFromEnd,   // final K checkpoints of the series
};

struct SelectionStrategy {
    SelectionKind kind = SelectionKind::TopK;
    std::size_t k = 1;
};

struct SelectionResult {
    std::vector<std::size_t> indices;
};

// `metas` must be ordered by step ascending. K larger than the series clips.
SelectionResult select(std::span<const CheckpointMeta> metas, SelectionStrategy strategy);

// Index of the smallest dev_ppl; ties go to the smaller step.
std::size_t best_index(std::span<const CheckpointMeta> metas);

SelectionKind parse_selection_kind(std::string_view text);
std::string_view to_string(SelectionKind kind);

}  // namespace ckav
