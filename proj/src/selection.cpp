#include "ckav/selection.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <tuple>

#include "ckav/error.hpp"

namespace ckav {

namespace {

void require_ppl(std::span<const CheckpointMeta> metas) {
    for (std::size_t i = 0; i < metas.size(); ++i) {
        if (!metas[i].dev_ppl) {
            throw ValidationError("checkpoint " + std::to_string(i) + " has no dev_ppl; required for selection");
        }
    }
}

bool ppl_less(const CheckpointMeta& a, const CheckpointMeta& b) {
    return std::tie(*a.dev_ppl, a.step) < std::tie(*b.dev_ppl, b.step);
}

}  // namespace

std::size_t best_index(std::span<const CheckpointMeta> metas) {
    if (metas.empty()) throw ValidationError("empty checkpoint series");
    require_ppl(metas);
    std::size_t best = 0;
    for (std::size_t i = 1; i < metas.size(); ++i) {
        if (ppl_less(metas[i], metas[best])) best = i;
    }
    return best;
}

SelectionResult select(std::span<const CheckpointMeta> metas, SelectionStrategy strategy) {
    if (metas.empty()) throw ValidationError("empty checkpoint series");
    if (strategy.k == 0) throw ValidationError("selection K must be >= 1");
    const std::size_t n = metas.size();
    const std::size_t k = std::min(strategy.k, n);

    SelectionResult result;
    switch (strategy.kind) {
        case SelectionKind::TopK: {
            require_ppl(metas);
            std::vector<std::size_t> order(n);
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return ppl_less(metas[a], metas[b]);
            });
            result.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
            break;
        }
        case SelectionKind::LastKFromBest: {
            const std::size_t b = best_index(metas);
            const std::size_t first = b + 1 >= k ? b + 1 - k : 0;
            for (std::size_t i = first; i <= b; ++i) result.indices.push_back(i);
            break;
        }
        case SelectionKind::LastKFromEnd:
            for (std::size_t i = n - k; i < n; ++i) result.indices.push_back(i);
            break;
    }
    return result;
}

SelectionKind parse_selection_kind(std::string_view text) {
    if (text == "top-k") return SelectionKind::TopK;
    if (text == "last-k-best") return SelectionKind::LastKFromBest;
    if (text == "last-k-end") return SelectionKind::LastKFromEnd;
    throw ValidationError("unknown selection strategy '" + std::string(text) + "'");
}

std::string_view to_string(SelectionKind kind) {
    switch (kind) {
        case SelectionKind::TopK: return "top-k";
        case SelectionKind::LastKFromBest: return "last-k-best";
        case SelectionKind::LastKFromEnd: return "last-k-end";
    }
    return "?";
}

}  // namespace ckav
