#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "ckav/error.hpp"
#include "ckav/selection.hpp"

using namespace ckav;

namespace {

std::vector<CheckpointMeta> series(const std::vector<double>& ppls) {
    std::vector<CheckpointMeta> out;
    for (std::size_t i = 0; i < ppls.size(); ++i) out.push_back({(i + 1) * 100, ppls[i], ""});
    return out;
}

std::vector<std::size_t> pick(const std::vector<CheckpointMeta>& metas, SelectionKind kind, std::size_t k) {
    return select(metas, {kind, k}).indices;
}

double mean_ppl(const std::vector<CheckpointMeta>& metas, const std::vector<std::size_t>& idx) {
    double s = 0;
    for (auto i : idx) s += *metas[i].dev_ppl;
    return s / static_cast<double>(idx.size());
}

}  // namespace

TEST_CASE("worked examples") {
    const auto metas = series({5.0, 3.0, 4.0, 2.0, 6.0});
    auto top = pick(metas, SelectionKind::TopK, 2);
    std::sort(top.begin(), top.end());
    CHECK(top == std::vector<std::size_t>{1, 3});
    CHECK(pick(metas, SelectionKind::LastKFromBest, 3) == std::vector<std::size_t>{1, 2, 3});
    CHECK(pick(metas, SelectionKind::LastKFromEnd, 2) == std::vector<std::size_t>{3, 4});
}

TEST_CASE("best near the start clips the window") {
    const auto metas = series({3.0, 1.0, 4.0, 5.0});
    CHECK(pick(metas, SelectionKind::LastKFromBest, 3) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("K = 1 gives the best checkpoint for both best-anchored strategies") {
    const auto metas = series({5.0, 3.0, 4.0, 2.0, 6.0});
    CHECK(pick(metas, SelectionKind::TopK, 1) == std::vector<std::size_t>{3});
    CHECK(pick(metas, SelectionKind::LastKFromBest, 1) == std::vector<std::size_t>{3});
    CHECK(best_index(metas) == 3);
}

TEST_CASE("ties prefer the smaller step") {
    const auto metas = series({2.0, 1.0, 1.0, 3.0});
    CHECK(best_index(metas) == 1);
    CHECK(pick(metas, SelectionKind::TopK, 1) == std::vector<std::size_t>{1});
}

TEST_CASE("K larger than the series clips") {
    const auto metas = series({2.0, 1.0, 3.0});
    CHECK(pick(metas, SelectionKind::TopK, 10).size() == 3);
    CHECK(pick(metas, SelectionKind::LastKFromEnd, 10) == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("invalid input") {
    CHECK_THROWS_AS(select(series({1.0}), {SelectionKind::TopK, 0}), ValidationError);
    CHECK_THROWS_AS(select(std::vector<CheckpointMeta>{}, {SelectionKind::TopK, 1}), ValidationError);
    std::vector<CheckpointMeta> missing = series({1.0, 2.0});
    missing[1].dev_ppl.reset();
    CHECK_THROWS_AS(select(missing, {SelectionKind::TopK, 1}), ValidationError);
    CHECK_THROWS_AS(parse_selection_kind("bogus"), ValidationError);
}

TEST_CASE("name round trip") {
    for (auto kind : {SelectionKind::TopK, SelectionKind::LastKFromBest, SelectionKind::LastKFromEnd})
        CHECK(parse_selection_kind(to_string(kind)) == kind);
}

TEST_CASE("randomized properties") {
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> ppl(1.0, 50.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + gen() % 30;
        std::vector<double> p(n);
        for (auto& v : p) v = ppl(gen);
        const auto metas = series(p);

        // top-K mean ppl is non-decreasing in K
        double prev = 0;
        for (std::size_t k = 1; k <= n; ++k) {
            const auto idx = pick(metas, SelectionKind::TopK, k);
            CHECK(idx.size() == k);
            const double m = mean_ppl(metas, idx);
            CHECK(m >= prev);
            prev = m;
        }

        // sizes and contiguity
        for (std::size_t k = 1; k <= n + 2; ++k) {
            const auto best = pick(metas, SelectionKind::LastKFromBest, k);
            CHECK(best.back() == best_index(metas));
            for (std::size_t i = 1; i < best.size(); ++i) CHECK(best[i] == best[i - 1] + 1);
            CHECK(best.size() == std::min(k, best_index(metas) + 1));
            const auto end = pick(metas, SelectionKind::LastKFromEnd, k);
            CHECK(end.size() == std::min(k, n));
            CHECK(end.back() == n - 1);
        }

        // top-K chooses the same set of steps regardless of the ordering of the
        // input (the caller re-sorts by step)
        auto shuffled = metas;
        std::shuffle(shuffled.begin(), shuffled.end(), gen);
        const std::size_t k = 1 + gen() % n;
        auto steps_of = [&](const std::vector<CheckpointMeta>& m) {
            std::vector<std::uint64_t> s;
            for (auto i : pick(m, SelectionKind::TopK, k)) s.push_back(m[i].step);
            std::sort(s.begin(), s.end());
            return s;
        };
        CHECK(steps_of(metas) == steps_of(shuffled));
    }
}
