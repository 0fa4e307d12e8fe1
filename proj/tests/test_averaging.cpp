#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ckav/averaging.hpp"
#include "ckav/error.hpp"
#include "test_support.hpp"

using namespace ckav;
using ckav::testing::vector_checkpoint;

namespace {

std::vector<Checkpoint> random_family(std::mt19937_64& gen, std::size_t k, bool with_grads) {
    std::normal_distribution<float> value(0.0f, 2.0f);
    std::vector<Checkpoint> out;
    for (std::size_t i = 0; i < k; ++i) {
        Checkpoint c;
        c.params.emplace("a", Tensor{{2, 3}, {}});
        c.params.emplace("b", Tensor{{5}, {}});
        for (auto& [name, t] : c.params) {
            t.data.resize(shape_numel(t.shape));
            for (float& v : t.data) v = value(gen);
        }
        if (with_grads) {
            c.grads = c.params;
            for (auto& [name, t] : *c.grads)
                for (float& v : t.data) v = value(gen);
        }
        c.meta.step = (i + 1) * 10;
        out.push_back(std::move(c));
    }
    return out;
}

// Independent oracle: plain double loop in step order, one rounding.
TensorMap oracle_average(const std::vector<Checkpoint>& ckpts, const std::vector<double>& w) {
    TensorMap out;
    for (const auto& [name, t] : ckpts.front().params) {
        Tensor r = Tensor::zeros(t.shape);
        for (std::size_t j = 0; j < r.data.size(); ++j) {
            double s = 0;
            for (std::size_t k = 0; k < ckpts.size(); ++k)
                s += w[k] * static_cast<double>(ckpts[k].params.at(name).data[j]);
            r.data[j] = static_cast<float>(s);
        }
        out.emplace(name, std::move(r));
    }
    return out;
}

}  // namespace

TEST_CASE("WeightVector validation") {
    CHECK_NOTHROW(WeightVector({0.25, 0.75}));
    CHECK_THROWS_AS(WeightVector({0.5, 0.6}), ValidationError);
    CHECK_THROWS_AS(WeightVector({-0.5, 1.5}), ValidationError);
    CHECK_THROWS_AS(WeightVector({NAN, 1.0}), ValidationError);
    CHECK_THROWS_AS(WeightVector(std::vector<double>{}), ValidationError);
}

TEST_CASE("uniform weights") {
    const auto w = uniform_weights(4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(w[i] == 0.25);
    CHECK_THROWS_AS(uniform_weights(0), ValidationError);
}

TEST_CASE("explicit weights") {
    const double given[] = {0.2, 0.3, 0.5 + 5e-10};
    const auto w = explicit_weights(given);
    double s = 0;
    for (double v : w.values()) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-15);
    const double bad[] = {0.2, 0.3, 0.6};
    CHECK_THROWS_AS(explicit_weights(bad), ValidationError);
}

TEST_CASE("perplexity softmax") {
    SUBCASE("worked example: ppl {2, 4}, tau 1") {
        const double ppl[] = {2.0, 4.0};
        const auto w = ppl_softmax_weights(ppl, {1.0});
        CHECK(w[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
        CHECK(w[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }
    SUBCASE("worked example: ppl {5, 10}, tau 1") {
        const double ppl[] = {5.0, 10.0};
        const auto w = ppl_softmax_weights(ppl, {1.0});
        CHECK(std::abs(w[0] - 2.0 / 3.0) <= 1e-12);
        CHECK(std::abs(w[1] - 1.0 / 3.0) <= 1e-12);
    }
    SUBCASE("tau = 0 is exactly uniform") {
        const double ppl[] = {1.5, 7.0, 3.25, 100.0, 2.0};
        const auto w = ppl_softmax_weights(ppl, {0.0});
        CHECK(w == uniform_weights(5));
    }
    SUBCASE("huge tau is one-hot at the best") {
        const double ppl[] = {4.0, 3.9, 5.0};
        const auto w = ppl_softmax_weights(ppl, {1e6});
        CHECK(w[1] == 1.0);
        CHECK(w[0] == 0.0);
        CHECK(w[2] == 0.0);
    }
    SUBCASE("scale invariance") {
        const double ppl[] = {2.0, 3.0, 5.0};
        const double scaled[] = {2.0 * 7.5, 3.0 * 7.5, 5.0 * 7.5};
        const auto a = ppl_softmax_weights(ppl, {1.7});
        const auto b = ppl_softmax_weights(scaled, {1.7});
        for (std::size_t i = 0; i < 3; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    }
    SUBCASE("best weight grows with tau") {
        const double ppl[] = {3.0, 2.5, 4.0, 2.6};
        double prev = 0;
        for (double tau : {0.0, 0.1, 1.0, 10.0, 100.0}) {
            const auto w = ppl_softmax_weights(ppl, {tau});
            CHECK(w[1] >= prev);
            prev = w[1];
            double s = 0;
            for (double v : w.values()) s += v;
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
    }
    SUBCASE("invalid input") {
        const double ppl[] = {0.0, 2.0};
        CHECK_THROWS_AS(ppl_softmax_weights(ppl, {1.0}), ValidationError);
        const double ok[] = {1.0, 2.0};
        CHECK_THROWS_AS(ppl_softmax_weights(ok, {-1.0}), ValidationError);
    }
}

TEST_CASE("midpoint example") {
    const Checkpoint a = vector_checkpoint({0.0f, 0.0f}, 1);
    const Checkpoint b = vector_checkpoint({2.0f, 4.0f}, 2);
    const auto out = weighted_average(CheckpointRefs{&a, &b}, uniform_weights(2));
    CHECK(out.params.at("w").data == std::vector<float>{1.0f, 2.0f});
    CHECK(!out.has_grads());
    CHECK(!out.meta.dev_ppl);
    CHECK(out.meta.step == 2);
}

TEST_CASE("single checkpoint is a bit identity") {
    std::mt19937_64 gen(1);
    for (int trial = 0; trial < 20; ++trial) {
        const auto fam = random_family(gen, 1, false);
        const auto out = weighted_average(CheckpointRefs{&fam[0]}, uniform_weights(1));
        CHECK(out.params == fam[0].params);
    }
}

TEST_CASE("matches the double-precision oracle") {
    std::mt19937_64 gen(2);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t k = 2 + gen() % 6;
        const auto fam = random_family(gen, k, false);
        std::vector<double> raw(k);
        double s = 0;
        for (auto& v : raw) s += (v = u(gen));
        for (auto& v : raw) v /= s;
        const WeightVector w(raw);
        CHECK(weighted_average(refs(fam), w).params == oracle_average(fam, w.values()));
    }
}

TEST_CASE("permutation of inputs leaves the output bit-identical") {
    std::mt19937_64 gen(3);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t k = 2 + gen() % 8;
        const auto fam = random_family(gen, k, true);
        std::vector<double> raw(k);
        std::uniform_real_distribution<double> u(0.01, 1.0);
        double s = 0;
        for (auto& v : raw) s += (v = u(gen));
        for (auto& v : raw) v /= s;

        std::vector<std::size_t> perm(k);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), gen);
        CheckpointRefs shuffled;
        std::vector<double> wp;
        for (auto p : perm) {
            shuffled.push_back(&fam[p]);
            wp.push_back(raw[p]);
        }
        const WeightVector w(raw), w_shuffled(wp);
        CHECK(weighted_average(refs(fam), w).params == weighted_average(shuffled, w_shuffled).params);
        CHECK(gradient_step_average(refs(fam), w, {0.3}).params ==
              gradient_step_average(shuffled, w_shuffled, {0.3}).params);
    }
}

TEST_CASE("output stays inside the per-coordinate hull") {
    std::mt19937_64 gen(4);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t k = 1 + gen() % 6;
        const auto fam = random_family(gen, k, false);
        const auto out = weighted_average(refs(fam), uniform_weights(k));
        for (const auto& [name, t] : out.params) {
            for (std::size_t j = 0; j < t.data.size(); ++j) {
                float lo = INFINITY, hi = -INFINITY;
                for (const auto& c : fam) {
                    lo = std::min(lo, c.params.at(name).data[j]);
                    hi = std::max(hi, c.params.at(name).data[j]);
                }
                CHECK(t.data[j] >= lo);
                CHECK(t.data[j] <= hi);
            }
        }
    }
}

TEST_CASE("threads do not change the result") {
    std::mt19937_64 gen(5);
    const auto fam = random_family(gen, 5, true);
    const auto w = uniform_weights(5);
    const auto one = gradient_step_average(refs(fam), w, {0.1}, 1);
    const auto four = gradient_step_average(refs(fam), w, {0.1}, 4);
    CHECK(one == four);
}

TEST_CASE("incompatible inputs") {
    const Checkpoint a = vector_checkpoint({1.0f, 2.0f});
    const Checkpoint b = vector_checkpoint({1.0f, 2.0f, 3.0f});
    CHECK_THROWS_AS(weighted_average(CheckpointRefs{&a, &b}, uniform_weights(2)), ValidationError);
    CHECK_THROWS_AS(weighted_average(CheckpointRefs{&a, &a}, uniform_weights(3)), ValidationError);
    CHECK_THROWS_AS(weighted_average(CheckpointRefs{}, uniform_weights(1)), ValidationError);
}

TEST_CASE("gradient step") {
    SUBCASE("worked example") {
        Checkpoint c = vector_checkpoint({1.0f});
        c.grads = TensorMap{{"w", Tensor{{1}, {2.0f}}}};
        const auto out = gradient_step_average(CheckpointRefs{&c}, uniform_weights(1), {0.5});
        CHECK(out.params.at("w").data == std::vector<float>{0.0f});
    }
    SUBCASE("eta = 0 matches plain averaging bit for bit") {
        std::mt19937_64 gen(6);
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t k = 1 + gen() % 6;
            const auto fam = random_family(gen, k, true);
            const auto w = uniform_weights(k);
            CHECK(gradient_step_average(refs(fam), w, {0.0}).params == weighted_average(refs(fam), w).params);
        }
    }
    SUBCASE("gradient mean is uniform regardless of w") {
        Checkpoint a = vector_checkpoint({0.0f}, 1);
        Checkpoint b = vector_checkpoint({4.0f}, 2);
        a.grads = TensorMap{{"w", Tensor{{1}, {2.0f}}}};
        b.grads = TensorMap{{"w", Tensor{{1}, {6.0f}}}};
        const auto out = gradient_step_average(CheckpointRefs{&a, &b}, WeightVector({0.75, 0.25}), {0.25});
        // 0.75*0 + 0.25*4 - 0.25 * (2 + 6)/2 = 0
        CHECK(out.params.at("w").data == std::vector<float>{0.0f});
    }
    SUBCASE("displacement scales linearly with eta") {
        std::mt19937_64 gen(8);
        const auto fam = random_family(gen, 3, true);
        const auto w = uniform_weights(3);
        const auto base = weighted_sum_wide(refs(fam), w);
        for (double eta : {0.01, 0.1, 1.0}) {
            const auto out = gradient_step_average(refs(fam), w, {eta});
            for (const auto& [name, t] : out.params) {
                for (std::size_t j = 0; j < t.data.size(); ++j) {
                    double gmean = 0;
                    for (const auto& c : fam) gmean += c.grads->at(name).data[j];
                    gmean *= 1.0 / 3.0;
                    const double expect = base.at(name).data[j] - eta * gmean;
                    CHECK(t.data[j] == static_cast<float>(expect));
                }
            }
        }
    }
    SUBCASE("missing gradients") {
        Checkpoint a = vector_checkpoint({1.0f});
        a.grads = TensorMap{{"w", Tensor{{1}, {1.0f}}}};
        const Checkpoint b = vector_checkpoint({1.0f}, 1);
        CHECK_THROWS_WITH_AS(gradient_step_average(CheckpointRefs{&a, &b}, uniform_weights(2), {0.1}),
                             doctest::Contains("gradient required"), ValidationError);
    }
    SUBCASE("negative eta") {
        Checkpoint a = vector_checkpoint({1.0f});
        a.grads = a.params;
        CHECK_THROWS_AS(gradient_step_average(CheckpointRefs{&a}, uniform_weights(1), {-1.0}), ValidationError);
    }
}
