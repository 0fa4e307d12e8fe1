#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>

#include "ckav/averaging.hpp"
#include "ckav/error.hpp"
#include "ckav/rng.hpp"
#include "ckav/toy_model.hpp"
#include "test_support.hpp"

using namespace ckav;
using ckav::testing::relative_error;
using ckav::testing::TempDir;

namespace {

// Straightforward reimplementation of the mean cross-entropy.
double oracle_loss(const WideTensorMap& p, const DevSet& data, const ToyModelSpec& spec) {
    const auto& W1 = p.at("W1").data;
    const auto& b1 = p.at("b1").data;
    const auto& W2 = p.at("W2").data;
    const auto& b2 = p.at("b2").data;
    double total = 0;
    for (std::size_t e = 0; e < data.size(); ++e) {
        const auto x = data.row(e);
        std::vector<double> h(spec.hidden_dim), z(spec.num_classes);
        for (std::size_t j = 0; j < spec.hidden_dim; ++j) {
            double a = b1[j];
            for (std::size_t i = 0; i < spec.input_dim; ++i) a += W1[j * spec.input_dim + i] * x[i];
            h[j] = std::tanh(a);
        }
        double zmax = -INFINITY;
        for (std::size_t c = 0; c < spec.num_classes; ++c) {
            z[c] = b2[c];
            for (std::size_t j = 0; j < spec.hidden_dim; ++j) z[c] += W2[c * spec.hidden_dim + j] * h[j];
            zmax = std::max(zmax, z[c]);
        }
        double s = 0;
        for (double v : z) s += std::exp(v - zmax);
        total += -(z[data.labels[e]] - zmax - std::log(s));
    }
    return total / static_cast<double>(data.size());
}

WideTensorMap random_wide_params(const ToyModelSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    WideTensorMap out;
    for (const auto& [name, shape] : spec.param_shapes()) {
        WideTensor t{shape, std::vector<double>(shape_numel(shape))};
        for (double& v : t.data) v = 0.7 * rng.normal();
        out.emplace(name, std::move(t));
    }
    return out;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("spec validation and shapes") {
    ToyModelSpec spec{3, 5, 2};
    const auto shapes = spec.param_shapes();
    CHECK(shapes.at("W1") == Shape{5, 3});
    CHECK(shapes.at("b1") == Shape{5});
    CHECK(shapes.at("W2") == Shape{2, 5});
    CHECK(shapes.at("b2") == Shape{2});
    CHECK(spec.num_params() == 15 + 5 + 10 + 2);
    CHECK_THROWS_AS((ToyModelSpec{0, 5, 2}.validate()), ValidationError);
    CHECK_THROWS_AS((ToyModelSpec{3, 5, 1}.validate()), ValidationError);
}

TEST_CASE("forward loss matches the oracle") {
    const ToyModelSpec spec{3, 4, 3};
    const DevSet data = make_synthetic_data(spec, 25, 11);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto p = random_wide_params(spec, seed);
        const auto r = forward_loss(p, data, spec);
        CHECK(relative_error(r.loss, oracle_loss(p, data, spec)) <= 1e-12);
        CHECK(r.ppl == std::exp(r.loss));
    }
}

TEST_CASE("zero parameters give perplexity equal to the class count") {
    const ToyModelSpec spec{8, 16, 4};
    const DevSet data = make_synthetic_data(spec, 50, 3);
    TensorMap zero;
    for (const auto& [name, shape] : spec.param_shapes()) zero.emplace(name, Tensor::zeros(shape));
    const auto r = forward_loss(zero, data, spec);
    CHECK(relative_error(r.ppl, 4.0) <= 1e-12);
}

TEST_CASE("analytic gradient matches central differences") {
    const ToyModelSpec spec{3, 3, 3};
    const DevSet data = make_synthetic_data(spec, 8, 5);
    const double h = 1e-4;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto p = random_wide_params(spec, 100 + seed);
        const auto g = grad_params(p, data, spec);
        double worst = 0;
        for (auto& [name, t] : p) {
            for (std::size_t i = 0; i < t.data.size(); ++i) {
                const double orig = t.data[i];
                t.data[i] = orig + h;
                const double up = oracle_loss(p, data, spec);
                t.data[i] = orig - h;
                const double down = oracle_loss(p, data, spec);
                t.data[i] = orig;
                const double fd = (up - down) / (2 * h);
                const double an = g.at(name).data[i];
                // tiny components are compared absolutely against the scale of the gradient
                worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(an), 1e-3));
            }
        }
        CHECK(worst <= 1e-4);
    }
}

TEST_CASE("output-bias gradient sums to zero") {
    const ToyModelSpec spec{4, 6, 5};
    const DevSet data = make_synthetic_data(spec, 40, 9);
    const auto g = grad_params(random_wide_params(spec, 2), data, spec);
    double s = 0;
    for (double v : g.at("b2").data) s += v;
    CHECK(std::abs(s) <= 1e-12);
}

TEST_CASE("duplicating every example leaves the mean gradient unchanged") {
    const ToyModelSpec spec{4, 6, 3};
    const DevSet data = make_synthetic_data(spec, 20, 4);
    DevSet doubled = data;
    doubled.inputs.insert(doubled.inputs.end(), data.inputs.begin(), data.inputs.end());
    doubled.labels.insert(doubled.labels.end(), data.labels.begin(), data.labels.end());
    const auto p = random_wide_params(spec, 8);
    const auto g1 = grad_params(p, data, spec);
    const auto g2 = grad_params(p, doubled, spec);
    for (const auto& [name, t] : g1)
        for (std::size_t i = 0; i < t.data.size(); ++i)
            CHECK(std::abs(t.data[i] - g2.at(name).data[i]) <= 1e-12 * std::max(1.0, std::abs(t.data[i])));
}

TEST_CASE("init is Glorot-bounded and deterministic") {
    const ToyModelSpec spec{8, 16, 4};
    const auto a = init_params(spec, 42);
    CHECK(a == init_params(spec, 42));
    CHECK(!(a == init_params(spec, 43)));
    const double bound1 = std::sqrt(6.0 / (8 + 16));
    for (float v : a.at("W1").data) CHECK(std::abs(v) <= bound1);
    for (float v : a.at("b1").data) CHECK(v == 0.0f);
}

TEST_CASE("synthetic data") {
    const ToyModelSpec spec{8, 16, 4};
    const DevSet a = make_synthetic_data(spec, 200, 1);
    CHECK(a.size() == 200);
    CHECK(a.inputs.size() == 200 * 8);
    CHECK(a.inputs == make_synthetic_data(spec, 200, 1).inputs);
    CHECK(a.labels == make_synthetic_data(spec, 200, 1).labels);
    for (auto l : a.labels) CHECK(l < 4);
    for (double v : a.inputs) CHECK(v == static_cast<double>(static_cast<float>(v)));
    const auto [first, rest] = split(a, 150);
    CHECK(first.size() == 150);
    CHECK(rest.size() == 50);
    CHECK(rest.labels[0] == a.labels[150]);
}

TEST_CASE("dataset container round trip") {
    TempDir dir;
    const ToyModelSpec spec{5, 4, 3};
    const DevSet d = make_synthetic_data(spec, 30, 2);
    write_dataset(dir / "d.ckav", d);
    const DevSet back = read_dataset(dir / "d.ckav");
    CHECK(back.input_dim == 5);
    CHECK(back.inputs == d.inputs);
    CHECK(back.labels == d.labels);

    Checkpoint bad = dataset_to_checkpoint(d);
    bad.params.at("labels").data[0] = 1.5f;
    CHECK_THROWS_AS(dataset_from_checkpoint(bad), ValidationError);
}

TEST_CASE("training writes deterministic checkpoints") {
    const ToyModelSpec spec{8, 8, 4};
    const DevSet all = make_synthetic_data(spec, 700, 0);
    const auto [train, dev] = split(all, 500);
    AdamConfig cfg;
    cfg.steps = 450;
    cfg.checkpoint_every = 100;
    cfg.lr = 1e-2;

    TempDir a, b;
    const auto metas = train_with_checkpoints(spec, train, dev, cfg, a.path());
    train_with_checkpoints(spec, train, dev, cfg, b.path());
    REQUIRE(metas.size() == 4);
    for (std::size_t i = 0; i < metas.size(); ++i) {
        const auto name = checkpoint_filename(metas[i].step);
        CHECK(metas[i].step == (i + 1) * 100);
        CHECK(slurp(a / name) == slurp(b / name));
        const Checkpoint c = read_checkpoint(a / name);
        CHECK(c.has_grads());
        CHECK(c.meta.tag == "toy-mlp");
        CHECK(*c.meta.dev_ppl == forward_loss(c.params, dev, spec).ppl);
    }
    CHECK(checkpoint_filename(200) == "ckpt_00000200.ckav");

    const double initial = forward_loss(init_params(spec, cfg.seed), dev, spec).ppl;
    CHECK(*metas.back().dev_ppl < initial);

    TempDir missing_parent;
    CHECK_THROWS_AS(train_with_checkpoints(spec, train, dev, cfg, missing_parent / "nope"), IoError);
}

TEST_CASE("trained model beats chance") {
    const ToyModelSpec spec{8, 16, 4};
    const DevSet all = make_synthetic_data(spec, 2500, 0);
    const auto [train, dev] = split(all, 2000);
    AdamConfig cfg;
    cfg.steps = 2000;
    cfg.checkpoint_every = 2000;
    TempDir dir;
    train_with_checkpoints(spec, train, dev, cfg, dir.path());
    const Checkpoint c = read_checkpoint(dir / checkpoint_filename(2000));
    CHECK(accuracy(c.params, dev, spec) > 0.5);
}

TEST_CASE("quadratic objective") {
    const QuadraticObjective obj(std::vector<double>{1.0, -1.0});
    const WideTensorMap at_center{{"theta", WideTensor{{2}, {1.0, -1.0}}}};
    CHECK(obj.evaluate(at_center).loss == 0.0);
    CHECK(obj.evaluate(at_center).ppl == 1.0);
    const WideTensorMap off{{"theta", WideTensor{{2}, {3.0, -1.0}}}};
    CHECK(obj.evaluate(off).loss == 2.0);
    CHECK(obj.gradient(off).at("theta").data == std::vector<double>{2.0, 0.0});
}

TEST_CASE("noise-free quadratic checkpoints sit at the center") {
    QuadraticTaskSpec spec;
    spec.dim = 8;
    spec.center = {0.1, 0.2, 0.3, 0.4, -0.5, 0.6, 0.7, 0.8};
    spec.noise_sigma = 0.0;
    spec.num_checkpoints = 3;
    for (const auto& c : make_quadratic_checkpoints(spec)) {
        CHECK(*c.meta.dev_ppl == 1.0);
        for (std::size_t i = 0; i < 8; ++i) CHECK(c.params.at("theta").data[i] == static_cast<float>(spec.center[i]));
    }
}

TEST_CASE("quadratic stored gradients are the rounded analytic gradient") {
    QuadraticTaskSpec spec;
    spec.center.assign(spec.dim, 0.25);
    for (const auto& c : make_quadratic_checkpoints(spec)) {
        const auto& theta = c.params.at("theta").data;
        const auto& g = c.grads->at("theta").data;
        for (std::size_t i = 0; i < spec.dim; ++i) {
            const double exact = 2.0 * (static_cast<double>(theta[i]) - 0.25) / static_cast<double>(spec.dim);
            CHECK(g[i] == static_cast<float>(exact));
        }
    }
}

TEST_CASE("averaging all quadratic samples beats the best one") {
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        QuadraticTaskSpec spec;
        spec.center.assign(spec.dim, 0.0);
        spec.seed = seed;
        const auto ckpts = make_quadratic_checkpoints(spec);
        double best = INFINITY;
        for (const auto& c : ckpts) best = std::min(best, *c.meta.dev_ppl);
        const QuadraticObjective obj(spec.center);
        const auto avg = weighted_average(refs(ckpts), uniform_weights(ckpts.size()));
        if (obj.evaluate(avg.params).ppl < best) ++wins;
    }
    CHECK(wins >= 95);
}

TEST_CASE("quadratic gradient step with eta = dim/2 lands on the center") {
    QuadraticTaskSpec spec;
    spec.dim = 16;
    spec.center.assign(spec.dim, 0.5);
    spec.num_checkpoints = 4;
    const auto ckpts = make_quadratic_checkpoints(spec);
    const auto out = gradient_step_average(refs(ckpts), uniform_weights(4), {spec.dim / 2.0});
    const QuadraticObjective obj(spec.center);
    // exact up to float32 rounding of the stored gradients
    CHECK(obj.evaluate(out.params).loss <= 1e-12);
}
