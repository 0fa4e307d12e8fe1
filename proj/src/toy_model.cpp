#include "ckav/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>

#include "ckav/error.hpp"
#include "ckav/rng.hpp"

namespace ckav {

namespace {

constexpr double kLabelNoise = 0.05;

// Read-only views of the four MLP tensors, checked against the spec.
struct MlpView {
    const double* w1;
    const double* b1;
    const double* w2;
    const double* b2;
};

const WideTensor& find_tensor(const WideTensorMap& params, const std::string& name, const Shape& shape) {
    auto it = params.find(name);
    if (it == params.end()) throw ValidationError("model parameter '" + name + "' missing");
    if (it->second.shape != shape) {
        throw ValidationError("shape mismatch at " + name + ": expected " + shape_to_string(shape) + ", got " +
                              shape_to_string(it->second.shape));
    }
    return it->second;
}

MlpView view_of(const WideTensorMap& params, const ToyModelSpec& spec) {
    spec.validate();
    const auto shapes = spec.param_shapes();
    if (params.size() != shapes.size()) {
        throw ValidationError("model has " + std::to_string(params.size()) + " tensors, expected " +
                              std::to_string(shapes.size()));
    }
    return {find_tensor(params, "W1", shapes.at("W1")).data.data(), find_tensor(params, "b1", shapes.at("b1")).data.data(),
            find_tensor(params, "W2", shapes.at("W2")).data.data(), find_tensor(params, "b2", shapes.at("b2")).data.data()};
}

// Per-example forward pass; fills hidden activations and logits, returns -log p(label).
double forward_example(const MlpView& m, const ToyModelSpec& spec, std::span<const double> x, std::uint32_t label,
                       std::vector<double>& hidden, std::vector<double>& logits) {
    const std::size_t d = spec.input_dim, h = spec.hidden_dim, c = spec.num_classes;
    for (std::size_t j = 0; j < h; ++j) {
        double z = m.b1[j];
        const double* row = m.w1 + j * d;
        for (std::size_t i = 0; i < d; ++i) z += row[i] * x[i];
        hidden[j] = std::tanh(z);
    }
    double max_logit = -INFINITY;
    for (std::size_t k = 0; k < c; ++k) {
        double z = m.b2[k];
        const double* row = m.w2 + k * h;
        for (std::size_t j = 0; j < h; ++j) z += row[j] * hidden[j];
        logits[k] = z;
        max_logit = std::max(max_logit, z);
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) sum += std::exp(logits[k] - max_logit);
    return max_logit + std::log(sum) - logits[label];
}

// Mean cross-entropy and its gradient over the given example indices. The
// gradient is written to `grad` in the flat layout W1, b1, W2, b2.
double loss_and_grad(const MlpView& m, const ToyModelSpec& spec, const DevSet& data,
                     std::span<const std::size_t> indices, std::vector<double>* grad) {
    const std::size_t d = spec.input_dim, h = spec.hidden_dim, c = spec.num_classes;
    std::vector<double> hidden(h), logits(c), dlogits(c), dz(h);
    double* gw1 = nullptr;
    double* gb1 = nullptr;
    double* gw2 = nullptr;
    double* gb2 = nullptr;
    if (grad) {
        grad->assign(spec.num_params(), 0.0);
        gw1 = grad->data();
        gb1 = gw1 + h * d;
        gw2 = gb1 + h;
        gb2 = gw2 + c * h;
    }
    double total = 0.0;
    for (std::size_t idx : indices) {
        const auto x = data.row(idx);
        const std::uint32_t y = data.labels[idx];
        total += forward_example(m, spec, x, y, hidden, logits);
        if (!grad) continue;

        const double max_logit = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            dlogits[k] = std::exp(logits[k] - max_logit);
            sum += dlogits[k];
        }
        for (std::size_t k = 0; k < c; ++k) dlogits[k] /= sum;
        dlogits[y] -= 1.0;

        std::fill(dz.begin(), dz.end(), 0.0);
        for (std::size_t k = 0; k < c; ++k) {
            gb2[k] += dlogits[k];
            double* grow = gw2 + k * h;
            const double* wrow = m.w2 + k * h;
            for (std::size_t j = 0; j < h; ++j) {
                grow[j] += dlogits[k] * hidden[j];
                dz[j] += wrow[j] * dlogits[k];
            }
        }
        for (std::size_t j = 0; j < h; ++j) {
            dz[j] *= 1.0 - hidden[j] * hidden[j];
            gb1[j] += dz[j];
            double* grow = gw1 + j * d;
            for (std::size_t i = 0; i < d; ++i) grow[i] += dz[j] * x[i];
        }
    }
    const double inv_n = 1.0 / static_cast<double>(indices.size());
    if (grad) {
        for (double& g : *grad) g *= inv_n;
    }
    return total * inv_n;
}

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

void check_data(const DevSet& data, const ToyModelSpec& spec) {
    data.validate(spec);
    if (data.size() == 0) throw ValidationError("dataset is empty");
}

// Splits a flat W1, b1, W2, b2 vector into named tensors.
WideTensorMap unflatten(const std::vector<double>& flat, const ToyModelSpec& spec) {
    WideTensorMap out;
    std::size_t offset = 0;
    for (const char* name : {"W1", "b1", "W2", "b2"}) {
        Shape shape = spec.param_shapes().at(name);
        const std::size_t n = shape_numel(shape);
        out.emplace(name, WideTensor{std::move(shape), std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                                                                            flat.begin() + static_cast<std::ptrdiff_t>(offset + n))});
        offset += n;
    }
    return out;
}

std::vector<double> flatten(const WideTensorMap& params, const ToyModelSpec& spec) {
    view_of(params, spec);
    std::vector<double> flat;
    flat.reserve(spec.num_params());
    for (const char* name : {"W1", "b1", "W2", "b2"}) {
        const auto& d = params.find(name)->second.data;
        flat.insert(flat.end(), d.begin(), d.end());
    }
    return flat;
}

LossResult make_result(double loss) { return {loss, std::exp(loss)}; }

}  // namespace

void ToyModelSpec::validate() const {
    if (input_dim == 0 || hidden_dim == 0) throw ValidationError("input_dim and hidden_dim must be >= 1");
    if (num_classes < 2) throw ValidationError("num_classes must be >= 2");
}

std::map<std::string, Shape, std::less<>> ToyModelSpec::param_shapes() const {
    return {{"W1", {hidden_dim, input_dim}},
            {"b1", {hidden_dim}},
            {"W2", {num_classes, hidden_dim}},
            {"b2", {num_classes}}};
}

std::size_t ToyModelSpec::num_params() const {
    return hidden_dim * input_dim + hidden_dim + num_classes * hidden_dim + num_classes;
}

void DevSet::validate(const ToyModelSpec& spec) const {
    if (input_dim != spec.input_dim) {
        throw ValidationError("dataset input_dim " + std::to_string(input_dim) + " != model input_dim " +
                              std::to_string(spec.input_dim));
    }
    if (inputs.size() != labels.size() * input_dim) throw ValidationError("dataset inputs/labels length mismatch");
    for (std::uint32_t y : labels) {
        if (y >= spec.num_classes) throw ValidationError("label " + std::to_string(y) + " out of range");
    }
}

void AdamConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("adam lr must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        throw ValidationError("adam betas must lie in (0, 1)");
    }
    if (!(eps > 0.0)) throw ValidationError("adam eps must be positive");
    if (batch_size == 0 || steps == 0 || checkpoint_every == 0) {
        throw ValidationError("batch_size, steps and checkpoint_every must be >= 1");
    }
}

void QuadraticTaskSpec::validate() const {
    if (dim == 0) throw ValidationError("quadratic dim must be >= 1");
    if (center.size() != dim) throw ValidationError("quadratic center length must equal dim");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ValidationError("noise_sigma must be >= 0");
    if (num_checkpoints == 0) throw ValidationError("num_checkpoints must be >= 1");
}

MlpObjective::MlpObjective(ToyModelSpec spec, DevSet data) : spec_(spec), data_(std::move(data)) {
    spec_.validate();
    check_data(data_, spec_);
}

LossResult MlpObjective::evaluate(const WideTensorMap& params) const { return forward_loss(params, data_, spec_); }

WideTensorMap MlpObjective::gradient(const WideTensorMap& params) const { return grad_params(params, data_, spec_); }

QuadraticObjective::QuadraticObjective(std::vector<double> center) : center_(std::move(center)) {
    if (center_.empty()) throw ValidationError("quadratic center is empty");
    for (double& c : center_) c = static_cast<float>(c);
}

LossResult QuadraticObjective::evaluate(const WideTensorMap& params) const {
    const auto& theta = find_tensor(params, "theta", {center_.size()}).data;
    double sq = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double d = theta[i] - center_[i];
        sq += d * d;
    }
    return make_result(sq / static_cast<double>(center_.size()));
}

WideTensorMap QuadraticObjective::gradient(const WideTensorMap& params) const {
    const auto& theta = find_tensor(params, "theta", {center_.size()}).data;
    WideTensor g{{center_.size()}, std::vector<double>(center_.size())};
    const double scale = 2.0 / static_cast<double>(center_.size());
    for (std::size_t i = 0; i < theta.size(); ++i) g.data[i] = scale * (theta[i] - center_[i]);
    return {{"theta", std::move(g)}};
}

TensorMap init_params(const ToyModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    TensorMap out;
    auto glorot = [&](std::size_t fan_out, std::size_t fan_in) {
        Tensor t = Tensor::zeros({fan_out, fan_in});
        const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (float& v : t.data) v = static_cast<float>(rng.uniform(-a, a));
        return t;
    };
    out.emplace("W1", glorot(spec.hidden_dim, spec.input_dim));
    out.emplace("b1", Tensor::zeros({spec.hidden_dim}));
    out.emplace("W2", glorot(spec.num_classes, spec.hidden_dim));
    out.emplace("b2", Tensor::zeros({spec.num_classes}));
    return out;
}

LossResult forward_loss(const WideTensorMap& params, const DevSet& data, const ToyModelSpec& spec) {
    const MlpView m = view_of(params, spec);
    check_data(data, spec);
    return make_result(loss_and_grad(m, spec, data, all_indices(data.size()), nullptr));
}

LossResult forward_loss(const TensorMap& params, const DevSet& data, const ToyModelSpec& spec) {
    return forward_loss(widen(params), data, spec);
}

WideTensorMap grad_params(const WideTensorMap& params, const DevSet& batch, const ToyModelSpec& spec) {
    const MlpView m = view_of(params, spec);
    check_data(batch, spec);
    std::vector<double> grad;
    loss_and_grad(m, spec, batch, all_indices(batch.size()), &grad);
    return unflatten(grad, spec);
}

TensorMap grad_params(const TensorMap& params, const DevSet& batch, const ToyModelSpec& spec) {
    return narrow(grad_params(widen(params), batch, spec));
}

double accuracy(const TensorMap& params, const DevSet& data, const ToyModelSpec& spec) {
    const WideTensorMap wide = widen(params);
    const MlpView m = view_of(wide, spec);
    check_data(data, spec);
    std::vector<double> hidden(spec.hidden_dim), logits(spec.num_classes);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        forward_example(m, spec, data.row(i), data.labels[i], hidden, logits);
        const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
        if (static_cast<std::uint32_t>(best) == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

DevSet make_synthetic_data(const ToyModelSpec& spec, std::size_t n, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    const std::size_t d = spec.input_dim, c = spec.num_classes;
    std::vector<double> truth(c * d);
    for (double& v : truth) v = rng.normal();

    DevSet out;
    out.input_dim = d;
    out.inputs.resize(n * d);
    out.labels.resize(n);
    std::vector<double> scores(c);
    for (std::size_t e = 0; e < n; ++e) {
        double* x = out.inputs.data() + e * d;
        for (std::size_t i = 0; i < d; ++i) x[i] = static_cast<float>(rng.normal());
        for (std::size_t k = 0; k < c; ++k) {
            scores[k] = 0.0;
            for (std::size_t i = 0; i < d; ++i) scores[k] += truth[k * d + i] * x[i];
        }
        auto label = static_cast<std::uint32_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
        if (rng.uniform01() < kLabelNoise) label = static_cast<std::uint32_t>(rng.below(c));
        out.labels[e] = label;
    }
    return out;
}

std::pair<DevSet, DevSet> split(const DevSet& data, std::size_t n_first) {
    if (n_first > data.size()) throw ValidationError("split point beyond dataset size");
    const auto cut = static_cast<std::ptrdiff_t>(n_first);
    const auto cut_inputs = static_cast<std::ptrdiff_t>(n_first * data.input_dim);
    DevSet a{data.input_dim, {data.inputs.begin(), data.inputs.begin() + cut_inputs},
             {data.labels.begin(), data.labels.begin() + cut}};
    DevSet b{data.input_dim, {data.inputs.begin() + cut_inputs, data.inputs.end()},
             {data.labels.begin() + cut, data.labels.end()}};
    return {std::move(a), std::move(b)};
}

std::string checkpoint_filename(std::uint64_t step) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "ckpt_%08llu.ckav", static_cast<unsigned long long>(step));
    return buf;
}

std::vector<CheckpointMeta> train_with_checkpoints(const ToyModelSpec& spec, const DevSet& train, const DevSet& dev,
                                                   const AdamConfig& cfg, const std::filesystem::path& out_dir) {
    spec.validate();
    cfg.validate();
    check_data(train, spec);
    check_data(dev, spec);
    if (!std::filesystem::is_directory(out_dir)) {
        throw IoError("output directory '" + out_dir.string() + "' does not exist");
    }

    std::vector<double> theta = flatten(widen(init_params(spec, cfg.seed)), spec);
    std::vector<double> m1(theta.size(), 0.0), m2(theta.size(), 0.0), grad;

    Rng shuffle_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
    std::vector<std::size_t> order = all_indices(train.size());
    auto reshuffle = [&] {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    };
    reshuffle();
    const std::size_t batch = std::min(cfg.batch_size, train.size());
    std::size_t cursor = 0;

    std::vector<CheckpointMeta> metas;
    double beta1_pow = 1.0, beta2_pow = 1.0;
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        if (cursor + batch > order.size()) {
            reshuffle();
            cursor = 0;
        }
        const std::span<const std::size_t> idx(order.data() + cursor, batch);
        cursor += batch;

        const WideTensorMap current = unflatten(theta, spec);
        loss_and_grad(view_of(current, spec), spec, train, idx, &grad);

        beta1_pow *= cfg.beta1;
        beta2_pow *= cfg.beta2;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * grad[i];
            m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            const double m_hat = m1[i] / (1.0 - beta1_pow);
            const double v_hat = m2[i] / (1.0 - beta2_pow);
            theta[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }

        if (step % cfg.checkpoint_every == 0) {
            Checkpoint ckpt;
            ckpt.params = narrow(unflatten(theta, spec));
            ckpt.grads = narrow(unflatten(grad, spec));
            ckpt.meta.step = step;
            ckpt.meta.dev_ppl = forward_loss(ckpt.params, dev, spec).ppl;
            ckpt.meta.tag = "toy-mlp";
            write_checkpoint(out_dir / checkpoint_filename(step), ckpt);
            metas.push_back(ckpt.meta);
        }
    }
    return metas;
}

std::vector<Checkpoint> make_quadratic_checkpoints(const QuadraticTaskSpec& spec) {
    spec.validate();
    const QuadraticObjective objective(spec.center);
    Rng rng(spec.seed);
    std::vector<Checkpoint> out;
    out.reserve(spec.num_checkpoints);
    for (std::size_t k = 0; k < spec.num_checkpoints; ++k) {
        Tensor theta = Tensor::zeros({spec.dim});
        for (std::size_t i = 0; i < spec.dim; ++i) {
            theta.data[i] = static_cast<float>(objective.center()[i] + spec.noise_sigma * rng.normal());
        }
        Checkpoint c;
        c.params.emplace("theta", std::move(theta));
        const WideTensorMap wide = widen(c.params);
        c.grads = narrow(objective.gradient(wide));
        c.meta.step = k;
        c.meta.dev_ppl = objective.evaluate(wide).ppl;
        c.meta.tag = "quadratic";
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<CheckpointMeta> sample_quadratic_checkpoints(const QuadraticTaskSpec& spec,
                                                         const std::filesystem::path& out_dir) {
    if (!std::filesystem::is_directory(out_dir)) {
        throw IoError("output directory '" + out_dir.string() + "' does not exist");
    }
    std::vector<CheckpointMeta> metas;
    for (const Checkpoint& c : make_quadratic_checkpoints(spec)) {
        write_checkpoint(out_dir / checkpoint_filename(c.meta.step), c);
        metas.push_back(c.meta);
    }
    return metas;
}

Checkpoint dataset_to_checkpoint(const DevSet& data) {
    if (data.input_dim == 0 || data.inputs.size() != data.labels.size() * data.input_dim || data.labels.empty()) {
        throw ValidationError("dataset is empty or inconsistent");
    }
    Checkpoint c;
    Tensor inputs = Tensor::zeros({data.size(), data.input_dim});
    std::transform(data.inputs.begin(), data.inputs.end(), inputs.data.begin(),
                   [](double v) { return static_cast<float>(v); });
    Tensor labels = Tensor::zeros({data.size()});
    std::transform(data.labels.begin(), data.labels.end(), labels.data.begin(),
                   [](std::uint32_t v) { return static_cast<float>(v); });
    c.params.emplace("inputs", std::move(inputs));
    c.params.emplace("labels", std::move(labels));
    c.meta.tag = "dataset";
    return c;
}

DevSet dataset_from_checkpoint(const Checkpoint& ckpt) {
    auto in = ckpt.params.find("inputs");
    auto lab = ckpt.params.find("labels");
    if (in == ckpt.params.end() || lab == ckpt.params.end() || ckpt.params.size() != 2) {
        throw ValidationError("dataset must contain exactly the tensors 'inputs' and 'labels'");
    }
    if (in->second.shape.size() != 2 || lab->second.shape.size() != 1 || in->second.shape[0] != lab->second.shape[0]) {
        throw ValidationError("dataset shapes must be inputs [n, d] and labels [n]");
    }
    DevSet out;
    out.input_dim = in->second.shape[1];
    out.inputs.assign(in->second.data.begin(), in->second.data.end());
    out.labels.reserve(lab->second.numel());
    for (float v : lab->second.data) {
        if (v < 0.0f || v != std::floor(v) || v > 16777216.0f) {
            throw ValidationError("dataset labels must be non-negative integers");
        }
        out.labels.push_back(static_cast<std::uint32_t>(v));
    }
    return out;
}

void write_dataset(const std::filesystem::path& path, const DevSet& data) {
    write_checkpoint(path, dataset_to_checkpoint(data));
}

DevSet read_dataset(const std::filesystem::path& path) { return dataset_from_checkpoint(read_checkpoint(path)); }

}  // namespace ckav
