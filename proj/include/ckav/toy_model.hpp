#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "ckav/tensor_store.hpp"

namespace ckav {

// Two-layer tanh MLP classifier:
//   logits = W2 tanh(W1 x + b1) + b2
// with tensors W1 [hidden x input], b1 [hidden], W2 [classes x hidden], b2 [classes].
struct ToyModelSpec {
    std::size_t input_dim = 8;
    std::size_t hidden_dim = 16;
    std::size_t num_classes = 4;

    void validate() const;
    // Name -> shape of every parameter tensor.
    std::map<std::string, Shape, std::less<>> param_shapes() const;
    std::size_t num_params() const;
};

// Labelled examples. Inputs are row-major [size() x input_dim].
struct DevSet {
    std::size_t input_dim = 0;
    std::vector<double> inputs;
    std::vector<std::uint32_t> labels;

    std::size_t size() const { return labels.size(); }
    std::span<const double> row(std::size_t i) const { return {inputs.data() + i * input_dim, input_dim}; }
    void validate(const ToyModelSpec& spec) const;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t batch_size = 32;
    std::size_t steps = 8000;
    std::size_t checkpoint_every = 200;
    std::uint64_t seed = 0;

    void validate() const;
};

struct QuadraticTaskSpec {
    std::size_t dim = 64;
    // Rounded to float32 on use so that a checkpoint can hold it exactly.
    std::vector<double> center;
    double noise_sigma = 0.5;
    std::size_t num_checkpoints = 16;
    std::uint64_t seed = 0;

    void validate() const;
};

struct LossResult {
    double loss = 0.0;
    double ppl = 1.0;
};

// A scalar dev objective over parameter maps, with its analytic gradient.
class Objective {
public:
    virtual ~Objective() = default;
    virtual LossResult evaluate(const WideTensorMap& params) const = 0;
    virtual WideTensorMap gradient(const WideTensorMap& params) const = 0;

    LossResult evaluate(const TensorMap& params) const { return evaluate(widen(params)); }
};

// Mean cross-entropy of the MLP on a dataset; ppl = exp(loss).
class MlpObjective final : public Objective {
public:
    MlpObjective(ToyModelSpec spec, DevSet data);
    LossResult evaluate(const WideTensorMap& params) const override;
    WideTensorMap gradient(const WideTensorMap& params) const override;
    using Objective::evaluate;

    const ToyModelSpec& spec() const { return spec_; }
    const DevSet& data() const { return data_; }

private:
    ToyModelSpec spec_;
    DevSet data_;
};

// L(theta) = ||theta - center||^2 / dim over the single tensor "theta"; ppl = exp(L).
class QuadraticObjective final : public Objective {
public:
    explicit QuadraticObjective(std::vector<double> center);
    LossResult evaluate(const WideTensorMap& params) const override;
    WideTensorMap gradient(const WideTensorMap& params) const override;
    using Objective::evaluate;

    const std::vector<double>& center() const { return center_; }

private:
    std::vector<double> center_;
};

// Glorot-uniform weights, zero biases; deterministic in seed.
TensorMap init_params(const ToyModelSpec& spec, std::uint64_t seed);

LossResult forward_loss(const WideTensorMap& params, const DevSet& data, const ToyModelSpec& spec);
LossResult forward_loss(const TensorMap& params, const DevSet& data, const ToyModelSpec& spec);
WideTensorMap grad_params(const WideTensorMap& params, const DevSet& batch, const ToyModelSpec& spec);
TensorMap grad_params(const TensorMap& params, const DevSet& batch, const ToyModelSpec& spec);

// Fraction of examples whose argmax logit equals the label.
double accuracy(const TensorMap& params, const DevSet& data, const ToyModelSpec& spec);

// Inputs ~ N(0, 1) (rounded to float32), labels = argmax of a hidden linear
// map, 5% of labels replaced uniformly at random.
DevSet make_synthetic_data(const ToyModelSpec& spec, std::size_t n, std::uint64_t seed);

// First `n_first` examples and the rest.
std::pair<DevSet, DevSet> split(const DevSet& data, std::size_t n_first);

// Checkpoint file name for a training step, e.g. "ckpt_00000200.ckav".
std::string checkpoint_filename(std::uint64_t step);

// Adam on minibatches; every checkpoint_every steps writes params, the last
// batch gradient and the dev perplexity of the stored (float32) params.
std::vector<CheckpointMeta> train_with_checkpoints(const ToyModelSpec& spec, const DevSet& train, const DevSet& dev,
                                                   const AdamConfig& cfg, const std::filesystem::path& out_dir);

std::vector<Checkpoint> make_quadratic_checkpoints(const QuadraticTaskSpec& spec);
std::vector<CheckpointMeta> sample_quadratic_checkpoints(const QuadraticTaskSpec& spec,
                                                         const std::filesystem::path& out_dir);

// Dataset container: tensors "inputs" [n, d] and "labels" [n] (integral float32).
Checkpoint dataset_to_checkpoint(const DevSet& data);
DevSet dataset_from_checkpoint(const Checkpoint& ckpt);
void write_dataset(const std::filesystem::path& path, const DevSet& data);
DevSet read_dataset(const std::filesystem::path& path);

}  // namespace ckav
