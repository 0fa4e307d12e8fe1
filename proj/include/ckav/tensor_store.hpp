#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ckav {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense float32 tensor, row-major.
struct Tensor {
    Shape shape;
    std::vector<float> data;

    static Tensor zeros(Shape shape);
    std::size_t numel() const { return data.size(); }

    // Bitwise equality of the payload (distinguishes -0.0 from 0.0, NaN payloads).
    friend bool operator==(const Tensor& a, const Tensor& b);
};

// std::map keeps names unique and iterates in lexicographic order.
using TensorMap = std::map<std::string, Tensor, std::less<>>;

// 64-bit working copy of a tensor, used for accumulation and evaluation.
struct WideTensor {
    Shape shape;
    std::vector<double> data;
};
using WideTensorMap = std::map<std::string, WideTensor, std::less<>>;

WideTensorMap widen(const TensorMap& tensors);
// Rounds every element to float32 once.
TensorMap narrow(const WideTensorMap& tensors);

struct CheckpointMeta {
    std::uint64_t step = 0;
    std::optional<double> dev_ppl;
    std::string tag;

    friend bool operator==(const CheckpointMeta& a, const CheckpointMeta& b);
};

struct Checkpoint {
    TensorMap params;
    std::optional<TensorMap> grads;
    CheckpointMeta meta;

    bool has_grads() const { return grads.has_value(); }
    friend bool operator==(const Checkpoint& a, const Checkpoint& b) = default;
};

// Non-owning list of checkpoints, the input type of the averaging operations.
using CheckpointRefs = std::vector<const Checkpoint*>;
CheckpointRefs refs(std::span<const Checkpoint> ckpts);

struct ReadOptions {
    bool allow_nonfinite = false;
};

inline constexpr char kMagic[4] = {'C', 'K', 'A', 'V'};
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr const char* kFileExtension = ".ckav";

// Throws ValidationError on shape/length mismatch, grads/params mismatch or bad dev_ppl.
void validate_checkpoint(const Checkpoint& ckpt);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, ReadOptions options = {});

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path, ReadOptions options = {});

// Succeeds iff all checkpoints share tensor names and shapes. Gradient
// presence may differ; gradients that are present must match the params.
void validate_compat(std::span<const Checkpoint* const> ckpts);

}  // namespace ckav
