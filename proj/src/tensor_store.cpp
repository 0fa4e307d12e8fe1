#include "ckav/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "ckav/error.hpp"

namespace ckav {

namespace {

using json = nlohmann::json;

constexpr std::size_t kPreambleSize = 16;
constexpr const char* kKindParam = "param";
constexpr const char* kKindGrad = "grad";

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
}

template <typename T>
T get_le(const std::uint8_t* p) {
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        value |= static_cast<T>(p[i]) << (8 * i);
    }
    return value;
}

struct Entry {
    std::string kind;
    std::string name;
    const Tensor* tensor;
};

std::vector<Entry> ordered_entries(const Checkpoint& ckpt) {
    std::vector<Entry> entries;
    for (const auto& [name, t] : ckpt.params) entries.push_back({kKindParam, name, &t});
    if (ckpt.grads) {
        for (const auto& [name, t] : *ckpt.grads) entries.push_back({kKindGrad, name, &t});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        return std::tie(a.kind, a.name) < std::tie(b.kind, b.name);
    });
    return entries;
}

void check_tensor(const std::string& name, const Tensor& t) {
    for (std::size_t d : t.shape) {
        if (d == 0) throw ValidationError("tensor '" + name + "' has a zero dimension");
    }
    if (shape_numel(t.shape) != t.data.size()) {
        throw ValidationError("tensor '" + name + "': shape " + shape_to_string(t.shape) +
                              " does not match data length " + std::to_string(t.data.size()));
    }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor Tensor::zeros(Shape shape) {
    Tensor t;
    t.data.assign(shape_numel(shape), 0.0f);
    t.shape = std::move(shape);
    return t;
}

bool operator==(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape || a.data.size() != b.data.size()) return false;
    return a.data.empty() ||
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

bool operator==(const CheckpointMeta& a, const CheckpointMeta& b) {
    if (a.step != b.step || a.tag != b.tag) return false;
    if (a.dev_ppl.has_value() != b.dev_ppl.has_value()) return false;
    return !a.dev_ppl || std::bit_cast<std::uint64_t>(*a.dev_ppl) ==
                             std::bit_cast<std::uint64_t>(*b.dev_ppl);
}

WideTensorMap widen(const TensorMap& tensors) {
    WideTensorMap out;
    for (const auto& [name, t] : tensors) {
        out.emplace(name, WideTensor{t.shape, std::vector<double>(t.data.begin(), t.data.end())});
    }
    return out;
}

TensorMap narrow(const WideTensorMap& tensors) {
    TensorMap out;
    for (const auto& [name, t] : tensors) {
        Tensor n;
        n.shape = t.shape;
        n.data.resize(t.data.size());
        std::transform(t.data.begin(), t.data.end(), n.data.begin(),
                       [](double v) { return static_cast<float>(v); });
        out.emplace(name, std::move(n));
    }
    return out;
}

CheckpointRefs refs(std::span<const Checkpoint> ckpts) {
    CheckpointRefs out;
    out.reserve(ckpts.size());
    for (const auto& c : ckpts) out.push_back(&c);
    return out;
}

void validate_checkpoint(const Checkpoint& ckpt) {
    for (const auto& [name, t] : ckpt.params) check_tensor(name, t);
    if (ckpt.grads) {
        if (ckpt.grads->size() != ckpt.params.size()) {
            throw ValidationError("gradient/param mismatch: different tensor counts");
        }
        for (const auto& [name, g] : *ckpt.grads) {
            auto it = ckpt.params.find(name);
            if (it == ckpt.params.end()) {
                throw ValidationError("gradient/param mismatch: no param named '" + name + "'");
            }
            check_tensor(name, g);
            if (g.shape != it->second.shape) {
                throw ValidationError("gradient/param mismatch: shape of '" + name + "'");
            }
        }
    }
    if (ckpt.meta.dev_ppl) {
        const double p = *ckpt.meta.dev_ppl;
        if (!std::isfinite(p) || !(p > 1e-9)) {
            throw ValidationError("dev_ppl must be finite and > 1e-9");
        }
    }
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    validate_checkpoint(ckpt);

    const auto entries = ordered_entries(ckpt);
    json tensors = json::array();
    std::uint64_t offset = 0;
    for (const auto& e : entries) {
        const std::uint64_t nbytes = e.tensor->data.size() * sizeof(float);
        tensors.push_back({{"name", e.name},
                           {"kind", e.kind},
                           {"shape", e.tensor->shape},
                           {"offset", offset},
                           {"nbytes", nbytes}});
        offset += nbytes;
    }
    json meta = {{"step", ckpt.meta.step},
                 {"dev_ppl", ckpt.meta.dev_ppl ? json(*ckpt.meta.dev_ppl) : json(nullptr)},
                 {"tag", ckpt.meta.tag}};
    const std::string header = json{{"meta", meta}, {"tensors", tensors}}.dump();

    std::vector<std::uint8_t> out;
    out.reserve(kPreambleSize + header.size() + offset);
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put_le<std::uint32_t>(out, kFormatVersion);
    put_le<std::uint64_t>(out, header.size());
    out.insert(out.end(), header.begin(), header.end());
    for (const auto& e : entries) {
        for (float v : e.tensor->data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, ReadOptions options) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw ValidationError("bad magic");
    }
    if (bytes.size() < kPreambleSize) throw ValidationError("truncated: incomplete preamble");
    const auto version = get_le<std::uint32_t>(bytes.data() + 4);
    if (version != kFormatVersion) {
        throw ValidationError("version unsupported: " + std::to_string(version));
    }
    const auto header_len = get_le<std::uint64_t>(bytes.data() + 8);
    if (header_len > bytes.size() - kPreambleSize) throw ValidationError("truncated: header");

    const auto* header_begin = reinterpret_cast<const char*>(bytes.data() + kPreambleSize);
    json header;
    try {
        header = json::parse(header_begin, header_begin + header_len);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed header: ") + e.what());
    }

    const std::span<const std::uint8_t> payload = bytes.subspan(kPreambleSize + header_len);

    Checkpoint ckpt;
    try {
        const json& meta = header.at("meta");
        ckpt.meta.step = meta.at("step").get<std::uint64_t>();
        if (!meta.at("dev_ppl").is_null()) ckpt.meta.dev_ppl = meta.at("dev_ppl").get<double>();
        ckpt.meta.tag = meta.at("tag").get<std::string>();

        std::uint64_t expected_offset = 0;
        std::string prev_kind, prev_name;
        bool first = true;
        for (const json& t : header.at("tensors")) {
            auto name = t.at("name").get<std::string>();
            auto kind = t.at("kind").get<std::string>();
            Tensor tensor;
            std::uint64_t numel = 1;
            for (const json& d : t.at("shape")) {
                if (!d.is_number_unsigned() || d.get<std::uint64_t>() == 0 ||
                    d.get<std::uint64_t>() > payload.size()) {
                    throw ValidationError("tensor '" + name + "': invalid shape");
                }
                tensor.shape.push_back(d.get<std::size_t>());
                numel *= d.get<std::uint64_t>();
                if (numel > payload.size()) throw ValidationError("truncated: payload shorter than declared for '" + name + "'");
            }
            const auto offset = t.at("offset").get<std::uint64_t>();
            const auto nbytes = t.at("nbytes").get<std::uint64_t>();

            if (kind != kKindParam && kind != kKindGrad) {
                throw ValidationError("unsupported tensor kind '" + kind + "'");
            }
            if (!first && std::tie(kind, name) <= std::tie(prev_kind, prev_name)) {
                throw ValidationError("tensor entries not sorted by (kind, name)");
            }
            if (offset != expected_offset) {
                throw ValidationError("tensor '" + name + "': non-contiguous offset");
            }
            if (nbytes != shape_numel(tensor.shape) * sizeof(float)) {
                throw ValidationError("tensor '" + name + "': nbytes does not match shape");
            }
            if (offset + nbytes > payload.size()) {
                throw ValidationError("truncated: payload shorter than declared for '" + name + "'");
            }
            tensor.data.resize(nbytes / sizeof(float));
            const std::uint8_t* src = payload.data() + offset;
            for (std::size_t i = 0; i < tensor.data.size(); ++i) {
                const float v = std::bit_cast<float>(get_le<std::uint32_t>(src + 4 * i));
                if (!options.allow_nonfinite && !std::isfinite(v)) {
                    throw ValidationError("non-finite value in tensor '" + name + "'");
                }
                tensor.data[i] = v;
            }
            expected_offset += nbytes;

            auto& target = kind == kKindParam ? ckpt.params
                                              : (ckpt.grads ? *ckpt.grads : ckpt.grads.emplace());
            target.emplace(name, std::move(tensor));
            prev_kind = std::move(kind);
            prev_name = std::move(name);
            first = false;
        }
        if (expected_offset != payload.size()) {
            throw ValidationError("payload has " + std::to_string(payload.size() - expected_offset) +
                                  " trailing bytes");
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed header: ") + e.what());
    }
    validate_checkpoint(ckpt);
    return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path, ReadOptions options) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
    try {
        return decode_checkpoint(bytes, options);
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void validate_compat(std::span<const Checkpoint* const> ckpts) {
    if (ckpts.empty()) throw ValidationError("incompatible: empty checkpoint list");
    const TensorMap& ref = ckpts.front()->params;
    for (std::size_t i = 0; i < ckpts.size(); ++i) {
        const Checkpoint& c = *ckpts[i];
        validate_checkpoint(c);
        for (const auto& [name, t] : ref) {
            auto it = c.params.find(name);
            if (it == c.params.end()) {
                throw ValidationError("incompatible: " + name + " missing in checkpoint " + std::to_string(i));
            }
            if (it->second.shape != t.shape) {
                throw ValidationError("shape mismatch at " + name + " in checkpoint " + std::to_string(i));
            }
        }
        for (const auto& [name, t] : c.params) {
            if (!ref.contains(name)) {
                throw ValidationError("incompatible: " + name + " missing in checkpoint 0");
            }
        }
    }
}

}  // namespace ckav
