#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "kbdm/tensor.hpp"

namespace kbdm {

// Tensor checkpoint file:
//   magic "KBDM", version u16, tensor count u32,
//   per tensor: name length u16 + UTF-8 name, rank u8,
//               extents u64 little-endian, data f64 little-endian.
namespace detail {

constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
void write_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i)
        buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

inline void write_f64_le(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    write_le<std::uint64_t>(os, bits);
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return static_cast<T>(v);
}

inline double read_f64_le(std::istream& is) {
    std::uint64_t bits = read_le<std::uint64_t>(is);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

}  // namespace detail

/// Ordered collection of named tensors with binary save/load.
struct Checkpoint {
    std::vector<std::pair<std::string, Tensor>> tensors;

    void add(const std::string& name, Tensor t) {
        for (auto& [n, _] : tensors) {
            if (n == name) throw ConfigError("checkpoint: duplicate tensor name " + name);
        }
        tensors.emplace_back(name, std::move(t));
    }

    void add_scalar(const std::string& name, double v) { add(name, Tensor({1}, {v})); }

    const Tensor* find(const std::string& name) const {
        for (auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }

    const Tensor& require(const std::string& name) const {
        const Tensor* t = find(name);
        if (!t) throw DataError("checkpoint: missing tensor " + name);
        return *t;
    }

    double scalar(const std::string& name) const { return require(name).data.at(0); }

    bool has(const std::string& name) const { return find(name) != nullptr; }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw DataError("cannot open checkpoint for writing: " + path);
        os.write("KBDM", 4);
        detail::write_le<std::uint16_t>(os, detail::kCheckpointVersion);
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
        for (const auto& [name, t] : tensors) {
            check_finite(t, "checkpoint tensor " + name);
            detail::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
            for (std::size_t e : t.shape) detail::write_le<std::uint64_t>(os, e);
            for (double v : t.data) detail::write_f64_le(os, v);
        }
        if (!os) throw DataError("failed writing checkpoint: " + path);
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw DataError("cannot open checkpoint: " + path);
        char magic[4];
        is.read(magic, 4);
        if (!is || std::memcmp(magic, "KBDM", 4) != 0) {
            throw DataError("bad checkpoint magic in " + path);
        }
        const auto version = detail::read_le<std::uint16_t>(is);
        if (version != detail::kCheckpointVersion) {
            throw DataError("unsupported checkpoint version " + std::to_string(version) +
                            " in " + path);
        }
        const auto count = detail::read_le<std::uint32_t>(is);
        Checkpoint ckpt;
        for (std::uint32_t i = 0; i < count; ++i) {
            const auto name_len = detail::read_le<std::uint16_t>(is);
            std::string name(name_len, '\0');
            is.read(name.data(), name_len);
            const auto rank = detail::read_le<std::uint8_t>(is);
            Shape shape(rank);
            for (auto& e : shape) e = detail::read_le<std::uint64_t>(is);
            Tensor t(shape);
            for (double& v : t.data) v = detail::read_f64_le(is);
            if (!is) throw DataError("truncated checkpoint: " + path);
            ckpt.tensors.emplace_back(std::move(name), std::move(t));
        }
        return ckpt;
    }
};

// Round-trips any model exposing parameters() -> std::vector<Parameter*>.
template <typename Model>
void save_params(Model& model, Checkpoint& ckpt) {
    for (Parameter* p : model.parameters()) ckpt.add(p->name, p->value);
}

template <typename Model>
void load_params(Model& model, const Checkpoint& ckpt) {
    for (Parameter* p : model.parameters()) {
        const Tensor& t = ckpt.require(p->name);
        if (t.shape != p->value.shape) {
            throw DataError("checkpoint tensor " + p->name + " has shape " + shape_str(t.shape) +
                            ", expected " + shape_str(p->value.shape));
        }
        p->value = t;
        p->zero_grad();
    }
}

}  // namespace kbdm
