#pragma once

// Named parameter tensors with gradients, and the MRFW checkpoint format.

#include <mrf/ad/tensor.hpp>
#include <mrf/binary_io.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace mrf::ad {

template <class T>
class ParameterSet {
public:
    std::size_t add(const std::string& name, Shape shape) {
        if (contains(name)) throw InvalidStateError("duplicate parameter name: " + name);
        names_.push_back(name);
        values_.emplace_back(shape);
        grads_.emplace_back(std::move(shape));
        return names_.size() - 1;
    }

    std::size_t size() const noexcept { return names_.size(); }
    const std::string& name(std::size_t i) const { return names_.at(i); }
    Tensor<T>& value(std::size_t i) { return values_.at(i); }
    const Tensor<T>& value(std::size_t i) const { return values_.at(i); }
    Tensor<T>& grad(std::size_t i) { return grads_.at(i); }
    const Tensor<T>& grad(std::size_t i) const { return grads_.at(i); }

    bool contains(const std::string& name) const {
        return std::find(names_.begin(), names_.end(), name) != names_.end();
    }

    std::size_t index(const std::string& name) const {
        const auto it = std::find(names_.begin(), names_.end(), name);
        if (it == names_.end()) throw InvalidStateError("no parameter named " + name);
        return static_cast<std::size_t>(it - names_.begin());
    }

    Tensor<T>& value(const std::string& name) { return values_[index(name)]; }
    const Tensor<T>& value(const std::string& name) const { return values_[index(name)]; }
    Tensor<T>& grad(const std::string& name) { return grads_[index(name)]; }
    const Tensor<T>& grad(const std::string& name) const { return grads_[index(name)]; }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& v : values_) n += v.size();
        return n;
    }

    void zero_grad() {
        for (auto& g : grads_) std::fill(g.data.begin(), g.data.end(), T(0));
    }

    template <class U>
    ParameterSet<U> cast() const {
        ParameterSet<U> out;
        for (std::size_t i = 0; i < size(); ++i) {
            out.add(names_[i], values_[i].shape);
            out.value(i) = values_[i].template cast<U>();
        }
        return out;
    }

    /// Copies values from `other`; names and shapes must agree.
    template <class U>
    void assign_from(const ParameterSet<U>& other) {
        if (other.size() != size()) throw ShapeError("parameter sets differ in tensor count");
        for (std::size_t i = 0; i < size(); ++i) {
            if (other.name(i) != names_[i] || other.value(i).shape != values_[i].shape) {
                throw ShapeError("parameter mismatch at " + names_[i] + ": got " + other.name(i) + " " +
                                 shape_str(other.value(i).shape) + ", expected " + shape_str(values_[i].shape));
            }
            values_[i].data.assign(other.value(i).data.begin(), other.value(i).data.end());
        }
    }

    bool same_values(const ParameterSet& other) const {
        if (other.names_ != names_) return false;
        for (std::size_t i = 0; i < size(); ++i)
            if (!(other.values_[i] == values_[i])) return false;
        return true;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> values_;
    std::vector<Tensor<T>> grads_;
};

inline constexpr std::uint32_t checkpoint_version = 1;

/// MRFW: magic, u32 version, u32 count, then per tensor u16 name length,
/// name bytes, u8 rank, u32 dims, f32 data.
inline void save_parameters(const ParameterSet<float>& p, const std::string& path) {
    auto os = io::open_out(path);
    io::write_magic(os, "MRFW");
    io::write_le<std::uint32_t>(os, checkpoint_version);
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.size()));
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto& name = p.name(i);
        if (name.size() > 0xFFFF) throw DomainError("parameter name too long: " + name);
        io::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        const auto& v = p.value(i);
        if (v.rank() > 255) throw DomainError("tensor rank too large: " + name);
        io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(v.rank()));
        for (auto d : v.shape) io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
        io::write_le_array<float>(os, std::span<const float>(v.data));
    }
    io::finish_write(os, path);
}

inline ParameterSet<float> load_parameters(const std::string& path) {
    auto is = io::open_in(path);
    io::expect_magic(is, "MRFW");
    const auto version = io::read_le<std::uint32_t>(is, "version");
    if (version != checkpoint_version) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = io::read_le<std::uint32_t>(is, "tensor count");
    ParameterSet<float> p;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = io::read_le<std::uint16_t>(is, "name length");
        std::string name(len, '\0');
        is.read(name.data(), len);
        if (is.gcount() != len) throw FormatError("truncated file while reading tensor name");
        const auto rank = io::read_le<std::uint8_t>(is, "rank of " + name);
        Shape shape(rank);
        for (auto& d : shape) d = io::read_le<std::uint32_t>(is, "dims of " + name);
        if (shape_size(shape) > (std::size_t{1} << 32)) throw FormatError("implausible tensor size for " + name);
        if (p.contains(name)) throw FormatError("duplicate tensor name " + name);
        const auto idx = p.add(name, shape);
        io::read_le_array<float>(is, std::span<float>(p.value(idx).data), "data of " + name);
    }
    io::expect_eof(is, "checkpoint " + path);
    return p;
}

}  // namespace mrf::ad
