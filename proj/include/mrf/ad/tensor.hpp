#pragma once

#include <mrf/error.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace mrf::ad {

using Shape = std::vector<std::size_t>;

/// Storage with a fixed over-alignment. Eigen picks vectorized code paths
/// from the runtime address, so without it results could vary from run to
/// run with the allocator's whims.
template <class T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
}

/// Dense row-major tensor.
template <class T>
struct Tensor {
    Shape shape;
    AlignedVector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_size(shape), fill) {}
    Tensor(Shape s, const std::vector<T>& values) : shape(std::move(s)), data(values.begin(), values.end()) {
        if (data.size() != shape_size(shape)) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                             shape_str(shape));
        }
    }

    std::size_t size() const noexcept { return data.size(); }
    std::vector<T> values() const { return {data.begin(), data.end()}; }
    std::size_t rank() const noexcept { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    T* ptr() noexcept { return data.data(); }
    const T* ptr() const noexcept { return data.data(); }
    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    bool finite() const {
        return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.assign(data.begin(), data.end());
        return out;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

}  // namespace mrf::ad
