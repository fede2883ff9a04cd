#pragma once

#include <complex>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace hsfno {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major tensor. `T` is double or std::complex<double>; complex
/// storage is therefore interleaved (re, im) pairs.
template <typename T>
struct BasicTensor {
    Shape shape;
    std::vector<T> data;

    BasicTensor() = default;
    explicit BasicTensor(Shape s) : shape(std::move(s)), data(shape_size(shape), T{}) {}
    BasicTensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape_size(shape)) throw std::invalid_argument("Tensor: data length != shape product");
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t axis) const { return shape.at(axis); }

    std::span<T> span() { return data; }
    std::span<const T> span() const { return data; }

    /// Contiguous block for a fixed leading index.
    std::span<T> block(std::size_t lead) {
        const std::size_t inner = data.size() / shape.front();
        return std::span<T>(data).subspan(lead * inner, inner);
    }
    std::span<const T> block(std::size_t lead) const {
        const std::size_t inner = data.size() / shape.front();
        return std::span<const T>(data).subspan(lead * inner, inner);
    }

    bool operator==(const BasicTensor&) const = default;
};

using Tensor = BasicTensor<double>;
using ComplexTensor = BasicTensor<std::complex<double>>;

}  // namespace hsfno
