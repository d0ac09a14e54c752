#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace teamlens {

/// Dense row-major matrix. The single value carrier for every projection,
/// feature block, and parameter in the library. T is float for the runtime
/// pipeline and double for oracles and gradient checks.
template <typename T>
struct Tensor2 {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Tensor2() = default;
    Tensor2(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, T(0)) {}
    Tensor2(std::size_t r, std::size_t c, std::vector<T> d)
        : rows(r), cols(c), data(std::move(d)) {
        if (data.size() != rows * cols) {
            throw std::invalid_argument("Tensor2: data length " + std::to_string(data.size()) +
                                        " does not match " + std::to_string(rows) + "x" +
                                        std::to_string(cols));
        }
    }

    T& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    std::size_t size() const { return rows * cols; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(T(0)); }

    bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }

    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor2<U> cast() const {
        Tensor2<U> out(rows, cols);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <typename T>
inline void require_shape(const Tensor2<T>& t, std::size_t r, std::size_t c, const char* what) {
    if (t.rows != r || t.cols != c) {
        std::ostringstream os;
        os << what << ": expected " << r << "x" << c << ", got " << t.shape_str();
        throw std::invalid_argument(os.str());
    }
}

/// A trainable tensor: value plus a same-shaped gradient accumulator.
template <typename T>
struct Param {
    Tensor2<T> value;
    Tensor2<T> grad;

    Param() = default;
    Param(std::size_t r, std::size_t c) : value(r, c), grad(r, c) {}

    void zero_grad() { grad.zero(); }
    std::size_t size() const { return value.size(); }
};

} // namespace teamlens
