#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <sstream>
#include <stdexcept>

#include "teamlens/tensor.hpp"

namespace teamlens {

// ============================================================================
//  Dense kernels with analytic forward/backward passes. Everything is plain
//  loops; the matrices in this library are small enough that a BLAS would be
//  pure overhead. Accumulation happens in the value type T.
// ============================================================================

template <typename T>
Tensor2<T> matmul(const Tensor2<T>& a, const Tensor2<T>& b) {
    if (a.cols != b.rows) {
        std::ostringstream os;
        os << "matmul: inner dimensions differ, " << a.shape_str() << " * " << b.shape_str();
        throw std::invalid_argument(os.str());
    }
    Tensor2<T> out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const T aik = a.at(i, k);
            if (aik == T(0)) continue;
            const T* brow = b.data.data() + k * b.cols;
            T* orow = out.data.data() + i * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

/// y = W x, W is (out x in), x has length in.
template <typename T>
void matvec(const Tensor2<T>& w, std::span<const T> x, std::span<T> y) {
    if (w.cols != x.size() || w.rows != y.size())
        throw std::invalid_argument("matvec: W " + w.shape_str() + " vs x[" +
                                    std::to_string(x.size()) + "] y[" + std::to_string(y.size()) + "]");
    for (std::size_t i = 0; i < w.rows; ++i) {
        T acc = T(0);
        const T* row = w.data.data() + i * w.cols;
        for (std::size_t j = 0; j < w.cols; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
}

/// y += W x.
template <typename T>
void matvec_acc(const Tensor2<T>& w, std::span<const T> x, std::span<T> y) {
    for (std::size_t i = 0; i < w.rows; ++i) {
        T acc = T(0);
        const T* row = w.data.data() + i * w.cols;
        for (std::size_t j = 0; j < w.cols; ++j) acc += row[j] * x[j];
        y[i] += acc;
    }
}

/// y += W^T x (used by backward passes to push gradients through a map).
template <typename T>
void matTvec_acc(const Tensor2<T>& w, std::span<const T> x, std::span<T> y) {
    if (w.rows != x.size() || w.cols != y.size())
        throw std::invalid_argument("matTvec_acc: W " + w.shape_str() + " vs x[" +
                                    std::to_string(x.size()) + "]");
    for (std::size_t i = 0; i < w.rows; ++i) {
        const T xi = x[i];
        if (xi == T(0)) continue;
        const T* row = w.data.data() + i * w.cols;
        for (std::size_t j = 0; j < w.cols; ++j) y[j] += xi * row[j];
    }
}

/// G += u v^T, rank-1 accumulation into a (|u| x |v|) gradient.
template <typename T>
void outer_acc(Tensor2<T>& g, std::span<const T> u, std::span<const T> v) {
    if (g.rows != u.size() || g.cols != v.size())
        throw std::invalid_argument("outer_acc: G " + g.shape_str() + " vs u[" +
                                    std::to_string(u.size()) + "] v[" + std::to_string(v.size()) + "]");
    for (std::size_t i = 0; i < u.size(); ++i) {
        const T ui = u[i];
        if (ui == T(0)) continue;
        T* row = g.data.data() + i * g.cols;
        for (std::size_t j = 0; j < v.size(); ++j) row[j] += ui * v[j];
    }
}

template <typename T, typename U>
void vec_add(std::span<T> y, std::span<U> x) {
    static_assert(std::is_same_v<T, std::remove_const_t<U>>);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
    T acc = T(0);
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

template <typename T>
T norm2(std::span<const T> a) {
    return std::sqrt(dot(a, a));
}

// ----------------------------------------------------------------------------
//  softmax
// ----------------------------------------------------------------------------

/// Max-subtracted softmax; shift-invariant by construction.
template <typename T>
void softmax(std::span<const T> v, std::span<T> out) {
    if (v.empty()) throw std::invalid_argument("softmax: empty input");
    T m = v[0];
    for (T x : v) m = std::max(m, x);
    T sum = T(0);
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - m);
        sum += out[i];
    }
    for (std::size_t i = 0; i < v.size(); ++i) out[i] /= sum;
}

template <typename T>
std::vector<T> softmax(std::span<const T> v) {
    std::vector<T> out(v.size());
    softmax(v, std::span<T>(out));
    return out;
}

/// dL/dv given p = softmax(v) and dL/dp: dv_i = p_i (dp_i - sum_j p_j dp_j).
template <typename T>
void softmax_backward(std::span<const T> p, std::span<const T> dp, std::span<T> dv) {
    T inner = T(0);
    for (std::size_t i = 0; i < p.size(); ++i) inner += p[i] * dp[i];
    for (std::size_t i = 0; i < p.size(); ++i) dv[i] = p[i] * (dp[i] - inner);
}

// ----------------------------------------------------------------------------
//  layer normalization
// ----------------------------------------------------------------------------

template <typename T>
struct LayerNormParams {
    Param<T> gain; // 1 x d
    Param<T> bias; // 1 x d
    T eps = T(1e-5);

    LayerNormParams() = default;
    explicit LayerNormParams(std::size_t d, T e = T(1e-5)) : gain(1, d), bias(1, d), eps(e) {
        if (e <= T(0)) throw std::invalid_argument("LayerNormParams: eps must be > 0");
        gain.value.fill(T(1));
    }
    std::size_t dim() const { return gain.value.cols; }
};

/// Statistics cached by the forward pass for the backward pass.
template <typename T>
struct LayerNormCache {
    std::vector<T> xhat;
    T inv_std = T(0);
};

template <typename T>
void layernorm_forward(std::span<const T> x, const LayerNormParams<T>& p, std::span<T> out,
                       LayerNormCache<T>* cache = nullptr) {
    const std::size_t d = x.size();
    if (d < 2) throw std::invalid_argument("layernorm_forward: need at least 2 features");
    if (p.dim() != d) throw std::invalid_argument("layernorm_forward: param dim mismatch");
    T mean = T(0);
    for (T v : x) mean += v;
    mean /= T(d);
    T var = T(0);
    for (T v : x) var += (v - mean) * (v - mean);
    var /= T(d);
    const T inv_std = T(1) / std::sqrt(var + p.eps);
    if (cache) {
        cache->xhat.resize(d);
        cache->inv_std = inv_std;
    }
    for (std::size_t i = 0; i < d; ++i) {
        const T xhat = (x[i] - mean) * inv_std;
        if (cache) cache->xhat[i] = xhat;
        out[i] = p.gain.value.data[i] * xhat + p.bias.value.data[i];
    }
}

/// Accumulates into p.gain.grad / p.bias.grad and writes dL/dx.
template <typename T>
void layernorm_backward(std::span<const T> dout, const LayerNormCache<T>& cache,
                        LayerNormParams<T>& p, std::span<T> dx) {
    const std::size_t d = cache.xhat.size();
    std::vector<T> dxhat(d);
    T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
    for (std::size_t i = 0; i < d; ++i) {
        p.gain.grad.data[i] += dout[i] * cache.xhat[i];
        p.bias.grad.data[i] += dout[i];
        dxhat[i] = dout[i] * p.gain.value.data[i];
        sum_dxhat += dxhat[i];
        sum_dxhat_xhat += dxhat[i] * cache.xhat[i];
    }
    const T inv_d = T(1) / T(d);
    for (std::size_t i = 0; i < d; ++i) {
        dx[i] = cache.inv_std * (dxhat[i] - inv_d * sum_dxhat - cache.xhat[i] * inv_d * sum_dxhat_xhat);
    }
}

// ----------------------------------------------------------------------------
//  linear map with bias
// ----------------------------------------------------------------------------

template <typename T>
struct LinearMap {
    Param<T> weight; // out x in
    Param<T> bias;   // 1 x out

    LinearMap() = default;
    LinearMap(std::size_t out, std::size_t in) : weight(out, in), bias(1, out) {}

    std::size_t in_dim() const { return weight.value.cols; }
    std::size_t out_dim() const { return weight.value.rows; }

    void zero_grad() {
        weight.zero_grad();
        bias.zero_grad();
    }
};

template <typename T>
void linear_forward(const LinearMap<T>& m, std::span<const T> x, std::span<T> y) {
    matvec(m.weight.value, x, y);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += m.bias.value.data[i];
}

/// Accumulates weight/bias grads and adds the input gradient into dx.
template <typename T>
void linear_backward(LinearMap<T>& m, std::span<const T> x, std::span<const T> dy,
                     std::span<T> dx) {
    outer_acc(m.weight.grad, dy, x);
    for (std::size_t i = 0; i < dy.size(); ++i) m.bias.grad.data[i] += dy[i];
    if (!dx.empty()) matTvec_acc(m.weight.value, dy, dx);
}

// ----------------------------------------------------------------------------
//  pointwise nonlinearities
// ----------------------------------------------------------------------------

template <typename T>
T softplus(T x) {
    // log(1 + e^x), overflow-safe on both tails.
    if (x > T(30)) return x;
    if (x < T(-30)) return std::exp(x);
    return std::log1p(std::exp(x));
}

template <typename T>
T softplus_grad(T x) {
    // d/dx softplus = sigmoid
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
T tanh_grad_from_y(T y) {
    return T(1) - y * y;
}

} // namespace teamlens
