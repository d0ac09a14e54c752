#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "teamlens/tensor.hpp"

namespace teamlens {

// Direct real DFT along the time (row) axis. Windows in this library are a
// handful of frames long, so the O(w^2 d) loop beats any FFT setup cost and
// keeps the numerics trivially auditable.

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

/// Number of non-negative frequency bins of a length-n real DFT.
inline std::size_t rfft_bins(std::size_t n) { return n / 2 + 1; }

/// Per-bin squared magnitude summed across columns:
///   out[k] = sum_j |DFT_time(x[:, j])[k]|^2,  k = 0 .. floor(w/2).
template <typename T>
std::vector<T> rfft_mag_sq(const Tensor2<T>& x) {
    const std::size_t w = x.rows;
    const std::size_t d = x.cols;
    if (w < 2) throw std::invalid_argument("rfft_mag_sq: window too short (need w >= 2, got " +
                                           std::to_string(w) + ")");
    const std::size_t nb = rfft_bins(w);
    std::vector<T> out(nb, T(0));
    for (std::size_t k = 0; k < nb; ++k) {
        for (std::size_t j = 0; j < d; ++j) {
            T re = T(0), im = T(0);
            for (std::size_t t = 0; t < w; ++t) {
                const double ang = -kTwoPi * static_cast<double>(k) * static_cast<double>(t) /
                                   static_cast<double>(w);
                const T v = x.at(t, j);
                re += v * static_cast<T>(std::cos(ang));
                im += v * static_cast<T>(std::sin(ang));
            }
            out[k] += re * re + im * im;
        }
    }
    return out;
}

/// Per-column magnitude spectrum: (bins x cols) matrix with
///   out(k, j) = |DFT_time(x[:, j])[k]|.
template <typename T>
Tensor2<T> rfft_col_mag(const Tensor2<T>& x) {
    const std::size_t w = x.rows;
    const std::size_t d = x.cols;
    if (w < 2) throw std::invalid_argument("rfft_col_mag: window too short (need w >= 2, got " +
                                           std::to_string(w) + ")");
    const std::size_t nb = rfft_bins(w);
    Tensor2<T> out(nb, d);
    for (std::size_t k = 0; k < nb; ++k) {
        for (std::size_t j = 0; j < d; ++j) {
            T re = T(0), im = T(0);
            for (std::size_t t = 0; t < w; ++t) {
                const double ang = -kTwoPi * static_cast<double>(k) * static_cast<double>(t) /
                                   static_cast<double>(w);
                const T v = x.at(t, j);
                re += v * static_cast<T>(std::cos(ang));
                im += v * static_cast<T>(std::sin(ang));
            }
            out.at(k, j) = std::sqrt(re * re + im * im);
        }
    }
    return out;
}

} // namespace teamlens
