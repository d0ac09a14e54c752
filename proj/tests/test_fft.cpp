#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "teamlens/fft.hpp"
#include "teamlens/rng.hpp"

using namespace teamlens;
using Catch::Matchers::WithinAbs;

TEST_CASE("rfft_mag_sq worked values") {
    // alternating signal: all energy at the Nyquist bin
    Tensor2<double> alt(4, 1, {1, -1, 1, -1});
    auto bins = rfft_mag_sq(alt);
    REQUIRE(bins.size() == 3);
    REQUIRE_THAT(bins[0], WithinAbs(0.0, 1e-12));
    REQUIRE_THAT(bins[1], WithinAbs(0.0, 1e-12));
    REQUIRE_THAT(bins[2], WithinAbs(16.0, 1e-12));

    // mean-removed ramp
    Tensor2<double> ramp(4, 1, {-1.5, -0.5, 0.5, 1.5});
    auto rb = rfft_mag_sq(ramp);
    REQUIRE_THAT(rb[0], WithinAbs(0.0, 1e-12));
    REQUIRE_THAT(rb[1], WithinAbs(8.0, 1e-12));
    REQUIRE_THAT(rb[2], WithinAbs(4.0, 1e-12));
}

TEST_CASE("constant columns put everything in the DC bin") {
    Xoshiro256 rng(1);
    for (std::size_t w : {2, 3, 4, 7, 16}) {
        Tensor2<double> x(w, 3);
        for (std::size_t j = 0; j < 3; ++j) {
            const double c = rng.uniform(-3, 3);
            for (std::size_t t = 0; t < w; ++t) x.at(t, j) = c;
        }
        auto bins = rfft_mag_sq(x);
        for (std::size_t k = 1; k < bins.size(); ++k) REQUIRE_THAT(bins[k], WithinAbs(0.0, 1e-9));
    }
}

TEST_CASE("bin zero equals the squared magnitude of the column sums") {
    Xoshiro256 rng(2);
    Tensor2<double> x(6, 4);
    for (auto& v : x.data) v = rng.uniform(-1, 1);
    auto bins = rfft_mag_sq(x);
    double expect = 0;
    for (std::size_t j = 0; j < x.cols; ++j) {
        double s = 0;
        for (std::size_t t = 0; t < x.rows; ++t) s += x.at(t, j);
        expect += s * s;
    }
    REQUIRE_THAT(bins[0], WithinAbs(expect, 1e-9));
}

TEST_CASE("rfft_mag_sq matches the naive complex oracle across sizes") {
    Xoshiro256 rng(42);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t w = 2 + rng.below(63);  // 2..64
        const std::size_t d = 1 + rng.below(32);  // 1..32
        Tensor2<double> x(w, d);
        for (auto& v : x.data) v = rng.uniform(-2, 2);
        auto got = rfft_mag_sq(x);
        auto want = oracle::dft_mag_sq(x);
        REQUIRE(got.size() == want.size());
        for (std::size_t k = 0; k < got.size(); ++k) {
            const double denom = std::max(1.0, std::abs(want[k]));
            REQUIRE(std::abs(got[k] - want[k]) / denom <= 1e-9);
        }
    }
}

TEST_CASE("magnitude spectrum is invariant under circular time shift") {
    Xoshiro256 rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t w = 2 + rng.below(15);
        const std::size_t d = 1 + rng.below(8);
        Tensor2<double> x(w, d);
        for (auto& v : x.data) v = rng.uniform(-2, 2);
        const std::size_t shift = rng.below(w);
        Tensor2<double> y(w, d);
        for (std::size_t t = 0; t < w; ++t)
            for (std::size_t j = 0; j < d; ++j) y.at((t + shift) % w, j) = x.at(t, j);
        auto bx = rfft_mag_sq(x);
        auto by = rfft_mag_sq(y);
        for (std::size_t k = 0; k < bx.size(); ++k) {
            const double denom = std::max(1.0, std::abs(bx[k]));
            REQUIRE(std::abs(bx[k] - by[k]) / denom <= 1e-9);
        }
    }
}

TEST_CASE("rfft_col_mag matches the per-column oracle") {
    Xoshiro256 rng(5);
    Tensor2<double> x(8, 4);
    for (auto& v : x.data) v = rng.uniform(-1, 1);
    auto got = rfft_col_mag(x);
    auto want = oracle::dft_col_mag(x);
    REQUIRE(got.rows == want.rows);
    for (std::size_t i = 0; i < got.size(); ++i)
        REQUIRE_THAT(got.data[i], WithinAbs(want.data[i], 1e-9));
}

TEST_CASE("windows shorter than two frames are rejected") {
    Tensor2<double> x(1, 3, {1, 2, 3});
    REQUIRE_THROWS_AS(rfft_mag_sq(x), std::invalid_argument);
    REQUIRE_THROWS_AS(rfft_col_mag(x), std::invalid_argument);
}
