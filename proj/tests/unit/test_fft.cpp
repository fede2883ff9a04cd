#include <doctest.h>

#include <cmath>
#include <random>

#include "hsfno/fft.hpp"

using namespace hsfno;

TEST_CASE("fft of delta and constant") {
    for (std::size_t n : {4u, 6u, 7u, 16u}) {
        std::vector<cplx> x(n, 0.0);
        x[0] = 1.0;
        fft_inplace(x);
        for (auto v : x) CHECK(std::abs(v - cplx(1.0)) < 1e-12);
        std::vector<cplx> c(n, 2.5);
        fft_inplace(c);
        CHECK(std::abs(c[0] - cplx(2.5 * static_cast<double>(n))) < 1e-12);
        for (std::size_t k = 1; k < n; ++k) CHECK(std::abs(c[k]) < 1e-12);
    }
}

TEST_CASE("fft round trip and Parseval") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    for (std::size_t n : {1u, 2u, 5u, 8u, 12u, 31u, 64u, 100u}) {
        std::vector<cplx> x(n);
        for (auto& v : x) v = {nd(rng), nd(rng)};
        auto X = x;
        fft_inplace(X);
        double ex = 0, eX = 0;
        for (std::size_t k = 0; k < n; ++k) {
            ex += std::norm(x[k]);
            eX += std::norm(X[k]);
        }
        CHECK(std::abs(ex - eX / static_cast<double>(n)) <= 1e-10 * ex);
        ifft_inplace(X);
        double err = 0, ref = 0;
        for (std::size_t k = 0; k < n; ++k) {
            err = std::max(err, std::abs(X[k] - x[k]));
            ref = std::max(ref, std::abs(x[k]));
        }
        CHECK(err <= 1e-12 * ref);
    }
}

TEST_CASE("fft matches a direct DFT") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd;
    for (std::size_t n : {6u, 9u, 16u}) {
        std::vector<cplx> x(n);
        for (auto& v : x) v = {nd(rng), nd(rng)};
        auto X = x;
        fft_inplace(X);
        for (std::size_t k = 0; k < n; ++k) {
            cplx s = 0;
            for (std::size_t j = 0; j < n; ++j)
                s += x[j] * std::polar(1.0, -2 * M_PI * static_cast<double>(j * k) / static_cast<double>(n));
            CHECK(std::abs(s - X[k]) < 1e-10);
        }
    }
}

TEST_CASE("fft2 round trip") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd;
    const std::size_t r = 5, c = 8;
    std::vector<cplx> x(r * c);
    for (auto& v : x) v = {nd(rng), 0.0};
    auto y = x;
    fft2_inplace(y, r, c);
    ifft2_inplace(y, r, c);
    for (std::size_t k = 0; k < x.size(); ++k) CHECK(std::abs(y[k] - x[k]) < 1e-12);
}
