#include "hsfno/fft.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace hsfno {

namespace {

struct Radix2Plan {
    std::size_t n = 0;
    std::vector<cplx> twiddle;        // exp(-2 pi i k / n), k < n/2
    std::vector<std::size_t> bitrev;
};

struct BluesteinPlan {
    std::size_t n = 0;
    std::size_t padded = 0;
    std::vector<cplx> chirp;          // exp(-i pi k^2 / n)
    std::vector<cplx> kernel_hat;     // FFT of the conjugate chirp, padded
};

Radix2Plan make_radix2(std::size_t n) {
    Radix2Plan p;
    p.n = n;
    p.twiddle.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
        const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
        p.twiddle[k] = {std::cos(a), std::sin(a)};
    }
    p.bitrev.resize(n);
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = 0;
        for (std::size_t b = 0; b < bits; ++b)
            if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
        p.bitrev[i] = r;
    }
    return p;
}

const Radix2Plan& radix2_plan(std::size_t n) {
    thread_local std::unordered_map<std::size_t, Radix2Plan> cache;
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, make_radix2(n)).first;
    return it->second;
}

void radix2(std::span<cplx> a, const Radix2Plan& p) {
    const std::size_t n = p.n;
    for (std::size_t i = 0; i < n; ++i)
        if (i < p.bitrev[i]) std::swap(a[i], a[p.bitrev[i]]);
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len / 2;
        const std::size_t stride = n / len;
        for (std::size_t start = 0; start < n; start += len) {
            for (std::size_t k = 0; k < half; ++k) {
                const cplx w = p.twiddle[k * stride];
                const cplx u = a[start + k];
                const cplx v = a[start + k + half] * w;
                a[start + k] = u + v;
                a[start + k + half] = u - v;
            }
        }
    }
}

BluesteinPlan make_bluestein(std::size_t n) {
    BluesteinPlan p;
    p.n = n;
    p.padded = 1;
    while (p.padded < 2 * n - 1) p.padded <<= 1;
    p.chirp.resize(n);
    const std::size_t two_n = 2 * n;
    for (std::size_t k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the phase argument small for large k
        const std::size_t k2 = (k * k) % two_n;
        const double a = -std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
        p.chirp[k] = {std::cos(a), std::sin(a)};
    }
    p.kernel_hat.assign(p.padded, cplx{});
    p.kernel_hat[0] = std::conj(p.chirp[0]);
    for (std::size_t k = 1; k < n; ++k) {
        p.kernel_hat[k] = std::conj(p.chirp[k]);
        p.kernel_hat[p.padded - k] = std::conj(p.chirp[k]);
    }
    radix2(p.kernel_hat, radix2_plan(p.padded));
    return p;
}

const BluesteinPlan& bluestein_plan(std::size_t n) {
    thread_local std::unordered_map<std::size_t, BluesteinPlan> cache;
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, make_bluestein(n)).first;
    return it->second;
}

void bluestein(std::span<cplx> x, const BluesteinPlan& p) {
    std::vector<cplx> a(p.padded, cplx{});
    for (std::size_t k = 0; k < p.n; ++k) a[k] = x[k] * p.chirp[k];
    const auto& rp = radix2_plan(p.padded);
    radix2(a, rp);
    for (std::size_t k = 0; k < p.padded; ++k) a[k] *= p.kernel_hat[k];
    // inverse via conjugation
    for (auto& v : a) v = std::conj(v);
    radix2(a, rp);
    const double scale = 1.0 / static_cast<double>(p.padded);
    for (std::size_t k = 0; k < p.n; ++k) x[k] = std::conj(a[k]) * scale * p.chirp[k];
}

void transform_strided(std::span<cplx> data, std::size_t outer, std::size_t n, std::size_t inner,
                       bool inverse) {
    std::vector<cplx> line(n);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * n * inner + i;
            if (inner == 1) {
                auto seg = data.subspan(base, n);
                inverse ? ifft_inplace(seg) : fft_inplace(seg);
                continue;
            }
            for (std::size_t k = 0; k < n; ++k) line[k] = data[base + k * inner];
            inverse ? ifft_inplace(line) : fft_inplace(line);
            for (std::size_t k = 0; k < n; ++k) data[base + k * inner] = line[k];
        }
    }
}

ComplexTensor transform_axis(const ComplexTensor& x, std::size_t axis, bool inverse) {
    if (axis >= x.rank()) throw std::invalid_argument("fft: axis out of range");
    if (x.data.size() != shape_size(x.shape)) throw std::invalid_argument("fft: shape mismatch");
    std::size_t outer = 1, inner = 1;
    for (std::size_t a = 0; a < axis; ++a) outer *= x.shape[a];
    for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.shape[a];
    ComplexTensor out = x;
    if (x.shape[axis] > 0) transform_strided(out.data, outer, x.shape[axis], inner, inverse);
    return out;
}

}  // namespace

bool is_power_of_two(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

void fft_inplace(std::span<cplx> data) {
    const std::size_t n = data.size();
    if (n <= 1) return;
    if (is_power_of_two(n)) {
        radix2(data, radix2_plan(n));
    } else {
        bluestein(data, bluestein_plan(n));
    }
}

void ifft_inplace(std::span<cplx> data) {
    const std::size_t n = data.size();
    if (n <= 1) return;
    for (auto& v : data) v = std::conj(v);
    fft_inplace(data);
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& v : data) v = std::conj(v) * scale;
}

ComplexTensor fft_forward(const ComplexTensor& x, std::size_t axis) { return transform_axis(x, axis, false); }

ComplexTensor fft_inverse(const ComplexTensor& x, std::size_t axis) { return transform_axis(x, axis, true); }

void fft2_inplace(std::span<cplx> data, std::size_t rows, std::size_t cols) {
    if (data.size() != rows * cols) throw std::invalid_argument("fft2: shape mismatch");
    transform_strided(data, rows, cols, 1, false);
    transform_strided(data, 1, rows, cols, false);
}

void ifft2_inplace(std::span<cplx> data, std::size_t rows, std::size_t cols) {
    if (data.size() != rows * cols) throw std::invalid_argument("ifft2: shape mismatch");
    transform_strided(data, rows, cols, 1, true);
    transform_strided(data, 1, rows, cols, true);
}

}  // namespace hsfno
