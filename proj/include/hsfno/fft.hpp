#pragma once

#include <complex>
#include <cstddef>
#include <span>

#include "hsfno/tensor.hpp"

namespace hsfno {

using cplx = std::complex<double>;

// Unnormalized forward DFT X_k = sum_n x_n exp(-2 pi i k n / N); the
// inverse divides by N. Power-of-two lengths use iterative radix-2, other
// lengths go through Bluestein's chirp-z transform.
void fft_inplace(std::span<cplx> data);
void ifft_inplace(std::span<cplx> data);

/// Transform along one axis of a tensor of any rank.
ComplexTensor fft_forward(const ComplexTensor& x, std::size_t axis);
ComplexTensor fft_inverse(const ComplexTensor& x, std::size_t axis);

/// 2D transform of a row-major (rows, cols) block, in place.
void fft2_inplace(std::span<cplx> data, std::size_t rows, std::size_t cols);
void ifft2_inplace(std::span<cplx> data, std::size_t rows, std::size_t cols);

bool is_power_of_two(std::size_t n);

}  // namespace hsfno
