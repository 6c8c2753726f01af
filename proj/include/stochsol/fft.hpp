#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace stochsol {

using cplx = std::complex<double>;

// In-place unnormalized DFT. forward: X_k = sum x_n e^{-2 pi i k n / N}.
void fft_forward(std::span<cplx> data);
// In-place inverse without the 1/N factor.
void fft_backward(std::span<cplx> data);

// Angular wavenumbers matching the DFT bin order for spacing dx.
std::vector<double> fft_wavenumbers(std::size_t n, double dx);

}  // namespace stochsol
