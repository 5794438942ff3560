#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace icedepth::detail {

// Real-to-complex forward DFT, X_k = sum x_n e^{-i 2 pi k n / N}, k = 0..N/2.
std::vector<std::complex<double>> rfft(const std::vector<double>& x);

// Inverse of rfft without the 1/N factor: y_n = sum_{k=0}^{N-1} X_k e^{+i 2 pi k n / N}
// with Hermitian symmetry implied.  `spectrum` holds N/2 + 1 bins.
std::vector<double> irfft(const std::vector<std::complex<double>>& spectrum, std::size_t n);

// Complex forward / backward DFT (backward unnormalised).
std::vector<std::complex<double>> fft(const std::vector<std::complex<double>>& x);
std::vector<std::complex<double>> ifft(const std::vector<std::complex<double>>& x);

// Smallest length >= n of the form 2^a 3^b 5^c.
std::size_t good_fft_size(std::size_t n);

}  // namespace icedepth::detail
