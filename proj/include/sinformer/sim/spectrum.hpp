#pragma once

#include <complex>
#include <span>
#include <vector>

namespace sinformer::sim {

/// Forward DFT (e^{-j2pi kn/N}) of arbitrary length, via FFTW.
std::vector<std::complex<double>> dft(std::span<const std::complex<double>> x);
/// Inverse DFT including the 1/N factor.
std::vector<std::complex<double>> idft(std::span<const std::complex<double>> x);

/// |X_k|^2 for k = 0 .. N/2 of a real sequence.
std::vector<double> power_spectrum(std::span<const double> x);

/// x + j*Hilbert{x} by one-sided spectrum; the real part equals x.
std::vector<std::complex<double>> analytic_signal(std::span<const double> x);

}  // namespace sinformer::sim
