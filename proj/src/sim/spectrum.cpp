#include "sinformer/sim/spectrum.hpp"

#include <fftw3.h>

#include <mutex>

namespace sinformer::sim {
namespace {

// FFTW planning is not thread-safe; execution with new-array execute is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

std::vector<std::complex<double>> transform(std::span<const std::complex<double>> x, int sign) {
  const int n = static_cast<int>(x.size());
  std::vector<std::complex<double>> in(x.begin(), x.end());
  std::vector<std::complex<double>> out(x.size());
  if (x.empty()) return out;
  auto* pin = reinterpret_cast<fftw_complex*>(in.data());
  auto* pout = reinterpret_cast<fftw_complex*>(out.data());
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_1d(n, pin, pout, sign, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

}  // namespace

std::vector<std::complex<double>> dft(std::span<const std::complex<double>> x) {
  return transform(x, FFTW_FORWARD);
}

std::vector<std::complex<double>> idft(std::span<const std::complex<double>> x) {
  auto out = transform(x, FFTW_BACKWARD);
  const double inv = x.empty() ? 0.0 : 1.0 / static_cast<double>(x.size());
  for (auto& v : out) v *= inv;
  return out;
}

std::vector<double> power_spectrum(std::span<const double> x) {
  std::vector<std::complex<double>> cx(x.begin(), x.end());
  const auto spec = dft(cx);
  std::vector<double> p(x.size() / 2 + 1);
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::norm(spec[k]);
  return p;
}

std::vector<std::complex<double>> analytic_signal(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> cx(x.begin(), x.end());
  auto spec = dft(cx);
  // Keep DC (and Nyquist for even n), double positive bins, zero negative bins.
  for (std::size_t k = 1; k < n; ++k) {
    if (2 * k < n)
      spec[k] *= 2.0;
    else if (2 * k > n)
      spec[k] = 0.0;
  }
  auto out = idft(spec);
  // The real part is x up to rounding; pin it exactly.
  for (std::size_t i = 0; i < n; ++i) out[i].real(x[i]);
  return out;
}

}  // namespace sinformer::sim
