#pragma once

// Synthetic emitter/channel chain:
//   x = channel * PA( quadrature_upconvert(s, cfo, phase, iq) ) + interference + noise
// All sample vectors are real passband sequences at WaveformConfig::sample_rate_hz.

#include <complex>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sinformer/rng.hpp"

namespace sinformer::sim {

inline constexpr double kClean = std::numeric_limits<double>::infinity();

struct WaveformConfig {
  double sample_rate_hz = 4e6;
  double carrier_hz = 1e6;
  // IFFT size of one OFDM symbol; must be a power of two.
  std::size_t n_subcarriers = 64;
  // QPSK-loaded bins, split evenly either side of the (empty) DC bin.
  std::size_t active_subcarriers = 16;
  // Cyclic prefix length in samples.
  std::size_t cp_len = 16;
  std::size_t samples_per_record = 2000;

  void validate() const;
};

struct EmitterProfile {
  double cfo_hz = 0.0;
  double phase0_rad = 0.0;
  // Memoryless odd polynomial a1*x + a3*x^3 + a5*x^5.
  double a1 = 1.0;
  double a3 = 0.0;
  double a5 = 0.0;
  double iq_gain_db = 0.0;
  double iq_phase_rad = 0.0;

  void validate(const WaveformConfig& cfg) const;
  bool operator==(const EmitterProfile&) const = default;
};

struct ChannelTap {
  std::size_t delay_samples = 0;
  std::complex<double> gain{1.0, 0.0};
};

struct ChannelProfile {
  std::vector<ChannelTap> taps{ChannelTap{}};
  bool normalized = false;

  void validate() const;
  /// Rescales gains so that sum |g|^2 == 1 and sets `normalized`.
  void normalize();
};

/// Real OFDM record: one symbol of random QPSK on Hermitian-paired bins,
/// cyclic-prefixed, tiled to samples_per_record, peak-normalized to 1.
std::vector<double> synthesize_clean(const WaveformConfig& cfg, Rng& rng);
std::vector<double> synthesize_clean(const WaveformConfig& cfg, std::uint64_t seed);

/// Upconvert at carrier_hz + cfo_hz with initial phase phase0_rad through an
/// IQ modulator (gain/phase imbalance on the quadrature arm), then apply the
/// PA polynomial sample by sample.
std::vector<double> apply_fingerprint(std::span<const double> s, const EmitterProfile& profile,
                                      const WaveformConfig& cfg);

/// Sparse-tap convolution on the analytic signal, real part kept, length
/// preserved (tail truncated). Throws ConfigError when a delay reaches m.
std::vector<double> apply_channel(std::span<const double> x, const ChannelProfile& channel);

/// White Gaussian noise at P_x / 10^(snr_db/10). snr_db == kClean returns x.
/// Throws ContractError for an all-zero x.
std::vector<double> add_awgn(std::span<const double> x, double snr_db, Rng& rng);
std::vector<double> add_awgn(std::span<const double> x, double snr_db, std::uint64_t seed);

struct NarrowbandSpec {
  std::size_t n_subbands = 256;
  std::size_t n_corrupt = 2;
  double sir_db = kClean;
};

struct NarrowbandDraw {
  std::vector<std::size_t> subbands;
  std::vector<double> x;
};

/// Splits [0, fs/2) into n_subbands, draws n_corrupt distinct ones for this
/// record and adds a random-phase tone at each centre, total power
/// P_x / 10^(sir_db/10) shared equally.
NarrowbandDraw add_narrowband_interference(std::span<const double> x, const NarrowbandSpec& spec, Rng& rng);

/// Two-path channel: a unit direct path and an echo at round(delay_ns * fs)
/// samples with |g|^2 = 10^(-sir_db/10) and a random phase.
ChannelProfile make_multipath(double delay_ns, double sir_db, const WaveformConfig& cfg, Rng& rng);

double mean_power(std::span<const double> x);

}  // namespace sinformer::sim
