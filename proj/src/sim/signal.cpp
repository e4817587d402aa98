#include "sinformer/sim/signal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "sinformer/errors.hpp"
#include "sinformer/sim/spectrum.hpp"

namespace sinformer::sim {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool is_pow2(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

}  // namespace

void WaveformConfig::validate() const {
  if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz))
    throw ConfigError("sample_rate_hz must be positive");
  if (!(carrier_hz > 0.0) || carrier_hz >= sample_rate_hz / 2)
    throw ConfigError("carrier_hz must lie in (0, sample_rate_hz/2)");
  if (!is_pow2(n_subcarriers) || n_subcarriers < 4)
    throw ConfigError("n_subcarriers must be a power of two >= 4");
  if (active_subcarriers < 2 || active_subcarriers % 2 != 0 || active_subcarriers / 2 >= n_subcarriers / 2)
    throw ConfigError("active_subcarriers must be even, >= 2 and below n_subcarriers - 1");
  if (cp_len > n_subcarriers) throw ConfigError("cp_len must not exceed n_subcarriers");
  if (samples_per_record == 0) throw ConfigError("samples_per_record must be positive");
}

void EmitterProfile::validate(const WaveformConfig& cfg) const {
  if (!(a1 > 0.0)) throw ConfigError("pa a1 must be positive");
  if (!(std::abs(cfo_hz) < cfg.sample_rate_hz / 4))
    throw ConfigError("|cfo_hz| must be below sample_rate_hz/4");
  for (double v : {phase0_rad, a3, a5, iq_gain_db, iq_phase_rad})
    if (!std::isfinite(v)) throw ConfigError("emitter profile fields must be finite");
}

void ChannelProfile::validate() const {
  if (taps.empty()) throw ConfigError("channel needs at least one tap");
  for (std::size_t i = 1; i < taps.size(); ++i)
    if (taps[i].delay_samples <= taps[i - 1].delay_samples)
      throw ConfigError("channel tap delays must be strictly increasing");
}

void ChannelProfile::normalize() {
  double e = 0.0;
  for (const auto& t : taps) e += std::norm(t.gain);
  if (!(e > 0.0)) throw ConfigError("channel has zero energy");
  const double inv = 1.0 / std::sqrt(e);
  for (auto& t : taps) t.gain *= inv;
  normalized = true;
}

std::vector<double> synthesize_clean(const WaveformConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t n = cfg.n_subcarriers;
  const std::size_t half = cfg.active_subcarriers / 2;
  std::vector<std::complex<double>> bins(n);
  const double a = 1.0 / std::numbers::sqrt2;
  for (std::size_t k = 1; k <= half; ++k) {
    const double re = rng.below(2) ? a : -a;
    const double im = rng.below(2) ? a : -a;
    bins[k] = {re, im};
    bins[n - k] = {re, -im};
  }
  const auto sym = idft(bins);
  std::vector<double> block;
  block.reserve(n + cfg.cp_len);
  for (std::size_t i = n - cfg.cp_len; i < n; ++i) block.push_back(sym[i].real());
  for (std::size_t i = 0; i < n; ++i) block.push_back(sym[i].real());

  std::vector<double> s(cfg.samples_per_record);
  double peak = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = block[i % block.size()];
    peak = std::max(peak, std::abs(s[i]));
  }
  for (auto& v : s) v /= peak;
  return s;
}

std::vector<double> synthesize_clean(const WaveformConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return synthesize_clean(cfg, rng);
}

std::vector<double> apply_fingerprint(std::span<const double> s, const EmitterProfile& p,
                                      const WaveformConfig& cfg) {
  p.validate(cfg);
  const double w = kTwoPi * (cfg.carrier_hz + p.cfo_hz) / cfg.sample_rate_hz;
  const double g = std::pow(10.0, p.iq_gain_db / 20.0);
  const double ci = std::cos(p.phase0_rad), sq = std::sin(p.phase0_rad);
  std::vector<double> out(s.size());
  for (std::size_t n = 0; n < s.size(); ++n) {
    // Baseband s*e^{j*theta}; reduces to s*cos(wn + theta) without imbalance.
    const double i_arm = s[n] * ci;
    const double q_arm = s[n] * sq;
    const double ph = w * static_cast<double>(n);
    const double x = i_arm * std::cos(ph) - g * q_arm * std::sin(ph + p.iq_phase_rad);
    const double x2 = x * x;
    out[n] = x * (p.a1 + x2 * (p.a3 + x2 * p.a5));
  }
  return out;
}

std::vector<double> apply_channel(std::span<const double> x, const ChannelProfile& channel) {
  channel.validate();
  const std::size_t m = x.size();
  for (const auto& t : channel.taps)
    if (t.delay_samples >= m)
      throw ConfigError("channel delay " + std::to_string(t.delay_samples) + " must be below record length " +
                        std::to_string(m));
  std::vector<double> y(m, 0.0);
  const bool real_gains =
      std::all_of(channel.taps.begin(), channel.taps.end(), [](const ChannelTap& t) { return t.gain.imag() == 0.0; });
  if (real_gains) {
    for (const auto& t : channel.taps)
      for (std::size_t n = t.delay_samples; n < m; ++n) y[n] += t.gain.real() * x[n - t.delay_samples];
    return y;
  }
  const auto a = analytic_signal(x);
  for (const auto& t : channel.taps)
    for (std::size_t n = t.delay_samples; n < m; ++n) y[n] += (t.gain * a[n - t.delay_samples]).real();
  return y;
}

double mean_power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double e = 0.0;
  for (double v : x) e += v * v;
  return e / static_cast<double>(x.size());
}

std::vector<double> add_awgn(std::span<const double> x, double snr_db, Rng& rng) {
  if (snr_db == kClean) return {x.begin(), x.end()};
  const double px = mean_power(x);
  if (!(px > 0.0)) throw ContractError("add_awgn: signal power is zero, SNR undefined");
  const double sigma = std::sqrt(px / std::pow(10.0, snr_db / 10.0));
  std::vector<double> y(x.begin(), x.end());
  for (auto& v : y) v += sigma * rng.normal();
  return y;
}

std::vector<double> add_awgn(std::span<const double> x, double snr_db, std::uint64_t seed) {
  Rng rng(seed);
  return add_awgn(x, snr_db, rng);
}

NarrowbandDraw add_narrowband_interference(std::span<const double> x, const NarrowbandSpec& spec, Rng& rng) {
  if (spec.n_corrupt == 0 || spec.n_corrupt >= spec.n_subbands)
    throw ConfigError("narrowband: need 0 < n_corrupt < n_subbands");
  NarrowbandDraw out{{}, {x.begin(), x.end()}};
  if (spec.sir_db == kClean) return out;
  const double px = mean_power(x);
  if (!(px > 0.0)) throw ContractError("narrowband: signal power is zero, SIR undefined");

  std::vector<std::size_t> pool(spec.n_subbands);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  for (std::size_t i = 0; i < spec.n_corrupt; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  out.subbands.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(spec.n_corrupt));

  const double per_tone = px / std::pow(10.0, spec.sir_db / 10.0) / static_cast<double>(spec.n_corrupt);
  const double amp = std::sqrt(2.0 * per_tone);
  for (std::size_t b : out.subbands) {
    // Sub-band centre in cycles/sample over [0, 1/2).
    const double f = (static_cast<double>(b) + 0.5) / (2.0 * static_cast<double>(spec.n_subbands));
    const double phase = rng.uniform(0.0, kTwoPi);
    for (std::size_t n = 0; n < out.x.size(); ++n)
      out.x[n] += amp * std::cos(kTwoPi * f * static_cast<double>(n) + phase);
  }
  return out;
}

ChannelProfile make_multipath(double delay_ns, double sir_db, const WaveformConfig& cfg, Rng& rng) {
  const double d = std::round(delay_ns * 1e-9 * cfg.sample_rate_hz);
  if (!(d >= 1.0))
    throw ConfigError("multipath delay of " + std::to_string(delay_ns) +
                      " ns is below one sample; raise sample_rate_hz");
  const double mag = std::pow(10.0, -sir_db / 20.0);
  const double phase = rng.uniform(0.0, kTwoPi);
  ChannelProfile ch;
  ch.taps = {ChannelTap{0, {1.0, 0.0}}, ChannelTap{static_cast<std::size_t>(d), std::polar(mag, phase)}};
  return ch;
}

}  // namespace sinformer::sim
