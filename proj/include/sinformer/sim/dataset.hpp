#pragma once

// Binary container, little-endian:
//   "RFFD" | u16 version | u16 K | u32 m | u64 count | f64 sample_rate_hz
//   count x ( u16 label | m x i16 )

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sinformer/sim/signal.hpp"

namespace sinformer::sim {

inline constexpr std::uint16_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 28;

struct DatasetHeader {
  std::uint16_t format_version = kDatasetVersion;
  std::uint16_t n_classes = 0;
  std::uint32_t samples_per_record = 0;
  std::uint64_t record_count = 0;
  double sample_rate_hz = 0.0;
  bool operator==(const DatasetHeader&) const = default;
};

struct SignalRecord {
  std::uint16_t label = 0;
  std::vector<std::int16_t> samples;
  bool operator==(const SignalRecord&) const = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<SignalRecord> records;
  bool operator==(const Dataset&) const = default;
};

std::uint64_t dataset_file_bytes(std::uint64_t record_count, std::uint32_t m);

/// Throws IoError when the file cannot be written, ContractError when the
/// header disagrees with the records.
void write_dataset(const std::filesystem::path& path, const Dataset& ds);
/// Throws IoError when unreadable, FormatError (with byte offset) when the
/// magic, version, length or a label is invalid.
Dataset read_dataset(const std::filesystem::path& path);

/// Zero-mean, unit-RMS copy; eps guards the all-constant record.
std::vector<float> normalize_record(std::span<const std::int16_t> samples);
std::vector<float> normalize_record(std::span<const double> samples);

struct MultipathSpec {
  double delay_ns = 150.0;
  double sir_db = kClean;
};

struct Impairments {
  double snr_db = kClean;
  NarrowbandSpec narrowband;
  MultipathSpec multipath;
};

/// Channel -> narrowband interference -> AWGN, each skipped when clean.
std::vector<double> impair(std::span<const double> x, const Impairments& imp, const WaveformConfig& cfg, Rng& rng);

/// Evenly spread CFOs (500 Hz apart, centred on 0), distinct phases,
/// a3 from -0.05 to -0.12 and a5 in [0, 0.02] in a scrambled order.
std::vector<EmitterProfile> default_emitter_profiles(std::size_t n_classes);

struct GenerateSpec {
  WaveformConfig waveform;
  std::vector<EmitterProfile> profiles;
  std::size_t per_class = 0;
  Impairments impairments;
  std::uint64_t seed = 0;
  // 0 selects SINFORMER_THREADS or 1.
  unsigned threads = 0;
};

struct GenerateSummary {
  std::uint64_t record_count = 0;
  std::uint64_t clipped_samples = 0;
  double clip_rate = 0.0;
  bool clip_warning = false;
};

inline constexpr double kClipWarnRate = 0.01;

/// Records are generated per (seed, index) stream, so the result does not
/// depend on the thread count; the output order is a seeded shuffle.
Dataset generate_records(const GenerateSpec& spec, GenerateSummary* summary = nullptr);
/// generate_records + write_dataset + JSON-lines sidecar at <path>.meta.
GenerateSummary generate_dataset(const GenerateSpec& spec, const std::filesystem::path& path);

struct CleanRecord {
  std::uint16_t label = 0;
  std::vector<double> samples;
};

/// Fingerprinted emissions before channel, interference, noise and
/// quantization, in the same order as generate_records.
std::vector<CleanRecord> generate_clean(const GenerateSpec& spec);

std::filesystem::path meta_path(const std::filesystem::path& path);

/// Rebuilds the GenerateSpec recorded in the <path>.meta sidecar.
/// Throws IoError when missing, FormatError when malformed.
GenerateSpec read_generate_spec(const std::filesystem::path& dataset_path);

/// Worker count from SINFORMER_THREADS (>= 1), default 1.
unsigned default_threads();

}  // namespace sinformer::sim
