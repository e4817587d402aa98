#pragma once

// Batch front end: run-config parsing, evaluation sweeps, report plots and
// the command dispatcher behind the `sinformer` executable.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "sinformer/model.hpp"
#include "sinformer/sim/dataset.hpp"
#include "sinformer/training.hpp"

namespace sinformer::cli {

// Stable process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitIncompatible = 4;
inline constexpr int kExitVerification = 5;

struct RunConfig {
  model::ModelConfig model;
  train::TrainConfig train;
  // profiles are filled from `emitters` with the default emitter set
  sim::GenerateSpec data;
  std::size_t emitters = 8;

  /// Field invariants plus model.m == data.samples_per_record.
  void validate() const;
};

/// INI grammar: `[section]` headers, `key = value` lines, `#` or `;` comments.
/// Sections: model, train, data, impairments. Unknown sections or keys,
/// duplicates and unparsable values throw ConfigError naming key and line.
/// dB fields accept `clean`.
RunConfig parse_run_config(std::istream& in, const std::string& source = "<config>");
/// Throws IoError when the file cannot be read.
RunConfig load_run_config(const std::filesystem::path& path);

/// Inclusive arithmetic grid "lo:hi:step" (step > 0, lo <= hi).
std::vector<double> parse_grid(const std::string& text);

enum class SweepKind { snr, narrowband, multipath };

std::string sweep_axis_name(SweepKind kind);

struct SweepPoint {
  double value_db = 0.0;
  double accuracy = 0.0;
  std::size_t records = 0;
};

/// Re-impairs the clean emissions of `spec` at each grid point and evaluates
/// the fixed model. SNR sweeps apply AWGN only; SIR sweeps add the chosen
/// interference at each SIR on top of the dataset's own SNR.
std::vector<SweepPoint> run_sweep(const model::ModelParams<float>& params, const sim::GenerateSpec& spec,
                                  SweepKind kind, const std::vector<double>& grid, std::uint64_t seed);

void write_sweep_csv(const std::filesystem::path& path, SweepKind kind, const std::vector<SweepPoint>& points);
/// Static accuracy-vs-dB line plot.
void write_sweep_svg(const std::filesystem::path& path, SweepKind kind, const std::vector<SweepPoint>& points);

/// Full command-line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sinformer::cli
