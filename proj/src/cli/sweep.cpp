#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "sinformer/cli.hpp"
#include "sinformer/errors.hpp"

namespace sinformer::cli {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

// Stream tag separating sweep noise from dataset generation streams.
constexpr std::uint64_t kSweepStream = 0x7377656570ULL;

}  // namespace

std::string sweep_axis_name(SweepKind kind) {
  switch (kind) {
    case SweepKind::snr:
      return "snr_db";
    case SweepKind::narrowband:
    case SweepKind::multipath:
      return "sir_db";
  }
  return "db";
}

std::vector<SweepPoint> run_sweep(const model::ModelParams<float>& params, const sim::GenerateSpec& spec,
                                  SweepKind kind, const std::vector<double>& grid, std::uint64_t seed) {
  if (grid.empty()) throw ConfigError("sweep grid is empty");
  if (spec.waveform.samples_per_record != params.cfg.m)
    throw IncompatibleError("m", "dataset records have " + std::to_string(spec.waveform.samples_per_record) +
                                     " samples, model expects " + std::to_string(params.cfg.m));
  if (spec.profiles.size() != params.cfg.K)
    throw IncompatibleError("K", "dataset has " + std::to_string(spec.profiles.size()) +
                                     " classes, model expects " + std::to_string(params.cfg.K));
  const auto clean = sim::generate_clean(spec);
  std::vector<SweepPoint> out;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    sim::Impairments imp;
    switch (kind) {
      case SweepKind::snr:
        imp.snr_db = grid[g];
        break;
      case SweepKind::narrowband:
        imp.snr_db = spec.impairments.snr_db;
        imp.narrowband = spec.impairments.narrowband;
        imp.narrowband.sir_db = grid[g];
        break;
      case SweepKind::multipath:
        imp.snr_db = spec.impairments.snr_db;
        imp.multipath.delay_ns = spec.impairments.multipath.delay_ns;
        imp.multipath.sir_db = grid[g];
        break;
    }
    train::LabeledSet set;
    set.m = spec.waveform.samples_per_record;
    set.n_classes = spec.profiles.size();
    set.x.reserve(clean.size() * set.m);
    for (std::size_t i = 0; i < clean.size(); ++i) {
      Rng rng{seed, kSweepStream, g, i};
      const auto x = sim::impair(clean[i].samples, imp, spec.waveform, rng);
      const auto v = sim::normalize_record(std::span<const double>(x));
      set.x.insert(set.x.end(), v.begin(), v.end());
      set.y.push_back(clean[i].label);
    }
    const auto ev = train::evaluate(params, set);
    out.push_back({grid[g], ev.accuracy, set.size()});
  }
  return out;
}

void write_sweep_csv(const std::filesystem::path& path, SweepKind kind, const std::vector<SweepPoint>& points) {
  auto out = open_out(path);
  out << sweep_axis_name(kind) << ",accuracy,records\n" << std::setprecision(10);
  for (const auto& p : points) out << p.value_db << ',' << p.accuracy << ',' << p.records << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

void write_sweep_svg(const std::filesystem::path& path, SweepKind kind, const std::vector<SweepPoint>& points) {
  if (points.empty()) throw ContractError("write_sweep_svg: no points");
  constexpr double W = 640, H = 420, left = 70, right = 20, top = 40, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;
  double lo = points.front().value_db, hi = points.back().value_db;
  for (const auto& p : points) {
    lo = std::min(lo, p.value_db);
    hi = std::max(hi, p.value_db);
  }
  if (hi == lo) {
    lo -= 1.0;
    hi += 1.0;
  }
  auto sx = [&](double v) { return left + (v - lo) / (hi - lo) * pw; };
  auto sy = [&](double a) { return top + (1.0 - a) * ph; };
  const std::string xlabel = kind == SweepKind::snr ? "SNR (dB)" : "SIR (dB)";
  const std::string title = kind == SweepKind::snr          ? "Accuracy vs SNR"
                            : kind == SweepKind::narrowband ? "Accuracy vs SIR (narrowband interference)"
                                                            : "Accuracy vs SIR (two-path multipath)";

  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  for (int i = 0; i <= 10; ++i) {
    const double a = i / 10.0, y = sy(a);
    s << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << left + pw << "\" y2=\"" << y
      << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << left - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << std::setprecision(1) << a
      << std::setprecision(2) << "</text>\n";
  }
  for (const auto& p : points) {
    const double x = sx(p.value_db);
    s << "<line x1=\"" << x << "\" y1=\"" << top + ph << "\" x2=\"" << x << "\" y2=\"" << top + ph + 5
      << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << x << "\" y=\"" << top + ph + 20 << "\" text-anchor=\"middle\">" << std::setprecision(0)
      << p.value_db << std::setprecision(2) << "</text>\n";
  }
  s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  s << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (const auto& p : points) s << sx(p.value_db) << ',' << sy(p.accuracy) << ' ';
  s << "\"/>\n";
  for (const auto& p : points)
    s << "<circle cx=\"" << sx(p.value_db) << "\" cy=\"" << sy(p.accuracy) << "\" r=\"3.5\" fill=\"#1f77b4\"/>\n";
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
  s << "<text x=\"18\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " << top + ph / 2
    << ")\">Accuracy</text>\n";
  s << "</svg>\n";
  auto out = open_out(path);
  out << s.str();
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace sinformer::cli
