#include "sinformer/sim/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <thread>

#include "sinformer/errors.hpp"

namespace sinformer::sim {
namespace {

template <typename U>
void put_le(std::vector<unsigned char>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  return v;
}

std::uint64_t f64_bits(double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, sizeof u);
  return u;
}

double bits_f64(std::uint64_t u) {
  double d;
  std::memcpy(&d, &u, sizeof d);
  return d;
}

struct QuantizedRecord {
  SignalRecord record;
  std::uint64_t clipped = 0;
};

std::uint16_t label_of(const GenerateSpec& spec, std::uint64_t index) {
  return static_cast<std::uint16_t>(index / spec.per_class);
}

// Fingerprinted emission of record `index`; consumes the head of its stream.
std::vector<double> emission(const GenerateSpec& spec, std::uint64_t index, Rng& rng) {
  const auto s = synthesize_clean(spec.waveform, rng);
  return apply_fingerprint(s, spec.profiles[label_of(spec, index)], spec.waveform);
}

std::vector<std::uint64_t> file_order(const GenerateSpec& spec, std::uint64_t n) {
  std::vector<std::uint64_t> order(n);
  for (std::uint64_t i = 0; i < n; ++i) order[i] = i;
  Rng shuffler{spec.seed, ~std::uint64_t{0}};
  shuffler.shuffle(order.begin(), order.end());
  return order;
}

QuantizedRecord make_record(const GenerateSpec& spec, std::uint64_t index) {
  Rng rng{spec.seed, index};
  const auto label = label_of(spec, index);
  auto x = emission(spec, index, rng);

  const auto& mp = spec.impairments.multipath;
  if (mp.sir_db != kClean) x = apply_channel(x, make_multipath(mp.delay_ns, mp.sir_db, spec.waveform, rng));
  const double clean_rms = std::sqrt(mean_power(x));
  Impairments rest = spec.impairments;
  rest.multipath.sir_db = kClean;
  x = impair(x, rest, spec.waveform, rng);

  QuantizedRecord out;
  out.record.label = label;
  out.record.samples.resize(x.size());
  // Full scale (32767) sits at 4x the clean RMS.
  const double scale = clean_rms > 0.0 ? 32767.0 / (4.0 * clean_rms) : 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double q = std::nearbyint(x[i] * scale);
    if (q > 32767.0 || q < -32768.0) {
      ++out.clipped;
      q = std::clamp(q, -32768.0, 32767.0);
    }
    out.record.samples[i] = static_cast<std::int16_t>(q);
  }
  return out;
}

nlohmann::json profile_json(const EmitterProfile& p) {
  return {{"cfo_hz", p.cfo_hz},         {"phase0_rad", p.phase0_rad},
          {"pa_coeffs", {p.a1, p.a3, p.a5}}, {"iq_gain_db", p.iq_gain_db},
          {"iq_phase_rad", p.iq_phase_rad}};
}

nlohmann::json db_json(double v) { return v == kClean ? nlohmann::json("clean") : nlohmann::json(v); }

}  // namespace

std::uint64_t dataset_file_bytes(std::uint64_t record_count, std::uint32_t m) {
  return kDatasetHeaderBytes + record_count * (2 + 2 * static_cast<std::uint64_t>(m));
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  const auto& h = ds.header;
  if (h.record_count != ds.records.size()) throw ContractError("write_dataset: record_count disagrees with records");
  std::vector<unsigned char> buf;
  buf.reserve(dataset_file_bytes(h.record_count, h.samples_per_record));
  buf.insert(buf.end(), {'R', 'F', 'F', 'D'});
  put_le(buf, h.format_version);
  put_le(buf, h.n_classes);
  put_le(buf, h.samples_per_record);
  put_le(buf, h.record_count);
  put_le(buf, f64_bits(h.sample_rate_hz));
  for (const auto& r : ds.records) {
    if (r.samples.size() != h.samples_per_record) throw ContractError("write_dataset: record length != m");
    if (r.label >= h.n_classes) throw ContractError("write_dataset: label out of range");
    put_le(buf, r.label);
    for (std::int16_t v : r.samples) put_le(buf, static_cast<std::uint16_t>(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  f.close();
  if (!f) throw IoError("write failed: " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError("read failed: " + path.string());

  if (buf.size() < kDatasetHeaderBytes) throw FormatError("truncated header", buf.size());
  if (std::memcmp(buf.data(), "RFFD", 4) != 0) throw FormatError("bad magic", 0);
  Dataset ds;
  auto& h = ds.header;
  h.format_version = get_le<std::uint16_t>(buf.data() + 4);
  if (h.format_version != kDatasetVersion)
    throw FormatError("unsupported version " + std::to_string(h.format_version), 4);
  h.n_classes = get_le<std::uint16_t>(buf.data() + 6);
  if (h.n_classes == 0) throw FormatError("zero classes", 6);
  h.samples_per_record = get_le<std::uint32_t>(buf.data() + 8);
  if (h.samples_per_record == 0) throw FormatError("zero-length records", 8);
  h.record_count = get_le<std::uint64_t>(buf.data() + 12);
  h.sample_rate_hz = bits_f64(get_le<std::uint64_t>(buf.data() + 20));

  const std::uint64_t rec_bytes = 2 + 2 * static_cast<std::uint64_t>(h.samples_per_record);
  const std::uint64_t available = (buf.size() - kDatasetHeaderBytes) / rec_bytes;
  if (available < h.record_count)
    throw FormatError("truncated at record " + std::to_string(available),
                      kDatasetHeaderBytes + available * rec_bytes);
  const std::uint64_t expected = dataset_file_bytes(h.record_count, h.samples_per_record);
  if (buf.size() != expected) throw FormatError("trailing bytes after last record", expected);

  ds.records.resize(h.record_count);
  for (std::uint64_t r = 0; r < h.record_count; ++r) {
    const std::uint64_t off = kDatasetHeaderBytes + r * rec_bytes;
    const unsigned char* p = buf.data() + off;
    auto& rec = ds.records[r];
    rec.label = get_le<std::uint16_t>(p);
    if (rec.label >= h.n_classes) throw FormatError("label " + std::to_string(rec.label) + " >= K", off);
    rec.samples.resize(h.samples_per_record);
    for (std::uint32_t i = 0; i < h.samples_per_record; ++i)
      rec.samples[i] = static_cast<std::int16_t>(get_le<std::uint16_t>(p + 2 + 2 * i));
  }
  return ds;
}

namespace {

template <typename S>
std::vector<float> normalize_impl(std::span<const S> samples) {
  std::vector<float> out(samples.size());
  if (samples.empty()) return out;
  double mean = 0.0;
  for (S v : samples) mean += static_cast<double>(v);
  mean /= static_cast<double>(samples.size());
  double ss = 0.0;
  for (S v : samples) ss += (static_cast<double>(v) - mean) * (static_cast<double>(v) - mean);
  const double rms = std::sqrt(ss / static_cast<double>(samples.size()));
  const double inv = 1.0 / (rms + 1e-9);
  for (std::size_t i = 0; i < samples.size(); ++i)
    out[i] = static_cast<float>((static_cast<double>(samples[i]) - mean) * inv);
  return out;
}

}  // namespace

std::vector<float> normalize_record(std::span<const std::int16_t> samples) { return normalize_impl(samples); }
std::vector<float> normalize_record(std::span<const double> samples) { return normalize_impl(samples); }

std::vector<double> impair(std::span<const double> x, const Impairments& imp, const WaveformConfig& cfg, Rng& rng) {
  std::vector<double> y(x.begin(), x.end());
  if (imp.multipath.sir_db != kClean)
    y = apply_channel(y, make_multipath(imp.multipath.delay_ns, imp.multipath.sir_db, cfg, rng));
  if (imp.narrowband.sir_db != kClean) y = add_narrowband_interference(y, imp.narrowband, rng).x;
  if (imp.snr_db != kClean) y = add_awgn(y, imp.snr_db, rng);
  return y;
}

std::vector<EmitterProfile> default_emitter_profiles(std::size_t n_classes) {
  std::vector<EmitterProfile> out(n_classes);
  const double span = n_classes > 1 ? static_cast<double>(n_classes - 1) : 1.0;
  for (std::size_t k = 0; k < n_classes; ++k) {
    auto& p = out[k];
    const double kd = static_cast<double>(k);
    p.cfo_hz = (kd - span / 2.0) * 500.0;
    p.phase0_rad = 0.3 * kd;
    p.a1 = 1.0;
    p.a3 = -0.05 - 0.07 * kd / span;
    p.a5 = 0.02 * static_cast<double>((3 * k) % n_classes) / span;
  }
  return out;
}

unsigned default_threads() {
  if (const char* env = std::getenv("SINFORMER_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<unsigned>(v);
  }
  return 1;
}

namespace {

void validate_spec(const GenerateSpec& spec) {
  spec.waveform.validate();
  const std::size_t k = spec.profiles.size();
  if (k < 2) throw ConfigError("need at least 2 emitters");
  if (k > UINT16_MAX) throw ConfigError("too many emitters");
  if (spec.per_class == 0) throw ConfigError("per_class must be positive");
  for (std::size_t i = 0; i < k; ++i) {
    spec.profiles[i].validate(spec.waveform);
    for (std::size_t j = 0; j < i; ++j)
      if (spec.profiles[i] == spec.profiles[j])
        throw ConfigError("emitter profiles " + std::to_string(j) + " and " + std::to_string(i) + " are identical");
  }
  if (spec.impairments.multipath.sir_db != kClean) {
    Rng probe(0);
    (void)make_multipath(spec.impairments.multipath.delay_ns, 0.0, spec.waveform, probe);
  }
}

}  // namespace

Dataset generate_records(const GenerateSpec& spec, GenerateSummary* summary) {
  validate_spec(spec);
  const std::size_t k = spec.profiles.size();
  const std::uint64_t n = static_cast<std::uint64_t>(k) * spec.per_class;
  std::vector<SignalRecord> records(n);
  std::vector<std::uint64_t> clipped(n, 0);
  const unsigned threads = std::max(1u, spec.threads ? spec.threads : default_threads());
  auto work = [&](unsigned t) {
    for (std::uint64_t i = t; i < n; i += threads) {
      auto q = make_record(spec, i);
      records[i] = std::move(q.record);
      clipped[i] = q.clipped;
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t);
  }

  const auto order = file_order(spec, n);

  Dataset ds;
  ds.header.n_classes = static_cast<std::uint16_t>(k);
  ds.header.samples_per_record = static_cast<std::uint32_t>(spec.waveform.samples_per_record);
  ds.header.record_count = n;
  ds.header.sample_rate_hz = spec.waveform.sample_rate_hz;
  ds.records.reserve(n);
  for (std::uint64_t i : order) ds.records.push_back(std::move(records[i]));

  if (summary) {
    summary->record_count = n;
    summary->clipped_samples = 0;
    for (auto c : clipped) summary->clipped_samples += c;
    summary->clip_rate =
        static_cast<double>(summary->clipped_samples) / static_cast<double>(n * spec.waveform.samples_per_record);
    summary->clip_warning = summary->clip_rate > kClipWarnRate;
  }
  return ds;
}

std::vector<CleanRecord> generate_clean(const GenerateSpec& spec) {
  validate_spec(spec);
  const std::uint64_t n = static_cast<std::uint64_t>(spec.profiles.size()) * spec.per_class;
  std::vector<CleanRecord> out;
  out.reserve(n);
  for (std::uint64_t i : file_order(spec, n)) {
    Rng rng{spec.seed, i};
    out.push_back({label_of(spec, i), emission(spec, i, rng)});
  }
  return out;
}

std::filesystem::path meta_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".meta";
  return p;
}

GenerateSummary generate_dataset(const GenerateSpec& spec, const std::filesystem::path& path) {
  GenerateSummary summary;
  const auto ds = generate_records(spec, &summary);
  write_dataset(path, ds);

  const auto& w = spec.waveform;
  const auto& imp = spec.impairments;
  nlohmann::json head = {
      {"type", "dataset"},
      {"format_version", kDatasetVersion},
      {"seed", spec.seed},
      {"n_classes", spec.profiles.size()},
      {"per_class", spec.per_class},
      {"record_count", summary.record_count},
      {"waveform",
       {{"sample_rate_hz", w.sample_rate_hz},
        {"carrier_hz", w.carrier_hz},
        {"n_subcarriers", w.n_subcarriers},
        {"active_subcarriers", w.active_subcarriers},
        {"cp_len", w.cp_len},
        {"modulation", "QPSK"},
        {"samples_per_record", w.samples_per_record}}},
      {"impairments",
       {{"snr_db", db_json(imp.snr_db)},
        {"narrowband",
         {{"n_subbands", imp.narrowband.n_subbands},
          {"n_corrupt", imp.narrowband.n_corrupt},
          {"sir_db", db_json(imp.narrowband.sir_db)}}},
        {"multipath", {{"delay_ns", imp.multipath.delay_ns}, {"sir_db", db_json(imp.multipath.sir_db)}}}}},
      {"quantization_full_scale_rms", 4.0},
      {"clipped_samples", summary.clipped_samples},
      {"clip_rate", summary.clip_rate}};

  std::ofstream f(meta_path(path), std::ios::trunc);
  if (!f) throw IoError("cannot open " + meta_path(path).string() + " for writing");
  f << head.dump() << '\n';
  for (std::size_t k = 0; k < spec.profiles.size(); ++k) {
    auto line = profile_json(spec.profiles[k]);
    line["type"] = "emitter";
    line["label"] = k;
    f << line.dump() << '\n';
  }
  if (summary.clip_warning) {
    nlohmann::json warn = {{"type", "warning"},
                           {"message", "clipping rate above 1%"},
                           {"clip_rate", summary.clip_rate}};
    f << warn.dump() << '\n';
  }
  f.close();
  if (!f) throw IoError("write failed: " + meta_path(path).string());
  return summary;
}

GenerateSpec read_generate_spec(const std::filesystem::path& dataset_path) {
  const auto path = meta_path(dataset_path);
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  GenerateSpec spec;
  bool have_head = false;
  std::string line;
  std::uint64_t offset = 0;
  std::size_t n_classes = 0;
  auto db = [](const nlohmann::json& v) { return v.is_string() ? kClean : v.get<double>(); };
  while (std::getline(f, line)) {
    const std::uint64_t at = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "dataset") {
        spec.seed = j.at("seed").get<std::uint64_t>();
        spec.per_class = j.at("per_class").get<std::size_t>();
        n_classes = j.at("n_classes").get<std::size_t>();
        const auto& w = j.at("waveform");
        spec.waveform.sample_rate_hz = w.at("sample_rate_hz").get<double>();
        spec.waveform.carrier_hz = w.at("carrier_hz").get<double>();
        spec.waveform.n_subcarriers = w.at("n_subcarriers").get<std::size_t>();
        spec.waveform.active_subcarriers = w.at("active_subcarriers").get<std::size_t>();
        spec.waveform.cp_len = w.at("cp_len").get<std::size_t>();
        spec.waveform.samples_per_record = w.at("samples_per_record").get<std::size_t>();
        const auto& imp = j.at("impairments");
        spec.impairments.snr_db = db(imp.at("snr_db"));
        const auto& nb = imp.at("narrowband");
        spec.impairments.narrowband.n_subbands = nb.at("n_subbands").get<std::size_t>();
        spec.impairments.narrowband.n_corrupt = nb.at("n_corrupt").get<std::size_t>();
        spec.impairments.narrowband.sir_db = db(nb.at("sir_db"));
        const auto& mp = imp.at("multipath");
        spec.impairments.multipath.delay_ns = mp.at("delay_ns").get<double>();
        spec.impairments.multipath.sir_db = db(mp.at("sir_db"));
        have_head = true;
      } else if (type == "emitter") {
        if (j.at("label").get<std::size_t>() != spec.profiles.size())
          throw FormatError("emitter lines out of label order in " + path.string(), at);
        EmitterProfile p;
        p.cfo_hz = j.at("cfo_hz").get<double>();
        p.phase0_rad = j.at("phase0_rad").get<double>();
        const auto& pa = j.at("pa_coeffs");
        p.a1 = pa.at(0).get<double>();
        p.a3 = pa.at(1).get<double>();
        p.a5 = pa.at(2).get<double>();
        p.iq_gain_db = j.at("iq_gain_db").get<double>();
        p.iq_phase_rad = j.at("iq_phase_rad").get<double>();
        spec.profiles.push_back(p);
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("malformed sidecar line in " + path.string() + ": " + e.what(), at);
    }
  }
  if (!have_head) throw FormatError("sidecar " + path.string() + " has no dataset line", 0);
  if (spec.profiles.size() != n_classes)
    throw FormatError("sidecar " + path.string() + " lists " + std::to_string(spec.profiles.size()) +
                          " emitters for " + std::to_string(n_classes) + " classes",
                      offset);
  return spec;
}

}  // namespace sinformer::sim
