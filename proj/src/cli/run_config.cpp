#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <set>
#include <sstream>

#include "sinformer/cli.hpp"
#include "sinformer/errors.hpp"

namespace sinformer::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Where {
  std::string source;
  std::string key;
  std::size_t line;
  std::string str() const { return "'" + key + "' at " + source + ":" + std::to_string(line); }
};

[[noreturn]] void bad_value(const Where& w, const std::string& value, const std::string& want) {
  throw ConfigError("invalid value '" + value + "' for key " + w.str() + ": expected " + want);
}

std::uint64_t as_uint(const Where& w, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(w, v, "a non-negative integer");
  return out;
}

std::size_t as_positive(const Where& w, const std::string& v) {
  const auto x = as_uint(w, v);
  if (x == 0) bad_value(w, v, "a positive integer");
  return static_cast<std::size_t>(x);
}

double as_double(const Where& w, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) bad_value(w, v, "a finite number");
  return out;
}

double as_db(const Where& w, const std::string& v) { return v == "clean" ? sim::kClean : as_double(w, v); }

std::vector<std::size_t> as_list(const Where& w, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(as_positive(w, trim(item)));
  if (out.empty()) bad_value(w, v, "a comma-separated list of positive integers");
  return out;
}

using Setter = std::function<void(RunConfig&, const Where&, const std::string&)>;

const std::map<std::string, std::map<std::string, Setter>>& schema() {
  static const std::map<std::string, std::map<std::string, Setter>> s = {
      {"model",
       {
           {"m", [](RunConfig& c, const Where& w, const std::string& v) { c.model.m = as_positive(w, v); }},
           {"l", [](RunConfig& c, const Where& w, const std::string& v) { c.model.l = as_positive(w, v); }},
           {"d", [](RunConfig& c, const Where& w, const std::string& v) { c.model.d = as_positive(w, v); }},
           {"L", [](RunConfig& c, const Where& w, const std::string& v) { c.model.L = as_positive(w, v); }},
           {"scales", [](RunConfig& c, const Where& w, const std::string& v) { c.model.scales = as_list(w, v); }},
           {"d_k", [](RunConfig& c, const Where& w, const std::string& v) { c.model.d_k = as_positive(w, v); }},
           {"d_f", [](RunConfig& c, const Where& w, const std::string& v) { c.model.d_f = as_positive(w, v); }},
           {"K", [](RunConfig& c, const Where& w, const std::string& v) { c.model.K = as_positive(w, v); }},
           {"conv_mode",
            [](RunConfig& c, const Where& w, const std::string& v) {
              if (v != "depthwise" && v != "full") bad_value(w, v, "depthwise or full");
              c.model.conv_mode = model::parse_conv_mode(v);
            }},
           {"rope_base",
            [](RunConfig& c, const Where& w, const std::string& v) { c.model.rope_base = as_double(w, v); }},
       }},
      {"train",
       {
           {"alpha", [](RunConfig& c, const Where& w, const std::string& v) { c.train.alpha = as_double(w, v); }},
           {"beta", [](RunConfig& c, const Where& w, const std::string& v) { c.train.beta = as_double(w, v); }},
           {"gamma", [](RunConfig& c, const Where& w, const std::string& v) { c.train.gamma = as_double(w, v); }},
           {"lr", [](RunConfig& c, const Where& w, const std::string& v) { c.train.lr = as_double(w, v); }},
           {"epochs", [](RunConfig& c, const Where& w, const std::string& v) { c.train.epochs = as_positive(w, v); }},
           {"batch_size",
            [](RunConfig& c, const Where& w, const std::string& v) { c.train.batch_size = as_positive(w, v); }},
           {"mask_ratio",
            [](RunConfig& c, const Where& w, const std::string& v) { c.train.mask_ratio = as_double(w, v); }},
           {"seed", [](RunConfig& c, const Where& w, const std::string& v) { c.train.seed = as_uint(w, v); }},
           {"precision",
            [](RunConfig& c, const Where& w, const std::string& v) {
              if (v != "f32" && v != "f64") bad_value(w, v, "f32 or f64");
              c.train.precision = train::parse_precision(v);
            }},
       }},
      {"data",
       {
           {"emitters", [](RunConfig& c, const Where& w, const std::string& v) { c.emitters = as_uint(w, v); }},
           {"per_class",
            [](RunConfig& c, const Where& w, const std::string& v) { c.data.per_class = as_positive(w, v); }},
           {"seed", [](RunConfig& c, const Where& w, const std::string& v) { c.data.seed = as_uint(w, v); }},
           {"threads",
            [](RunConfig& c, const Where& w, const std::string& v) {
              c.data.threads = static_cast<unsigned>(as_uint(w, v));
            }},
           {"sample_rate_hz",
            [](RunConfig& c, const Where& w, const std::string& v) { c.data.waveform.sample_rate_hz = as_double(w, v); }},
           {"carrier_hz",
            [](RunConfig& c, const Where& w, const std::string& v) { c.data.waveform.carrier_hz = as_double(w, v); }},
           {"n_subcarriers",
            [](RunConfig& c, const Where& w, const std::string& v) {
              c.data.waveform.n_subcarriers = as_positive(w, v);
            }},
           {"active_subcarriers",
            [](RunConfig& c, const Where& w, const std::string& v) {
              c.data.waveform.active_subcarriers = as_positive(w, v);
            }},
           {"cp_len", [](RunConfig& c, const Where& w, const std::string& v) { c.data.waveform.cp_len = as_uint(w, v); }},
           {"samples_per_record",
            [](RunConfig& c, const Where& w, const std::string& v) {
              c.data.waveform.samples_per_record = as_positive(w, v);
            }},
       }},
      {"impairments",
       {
           {"snr_db", [](RunConfig& c, const Where& w, const std::string& v) { c.data.impairments.snr_db = as_db(w, v); }},
           {"narrowband_sir_db",
            [](RunConfig& c, const Where& w, const std::string& v) {
              c.data.impairments.narrowband.sir_db = as_db(w, v);
            }},
           {"narrowband_subbands",
            [](RunConfig& c, const Where& w, const std::string& v) {
              c.data.impairments.narrowband.n_subbands = as_positive(w, v);
            }},
           {"narrowband_corrupt",
            [](RunConfig& c, const Where& w, const std::string& v) {
              c.data.impairments.narrowband.n_corrupt = as_positive(w, v);
            }},
           {"multipath_sir_db",
            [](RunConfig& c, const Where& w, const std::string& v) {
              c.data.impairments.multipath.sir_db = as_db(w, v);
            }},
           {"multipath_delay_ns",
            [](RunConfig& c, const Where& w, const std::string& v) {
              c.data.impairments.multipath.delay_ns = as_double(w, v);
            }},
       }},
  };
  return s;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  data.waveform.validate();
  if (emitters < 2) throw ConfigError("need at least 2 emitters, got " + std::to_string(emitters));
  if (data.per_class == 0) throw ConfigError("data.per_class must be positive");
  if (model.m != data.waveform.samples_per_record)
    throw ConfigError("model.m (" + std::to_string(model.m) + ") differs from data.samples_per_record (" +
                      std::to_string(data.waveform.samples_per_record) + ")");
  const auto& nb = data.impairments.narrowband;
  if (nb.n_corrupt > nb.n_subbands) throw ConfigError("impairments.narrowband_corrupt exceeds narrowband_subbands");
  if (!(data.impairments.multipath.delay_ns > 0.0)) throw ConfigError("impairments.multipath_delay_ns must be positive");
}

RunConfig parse_run_config(std::istream& in, const std::string& source) {
  RunConfig cfg;
  cfg.data.per_class = 2000;
  cfg.data.impairments.snr_db = 20.0;
  std::string section;
  std::set<std::string> seen;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto cut = raw.find_first_of("#;");
    const std::string line = trim(cut == std::string::npos ? raw : raw.substr(0, cut));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("malformed section header at " + source + ":" + std::to_string(line_no));
      section = trim(line.substr(1, line.size() - 2));
      if (!schema().contains(section))
        throw ConfigError("unknown section [" + section + "] at " + source + ":" + std::to_string(line_no));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected 'key = value' at " + source + ":" + std::to_string(line_no));
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const Where where{source, section.empty() ? key : section + "." + key, line_no};
    if (section.empty()) throw ConfigError("key " + where.str() + " appears before any [section]");
    const auto& keys = schema().at(section);
    const auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError("unknown key " + where.str());
    if (!seen.insert(where.key).second) throw ConfigError("duplicate key " + where.str());
    if (value.empty()) bad_value(where, value, "a value");
    it->second(cfg, where, value);
  }
  if (cfg.emitters >= 2) cfg.data.profiles = sim::default_emitter_profiles(cfg.emitters);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path.string());
  return parse_run_config(f, path.string());
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ':')) {
    const auto t = trim(item);
    double v = 0.0;
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || !std::isfinite(v))
      throw ConfigError("grid '" + text + "' must be lo:hi:step");
    parts.push_back(v);
  }
  if (parts.size() != 3) throw ConfigError("grid '" + text + "' must be lo:hi:step");
  const double lo = parts[0], hi = parts[1], step = parts[2];
  if (!(step > 0.0) || lo > hi) throw ConfigError("grid '" + text + "' needs step > 0 and lo <= hi");
  std::vector<double> out;
  const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  for (std::size_t i = 0; i < count; ++i) out.push_back(lo + step * static_cast<double>(i));
  return out;
}

}  // namespace sinformer::cli
