#include "sinformer/sim/baseline.hpp"

#include <cmath>
#include <limits>

#include "sinformer/errors.hpp"
#include "sinformer/sim/spectrum.hpp"

namespace sinformer::sim {
namespace {

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::vector<std::vector<double>> class_means(const Dataset& ds, int parity) {
  const std::size_t k = ds.header.n_classes;
  std::vector<std::vector<double>> sums(k);
  std::vector<std::size_t> counts(k, 0);
  std::vector<std::size_t> seen(k, 0);
  for (const auto& r : ds.records) {
    const std::size_t idx = seen[r.label]++;
    if (parity >= 0 && static_cast<int>(idx % 2) != parity) continue;
    const auto f = log_power_features(r);
    auto& s = sums[r.label];
    if (s.empty()) s.assign(f.size(), 0.0);
    for (std::size_t i = 0; i < f.size(); ++i) s[i] += f[i];
    ++counts[r.label];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) throw ContractError("spectral baseline: class " + std::to_string(c) + " has no records");
    for (auto& v : sums[c]) v /= static_cast<double>(counts[c]);
  }
  return sums;
}

}  // namespace

std::vector<double> log_power_features(const SignalRecord& rec) {
  const auto x = normalize_record(std::span<const std::int16_t>(rec.samples));
  const std::vector<double> xd(x.begin(), x.end());
  auto p = power_spectrum(xd);
  for (auto& v : p) v = std::log(v + 1e-12);
  return p;
}

void SpectralBaseline::fit(const Dataset& train) { centroids_ = class_means(train, -1); }

std::size_t SpectralBaseline::predict(const SignalRecord& rec) const {
  const auto f = log_power_features(rec);
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids_.size(); ++c) {
    const double d = distance(f, centroids_[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

double SpectralBaseline::accuracy(const Dataset& test) const {
  if (test.records.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& r : test.records) hit += predict(r) == r.label;
  return static_cast<double>(hit) / static_cast<double>(test.records.size());
}

Separability spectral_separability(const Dataset& ds) {
  const auto a = class_means(ds, 0);
  const auto b = class_means(ds, 1);
  Separability s;
  const std::size_t k = a.size();
  for (std::size_t i = 0; i < k; ++i) s.intra += distance(a[i], b[i]);
  s.intra /= static_cast<double>(k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      if (i != j) s.inter += distance(a[i], b[j]);
  s.inter /= static_cast<double>(k * (k - 1));
  return s;
}

}  // namespace sinformer::sim
