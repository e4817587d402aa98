#include <algorithm>
#include <cmath>
#include <vector>

#include "sinformer/errors.hpp"
#include "sinformer/training.hpp"

namespace sinformer::train {

namespace {

void require_scores(const char* op, std::span<const double> known, std::span<const double> unknown) {
  if (known.empty() || unknown.empty()) throw ContractError(std::string(op) + ": both score sets must be non-empty");
  for (auto s : {known, unknown})
    for (double v : s)
      if (!std::isfinite(v)) throw ContractError(std::string(op) + ": non-finite score");
}

}  // namespace

template <typename T>
EvalResult evaluate(const ModelParams<T>& params, const LabeledSet& data, std::size_t batch_size) {
  if (data.size() == 0) throw ContractError("evaluate: empty record set");
  if (batch_size == 0) throw ConfigError("evaluate: batch size must be positive");
  const auto& cfg = params.cfg;
  if (data.m != cfg.m)
    throw IncompatibleError("m", "records have " + std::to_string(data.m) + " samples, model expects " +
                                     std::to_string(cfg.m));
  const std::size_t n = data.size(), k = cfg.K, d = cfg.d;
  EvalResult r;
  r.confusion.assign(k, std::vector<std::uint64_t>(k, 0));
  r.predicted.resize(n);
  r.max_prob.resize(n);
  r.features.resize(n * d);
  for (auto y : data.y)
    if (y >= k) throw ContractError("evaluate: label " + std::to_string(y) + " out of range for K=" + std::to_string(k));
  std::uint64_t correct = 0;
  for (std::size_t lo = 0; lo < n; lo += batch_size) {
    const std::size_t b = std::min(batch_size, n - lo);
    std::vector<T> block(data.x.begin() + static_cast<std::ptrdiff_t>(lo * data.m),
                         data.x.begin() + static_cast<std::ptrdiff_t>((lo + b) * data.m));
    Tape<T> tape(Tape<T>::Mode::inference);
    const auto out = model::forward_classify(tape, params, Tensor<T>({b, data.m}, std::move(block)));
    const T* pr = out.probs.data().data();
    const T* z = out.pooled.data().data();
    for (std::size_t i = 0; i < b; ++i) {
      const T* row = pr + i * k;
      const auto best = static_cast<std::size_t>(std::max_element(row, row + k) - row);  // first maximum
      const std::size_t idx = lo + i;
      r.predicted[idx] = static_cast<std::uint16_t>(best);
      r.max_prob[idx] = static_cast<float>(row[best]);
      std::copy(z + i * d, z + (i + 1) * d, r.features.begin() + static_cast<std::ptrdiff_t>(idx * d));
      const std::uint16_t y = data.y[idx];
      ++r.confusion[y][best];
      if (y == best) ++correct;
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return r;
}

template EvalResult evaluate(const ModelParams<float>&, const LabeledSet&, std::size_t);
template EvalResult evaluate(const ModelParams<double>&, const LabeledSet&, std::size_t);

double auroc(std::span<const double> known, std::span<const double> unknown) {
  require_scores("auroc", known, unknown);
  std::vector<double> u(unknown.begin(), unknown.end());
  std::sort(u.begin(), u.end());
  // twice the number of (known > unknown) pairs plus tied pairs
  std::uint64_t twice = 0;
  for (double s : known) {
    const auto below = static_cast<std::uint64_t>(std::lower_bound(u.begin(), u.end(), s) - u.begin());
    const auto upto = static_cast<std::uint64_t>(std::upper_bound(u.begin(), u.end(), s) - u.begin());
    twice += 2 * below + (upto - below);
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(known.size()) * static_cast<double>(unknown.size()));
}

double fpr95(std::span<const double> known, std::span<const double> unknown) {
  require_scores("fpr95", known, unknown);
  std::vector<double> k(known.begin(), known.end());
  std::sort(k.begin(), k.end());
  const auto idx = static_cast<std::size_t>(std::floor(0.05 * static_cast<double>(k.size() - 1)));
  const double threshold = k[idx];
  const auto accepted = std::count_if(unknown.begin(), unknown.end(), [&](double v) { return v >= threshold; });
  return static_cast<double>(accepted) / static_cast<double>(unknown.size());
}

}  // namespace sinformer::train
