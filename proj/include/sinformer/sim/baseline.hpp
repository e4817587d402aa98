#pragma once

// Dataset sanity oracle: nearest class centroid on the log power spectrum of
// each normalized record.

#include <vector>

#include "sinformer/sim/dataset.hpp"

namespace sinformer::sim {

std::vector<double> log_power_features(const SignalRecord& rec);

class SpectralBaseline {
 public:
  void fit(const Dataset& train);
  std::size_t predict(const SignalRecord& rec) const;
  double accuracy(const Dataset& test) const;
  const std::vector<std::vector<double>>& centroids() const { return centroids_; }

 private:
  std::vector<std::vector<double>> centroids_;
};

struct Separability {
  double intra = 0.0;  // mean distance between same-class centroids of the two halves
  double inter = 0.0;  // mean distance between different-class centroids across halves
  double ratio() const { return intra > 0.0 ? inter / intra : 0.0; }
};

/// Splits each class by record parity, builds per-half log-spectrum centroids.
Separability spectral_separability(const Dataset& ds);

}  // namespace sinformer::sim
