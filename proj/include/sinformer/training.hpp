#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sinformer/model.hpp"
#include "sinformer/sim/dataset.hpp"

namespace sinformer::train {

using model::ModelConfig;
using model::ModelParams;

// ---- losses -------------------------------------------------------------

inline constexpr double kLogClamp = 1e-12;

/// Mean over masked rows of the squared row error ||P_hat_i - P_i||^2.
/// Throws ContractError when no row is masked.
template <typename T>
Tensor<T> loss_mae(Tape<T>& tape, const Tensor<T>& p_hat, const Tensor<T>& patches,
                   std::span<const std::uint8_t> mask);

/// Discriminator logits: FFN_aux(row) for the given [N x l] rows -> [N x 1].
template <typename T>
Tensor<T> aux_logits(Tape<T>& tape, const ModelParams<T>& p, const Tensor<T>& rows);

/// -(1/N) sum_i [y_i log(max(q_i, eps)) + (1 - y_i) log(max(1 - q_i, eps))] for probabilities q [N x 1].
template <typename T>
Tensor<T> binary_cross_entropy(Tape<T>& tape, const Tensor<T>& q, std::span<const std::uint8_t> labels);

/// BCE of the discriminator on P_hat rows (masked, label 1) and P rows (unmasked, label 0).
template <typename T>
Tensor<T> loss_aux(Tape<T>& tape, const ModelParams<T>& p, const Tensor<T>& p_hat, const Tensor<T>& patches,
                   std::span<const std::uint8_t> mask);

/// L_MAE + gamma * L_aux.
template <typename T>
Tensor<T> loss_pretrain(Tape<T>& tape, const Tensor<T>& mae, const Tensor<T>& aux, double gamma);

/// Mean over records of -log(max(p_y, eps)); throws ContractError for a label >= K.
template <typename T>
Tensor<T> loss_cls(Tape<T>& tape, const Tensor<T>& probs, std::span<const std::uint16_t> labels);

/// ||X^L W_R - P||_F^2 / (n l), averaged over records.
template <typename T>
Tensor<T> loss_ssat(Tape<T>& tape, const Tensor<T>& final_tokens, const Tensor<T>& patches, const Tensor<T>& w_r);

/// alpha * L_cls + beta * L_SSAT.
template <typename T>
Tensor<T> loss_task(Tape<T>& tape, const Tensor<T>& cls, const Tensor<T>& ssat, double alpha, double beta);

// ---- data ---------------------------------------------------------------

/// Normalized records as one contiguous [N x m] float block.
struct LabeledSet {
  std::size_t m = 0;
  std::size_t n_classes = 0;
  std::vector<float> x;
  std::vector<std::uint16_t> y;

  std::size_t size() const { return y.size(); }
  std::span<const float> record(std::size_t i) const { return {x.data() + i * m, m}; }
  static LabeledSet from_dataset(const sim::Dataset& ds);
  /// First `per_class` records of each class in file order.
  LabeledSet take_per_class(std::size_t per_class) const;
};

// ---- configuration and reports -------------------------------------------

enum class Precision : std::uint8_t { f32, f64 };

std::string precision_name(Precision p);
Precision parse_precision(const std::string& name);

struct TrainConfig {
  double alpha = 0.2;
  double beta = 0.8;
  double gamma = 0.2;
  double lr = 0.0006;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double mask_ratio = 0.5;
  std::uint64_t seed = 0;
  // Arithmetic width of the training loop; returned parameters are always f32.
  Precision precision = Precision::f32;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  std::vector<double> losses;  // parallel to TrainReport::loss_names
  double test_accuracy = -1.0;  // < 0 when not evaluated
  double seconds = 0.0;
};

struct TrainReport {
  std::string stage;
  std::vector<std::string> loss_names;
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double final_test_accuracy = -1.0;
  std::vector<std::vector<std::uint64_t>> confusion;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  /// epoch, <loss columns>, test_accuracy
  void write_csv(const std::filesystem::path& path) const;
  void write_json(const std::filesystem::path& path, const ModelConfig& cfg, const TrainConfig& tcfg) const;
};

using EpochCallback = std::function<void(const TrainReport&, const EpochLog&)>;

// ---- evaluation -----------------------------------------------------------

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::vector<std::uint64_t>> confusion;  // [true][predicted]
  std::vector<std::uint16_t> predicted;
  std::vector<float> max_prob;
  std::vector<float> features;  // pooled z, [N x d]
};

/// Argmax ties go to the lowest class index. Throws ContractError on an empty
/// set or a label outside 0..K-1.
template <typename T>
EvalResult evaluate(const ModelParams<T>& params, const LabeledSet& data, std::size_t batch_size = 256);

/// P(known > unknown) + 0.5 P(tie), exact via integer pair counts.
double auroc(std::span<const double> known, std::span<const double> unknown);
/// Fraction of unknown scores >= the lower-interpolated 5th-percentile known score.
double fpr95(std::span<const double> known, std::span<const double> unknown);

// ---- gradient suite ---------------------------------------------------------

struct GradSuiteOptions {
  std::uint64_t seed = 0;
  std::size_t batch = 2;
  // Coordinates probed per tensor; 0 probes every coordinate.
  std::size_t max_coords_per_tensor = 16;
  double tolerance = 1e-4;
  // Five-point central differences; truncation and roundoff balance near this step.
  double step = 4e-3;
  // Debug hook: scales one autodiff coordinate of every loss so the check must fail.
  bool corrupt = false;
};

struct LossCheck {
  std::string loss;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_coord = 0;
  double worst_fd = 0.0;
  double worst_autodiff = 0.0;
  std::size_t coords_checked = 0;
  bool passed = false;
};

/// Finite-difference check, in 64-bit, of L_MAE, L_aux, L_cls and L_SSAT
/// through the full model over every trainable tensor.
std::vector<LossCheck> run_gradient_suite(const ModelConfig& cfg, const GradSuiteOptions& opt = {});

// ---- training loops ---------------------------------------------------------

struct TrainResult {
  ModelParams<float> params;
  TrainReport report;
};

/// Stage 1 (labels ignored). Starts from `init` when given, else fresh params.
TrainResult run_pretrain(const LabeledSet& data, const ModelConfig& cfg, const TrainConfig& tcfg,
                         const std::optional<ModelParams<float>>& init = std::nullopt,
                         const EpochCallback& on_epoch = {});

/// Stage 2. With `init`, all layers start from it and the classifier head is
/// re-drawn; returns the parameters of the epoch with the best test accuracy.
TrainResult run_finetune(const LabeledSet& train, const LabeledSet& test, const ModelConfig& cfg,
                         const TrainConfig& tcfg, const std::optional<ModelParams<float>>& init = std::nullopt,
                         const EpochCallback& on_epoch = {});

}  // namespace sinformer::train
