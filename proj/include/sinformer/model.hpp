#pragma once

// Patch-token encoder with multi-scale down-sampling attention heads.
// A mini-batch of B records travels as [B*n x .] matrices (record-major).

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sinformer/ops.hpp"
#include "sinformer/rng.hpp"
#include "sinformer/tensor.hpp"

namespace sinformer::model {

// depthwise: conv kernels are [s x d_k] (one filter per channel);
// full: [s x d_k x d_k] (dense channel mixing).
enum class ConvMode : std::uint8_t { depthwise = 0, full = 1 };

std::string conv_mode_name(ConvMode mode);
ConvMode parse_conv_mode(const std::string& name);

struct ModelConfig {
  std::size_t m = 2000;
  std::size_t l = 100;
  std::size_t d = 256;
  std::size_t L = 6;
  std::vector<std::size_t> scales = {1, 2, 5, 10, 1, 2, 5, 10, 1, 2, 5, 10, 1, 2, 5, 10};
  std::size_t d_k = 64;
  std::size_t d_f = 512;
  std::size_t K = 8;
  ConvMode conv_mode = ConvMode::depthwise;
  double rope_base = 10000.0;

  std::size_t n() const { return l ? m / l : 0; }
  std::size_t h() const { return scales.size(); }
  /// Throws ConfigError naming the violated invariant.
  void validate() const;

  static ModelConfig full() { return {}; }
  /// Small configuration used by the gradient suite.
  static ModelConfig tiny();

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct DsaParams {
  Tensor<T> w_q, w_k, w_v;
  Tensor<T> conv_q, conv_q_bias, conv_k, conv_k_bias, conv_v, conv_v_bias;
};

template <typename T>
struct BlockParams {
  Tensor<T> ln1_gain, ln1_bias;
  std::vector<DsaParams<T>> heads;
  Tensor<T> w_o;
  Tensor<T> ln2_gain, ln2_bias;
  Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool trainable;
};

template <typename T>
struct ModelParams {
  ModelConfig cfg;
  Tensor<T> w_d;
  std::vector<BlockParams<T>> blocks;
  Tensor<T> w_fc, b_fc;
  Tensor<T> w_r;
  Tensor<T> mask_token;
  Tensor<T> aux_w1, aux_b1, aux_w2, aux_b2;

  /// Xavier-uniform matrices and conv kernels, zero biases, unit LN gains,
  /// standard-normal mask token. Trainable tensors require grad.
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

  /// Every tensor in the fixed declared (checkpoint) order, mask token included.
  std::vector<NamedTensor<T>> named() const;
  /// Optimizer list: named() minus the mask token.
  std::vector<Tensor<T>> trainable() const;
  std::vector<std::string> trainable_names() const;

  /// Deep copy, optionally converting precision.
  template <typename U>
  ModelParams<U> cast() const;
  ModelParams clone() const { return cast<T>(); }

  /// Fresh Xavier draw for the classification head only.
  void reset_classifier(std::uint64_t seed);
};

/// Closed-form count of trainable scalars (mask token excluded).
std::uint64_t count_params(const ModelConfig& cfg);

/// Splits [B x m] records into the [B*n x l] patch matrix (a pure reshape).
template <typename T>
Tensor<T> to_patches(const Tensor<T>& records, const ModelConfig& cfg);

/// P = patches, X = P * W_d.
template <typename T>
struct Embedding {
  Tensor<T> patches;
  Tensor<T> tokens;
};

template <typename T>
Embedding<T> embed_patches(Tape<T>& tape, const ModelParams<T>& p, const Tensor<T>& records);

/// Rotates coordinate pairs (2j, 2j+1) of row r by positions[r % n] * base^(-2j/d_k),
/// where n = positions.size() and rows = batch * n. Throws ConfigError for odd widths.
template <typename T>
Tensor<T> rope(Tape<T>& tape, const Tensor<T>& x, std::span<const double> positions, double base = 10000.0);

/// Optional capture of pre-softmax attention logits; `position_offset` shifts
/// every query and key position by a common amount.
template <typename T>
struct AttentionProbe {
  double position_offset = 0.0;
  std::size_t capture_block = 0;
  std::vector<Tensor<T>> logits;  // one per head of capture_block, [B*n x n/s]
  std::size_t current_block = 0;  // maintained by encode()
};

/// One down-sampling attention head on normalized tokens [B*n x d] -> [B*n x d_k].
/// q, k, v are the head's projected [B*n x d_k] matrices.
template <typename T>
Tensor<T> dsa_core(Tape<T>& tape, const DsaParams<T>& head, const Tensor<T>& q, const Tensor<T>& k,
                   const Tensor<T>& v, std::size_t scale, const ModelConfig& cfg, std::size_t batch,
                   AttentionProbe<T>* probe = nullptr);

template <typename T>
Tensor<T> dsa(Tape<T>& tape, const DsaParams<T>& head, const Tensor<T>& x_norm, std::size_t scale,
              const ModelConfig& cfg, std::size_t batch, AttentionProbe<T>* probe = nullptr);

/// concat_i DSA_i(LN(X)) * W_O, with all heads' Q/K/V projections fused in one product.
template <typename T>
Tensor<T> isa(Tape<T>& tape, const BlockParams<T>& blk, const Tensor<T>& x, const ModelConfig& cfg,
              std::size_t batch, AttentionProbe<T>* probe = nullptr);

template <typename T>
Tensor<T> ffn(Tape<T>& tape, const BlockParams<T>& blk, const Tensor<T>& x);

template <typename T>
Tensor<T> encoder_block(Tape<T>& tape, const BlockParams<T>& blk, const Tensor<T>& x, const ModelConfig& cfg,
                        std::size_t batch, AttentionProbe<T>* probe = nullptr);

/// Outputs of every block; back() is X^L.
template <typename T>
std::vector<Tensor<T>> encode(Tape<T>& tape, const ModelParams<T>& p, const Tensor<T>& tokens, std::size_t batch,
                              AttentionProbe<T>* probe = nullptr);

template <typename T>
struct ForwardCache {
  Tensor<T> patches;                  // P   [B*n x l]
  std::vector<Tensor<T>> block_outputs;  // X^1 .. X^L, each [B*n x d]
  Tensor<T> pooled;                   // z   [B x d]
  Tensor<T> logits;                   // [B x K]
  Tensor<T> probs;                    // p   [B x K]
  const Tensor<T>& final_tokens() const { return block_outputs.back(); }
};

/// records: [B x m] normalized samples.
template <typename T>
ForwardCache<T> forward_classify(Tape<T>& tape, const ModelParams<T>& p, const Tensor<T>& records,
                                 AttentionProbe<T>* probe = nullptr);

struct MaskDraw {
  std::vector<std::uint8_t> bits;  // one per token row, 1 = masked
};

/// Exactly round(ratio * n) distinct rows per record, uniform without replacement.
MaskDraw draw_mask(std::size_t n, std::size_t batch, double ratio, Rng& rng);

template <typename T>
struct Masked {
  Tensor<T> tokens;
  MaskDraw mask;
};

template <typename T>
Masked<T> mask_tokens(Tape<T>& tape, const Tensor<T>& tokens, double ratio, const Tensor<T>& mask_token,
                      std::size_t batch, Rng& rng);

/// P_hat = Encoder(X_mask) * W_R.
template <typename T>
Tensor<T> reconstruct(Tape<T>& tape, const ModelParams<T>& p, const Tensor<T>& masked_tokens, std::size_t batch);

}  // namespace sinformer::model
