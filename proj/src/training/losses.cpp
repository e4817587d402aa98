#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sinformer/errors.hpp"
#include "sinformer/training.hpp"

namespace sinformer::train {

namespace {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " differ");
}

template <typename T>
void require_mask_rows(const char* op, std::span<const std::uint8_t> mask, std::size_t rows) {
  if (mask.size() != rows)
    throw DimensionError(std::string(op) + ": mask has " + std::to_string(mask.size()) + " entries for " +
                         std::to_string(rows) + " rows");
}

}  // namespace

template <typename T>
Tensor<T> loss_mae(Tape<T>& tape, const Tensor<T>& p_hat, const Tensor<T>& patches,
                   std::span<const std::uint8_t> mask) {
  require_same_shape("loss_mae", p_hat, patches);
  const std::size_t rows = p_hat.rows(), c = p_hat.cols();
  require_mask_rows<T>("loss_mae", mask, rows);
  const auto count = static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto b) { return b; }));
  if (count == 0) throw ContractError("loss_mae: no masked rows");
  const T* a = p_hat.data().data();
  const T* b = patches.data().data();
  double acc = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = static_cast<double>(a[r * c + j]) - static_cast<double>(b[r * c + j]);
      acc += e * e;
    }
  }
  const double inv = 1.0 / static_cast<double>(count);
  const bool tracked = tape.tracks({&p_hat, &patches});
  auto y = Tensor<T>::make_result({}, {static_cast<T>(acc * inv)}, tracked);
  if (tracked) {
    std::vector<std::uint8_t> bits(mask.begin(), mask.end());
    tape.record("loss_mae", y, {p_hat, patches}, [p_hat, patches, y, bits = std::move(bits), rows, c, inv]() {
      const T g = static_cast<T>(2.0 * inv) * y.grad()[0];
      const T* a = p_hat.data().data();
      const T* b = patches.data().data();
      for (std::size_t r = 0; r < rows; ++r) {
        if (!bits[r]) continue;
        for (std::size_t j = 0; j < c; ++j) {
          const T d = g * (a[r * c + j] - b[r * c + j]);
          if (p_hat.requires_grad()) p_hat.grad()[r * c + j] += d;
          if (patches.requires_grad()) patches.grad()[r * c + j] -= d;
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> aux_logits(Tape<T>& tape, const ModelParams<T>& p, const Tensor<T>& rows) {
  auto h = nn::gelu(tape, nn::add_row_bias(tape, nn::matmul(tape, rows, p.aux_w1), p.aux_b1));
  return nn::add_row_bias(tape, nn::matmul(tape, h, p.aux_w2), p.aux_b2);
}

template <typename T>
Tensor<T> binary_cross_entropy(Tape<T>& tape, const Tensor<T>& q, std::span<const std::uint8_t> labels) {
  if (q.cols() != 1) throw DimensionError("binary_cross_entropy: expected a column, got " + shape_str(q.shape()));
  const std::size_t n = q.rows();
  require_mask_rows<T>("binary_cross_entropy", labels, n);
  const T* qd = q.data().data();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = labels[i] ? static_cast<double>(qd[i]) : 1.0 - static_cast<double>(qd[i]);
    acc -= std::log(std::max(v, kLogClamp));
  }
  const double inv = 1.0 / static_cast<double>(n);
  const bool tracked = tape.tracks({&q});
  auto y = Tensor<T>::make_result({}, {static_cast<T>(acc * inv)}, tracked);
  if (tracked) {
    std::vector<std::uint8_t> bits(labels.begin(), labels.end());
    tape.record("binary_cross_entropy", y, {q}, [q, y, bits = std::move(bits), n, inv]() {
      const double g = inv * static_cast<double>(y.grad()[0]);
      const T* qd = q.data().data();
      T* dq = q.grad().data();
      for (std::size_t i = 0; i < n; ++i) {
        const double v = bits[i] ? static_cast<double>(qd[i]) : 1.0 - static_cast<double>(qd[i]);
        if (v <= kLogClamp) continue;  // clamped branch is flat
        dq[i] += static_cast<T>(bits[i] ? -g / v : g / v);
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> loss_aux(Tape<T>& tape, const ModelParams<T>& p, const Tensor<T>& p_hat, const Tensor<T>& patches,
                   std::span<const std::uint8_t> mask) {
  require_same_shape("loss_aux", p_hat, patches);
  require_mask_rows<T>("loss_aux", mask, p_hat.rows());
  auto rows = nn::select_rows(tape, mask, p_hat, patches);
  auto q = nn::sigmoid(tape, aux_logits(tape, p, rows));
  return binary_cross_entropy(tape, q, mask);
}

template <typename T>
Tensor<T> loss_pretrain(Tape<T>& tape, const Tensor<T>& mae, const Tensor<T>& aux, double gamma) {
  const Tensor<T> terms[] = {mae, aux};
  const T weights[] = {T(1), static_cast<T>(gamma)};
  return nn::weighted_sum<T>(tape, terms, weights);
}

template <typename T>
Tensor<T> loss_cls(Tape<T>& tape, const Tensor<T>& probs, std::span<const std::uint16_t> labels) {
  const std::size_t b = probs.rows(), k = probs.cols();
  if (labels.size() != b)
    throw DimensionError("loss_cls: " + std::to_string(labels.size()) + " labels for " + std::to_string(b) +
                         " records");
  for (std::size_t i = 0; i < b; ++i)
    if (labels[i] >= k)
      throw ContractError("loss_cls: label " + std::to_string(labels[i]) + " out of range for K=" +
                          std::to_string(k));
  const T* pd = probs.data().data();
  double acc = 0.0;
  for (std::size_t i = 0; i < b; ++i) acc -= std::log(std::max(static_cast<double>(pd[i * k + labels[i]]), kLogClamp));
  const double inv = 1.0 / static_cast<double>(b);
  const bool tracked = tape.tracks({&probs});
  auto y = Tensor<T>::make_result({}, {static_cast<T>(acc * inv)}, tracked);
  if (tracked) {
    std::vector<std::uint16_t> ys(labels.begin(), labels.end());
    tape.record("loss_cls", y, {probs}, [probs, y, ys = std::move(ys), b, k, inv]() {
      const double g = inv * static_cast<double>(y.grad()[0]);
      const T* pd = probs.data().data();
      T* dp = probs.grad().data();
      for (std::size_t i = 0; i < b; ++i) {
        const double v = static_cast<double>(pd[i * k + ys[i]]);
        if (v <= kLogClamp) continue;
        dp[i * k + ys[i]] += static_cast<T>(-g / v);
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> loss_ssat(Tape<T>& tape, const Tensor<T>& final_tokens, const Tensor<T>& patches, const Tensor<T>& w_r) {
  auto recon = nn::matmul(tape, final_tokens, w_r);
  require_same_shape("loss_ssat", recon, patches);
  auto diff = nn::add(tape, recon, nn::scale(tape, patches, T(-1)));
  return nn::mean(tape, nn::mul(tape, diff, diff));
}

template <typename T>
Tensor<T> loss_task(Tape<T>& tape, const Tensor<T>& cls, const Tensor<T>& ssat, double alpha, double beta) {
  const Tensor<T> terms[] = {cls, ssat};
  const T weights[] = {static_cast<T>(alpha), static_cast<T>(beta)};
  return nn::weighted_sum<T>(tape, terms, weights);
}

#define SINFORMER_INSTANTIATE_LOSSES(T)                                                                        \
  template Tensor<T> loss_mae(Tape<T>&, const Tensor<T>&, const Tensor<T>&, std::span<const std::uint8_t>);    \
  template Tensor<T> aux_logits(Tape<T>&, const ModelParams<T>&, const Tensor<T>&);                           \
  template Tensor<T> binary_cross_entropy(Tape<T>&, const Tensor<T>&, std::span<const std::uint8_t>);         \
  template Tensor<T> loss_aux(Tape<T>&, const ModelParams<T>&, const Tensor<T>&, const Tensor<T>&,            \
                              std::span<const std::uint8_t>);                                                 \
  template Tensor<T> loss_pretrain(Tape<T>&, const Tensor<T>&, const Tensor<T>&, double);                     \
  template Tensor<T> loss_cls(Tape<T>&, const Tensor<T>&, std::span<const std::uint16_t>);                    \
  template Tensor<T> loss_ssat(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> loss_task(Tape<T>&, const Tensor<T>&, const Tensor<T>&, double, double);

SINFORMER_INSTANTIATE_LOSSES(float)
SINFORMER_INSTANTIATE_LOSSES(double)

}  // namespace sinformer::train
