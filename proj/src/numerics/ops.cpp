#include "sinformer/ops.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "sinformer/kernels.hpp"

namespace sinformer::nn {
namespace {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op, const char* what) {
  if (!t.defined() || t.rank() != 2)
    throw DimensionError(std::string(op) + ": " + what + " must be a matrix, got " +
                         (t.defined() ? shape_str(t.shape()) : std::string("<undefined>")));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  transpose_into(src, rows, cols, out.data());
  return out;
}

}  // namespace

template <typename T>
void transpose_into(const T* src, std::size_t rows, std::size_t cols, T* dst) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul", "lhs");
  require_matrix(b, "matmul", "rhs");
  const std::size_t r = a.shape()[0], k = a.shape()[1], c = b.shape()[1];
  if (b.shape()[0] != k)
    throw DimensionError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const bool tracked = tape.tracks({&a, &b});
  std::vector<T> out(r * c);
  kernels::gemm<T>(r, c, k, a.data().data(), k, b.data().data(), c, out.data(), c, false);
  Tensor<T> y = Tensor<T>::make_result({r, c}, std::move(out), tracked);
  if (tracked) {
    tape.record("matmul", y, {a, b}, [a, b, y, r, k, c]() mutable {
      const T* dy = y.grad().data();
      if (a.requires_grad()) {
        const auto bt = transposed(b.data().data(), k, c);
        kernels::gemm<T>(r, k, c, dy, c, bt.data(), k, a.grad().data(), k, true);
      }
      if (b.requires_grad()) {
        const auto at = transposed(a.data().data(), r, k);
        kernels::gemm<T>(k, c, r, at.data(), r, dy, c, b.grad().data(), c, true);
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> batched_matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b, std::size_t batch,
                         bool transpose_b) {
  require_matrix(a, "batched_matmul", "lhs");
  require_matrix(b, "batched_matmul", "rhs");
  if (batch == 0 || a.shape()[0] % batch || b.shape()[0] % batch)
    throw DimensionError("batched_matmul: batch " + std::to_string(batch) + " does not divide " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t r = a.shape()[0] / batch, k = a.shape()[1];
  const std::size_t brows = b.shape()[0] / batch, bcols = b.shape()[1];
  const std::size_t c = transpose_b ? brows : bcols;
  if ((transpose_b ? bcols : brows) != k)
    throw DimensionError("batched_matmul: inner dimensions differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + (transpose_b ? " (rhs transposed)" : ""));
  const bool tracked = tape.tracks({&a, &b});
  std::vector<T> out(batch * r * c);
  std::vector<T> scratch;
  for (std::size_t s = 0; s < batch; ++s) {
    const T* as = a.data().data() + s * r * k;
    const T* bs = b.data().data() + s * brows * bcols;
    const T* rhs = bs;
    if (transpose_b) {
      scratch.resize(k * c);
      transpose_into(bs, c, k, scratch.data());
      rhs = scratch.data();
    }
    kernels::gemm<T>(r, c, k, as, k, rhs, c, out.data() + s * r * c, c, false);
  }
  Tensor<T> y = Tensor<T>::make_result({batch * r, c}, std::move(out), tracked);
  if (tracked) {
    tape.record("batched_matmul", y, {a, b}, [a, b, y, batch, r, k, c, brows, bcols, transpose_b]() mutable {
      std::vector<T> tmp;
      for (std::size_t s = 0; s < batch; ++s) {
        const T* dy = y.grad().data() + s * r * c;
        const T* as = a.data().data() + s * r * k;
        const T* bs = b.data().data() + s * brows * bcols;
        if (a.requires_grad()) {
          T* da = a.grad().data() + s * r * k;
          if (transpose_b) {
            // B_s is c x k already: dA = dY * B_s
            kernels::gemm<T>(r, k, c, dy, c, bs, k, da, k, true);
          } else {
            tmp.resize(k * c);
            transpose_into(bs, k, c, tmp.data());
            kernels::gemm<T>(r, k, c, dy, c, tmp.data(), k, da, k, true);
          }
        }
        if (b.requires_grad()) {
          T* db = b.grad().data() + s * brows * bcols;
          if (transpose_b) {
            // dB_s (c x k) = dY^T * A_s
            tmp.resize(c * r);
            transpose_into(dy, r, c, tmp.data());
            kernels::gemm<T>(c, k, r, tmp.data(), r, as, k, db, k, true);
          } else {
            tmp.resize(k * r);
            transpose_into(as, r, k, tmp.data());
            kernels::gemm<T>(k, c, r, tmp.data(), r, dy, c, db, c, true);
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  const bool tracked = tape.tracks({&a, &b});
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tensor<T> y = Tensor<T>::make_result(a.shape(), std::move(out), tracked);
  if (tracked) {
    tape.record("add", y, {a, b}, [a, b, y]() mutable {
      const auto dy = y.grad();
      if (a.requires_grad()) kernels::axpy<T>(dy.size(), T{1}, dy.data(), a.grad().data());
      if (b.requires_grad()) kernels::axpy<T>(dy.size(), T{1}, dy.data(), b.grad().data());
    });
  }
  return y;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  const bool tracked = tape.tracks({&a, &b});
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor<T> y = Tensor<T>::make_result(a.shape(), std::move(out), tracked);
  if (tracked) {
    tape.record("mul", y, {a, b}, [a, b, y]() mutable {
      const auto dy = y.grad();
      if (a.requires_grad()) {
        auto da = a.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * b[i];
      }
      if (b.requires_grad()) {
        auto db = b.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * a[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor) {
  const bool tracked = tape.tracks({&x});
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  Tensor<T> y = Tensor<T>::make_result(x.shape(), std::move(out), tracked);
  if (tracked) {
    tape.record("scale", y, {x}, [x, y, factor]() mutable {
      kernels::axpy<T>(x.size(), factor, y.grad().data(), x.grad().data());
    });
  }
  return y;
}

template <typename T>
Tensor<T> add_row_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias) {
  require_matrix(x, "add_row_bias", "input");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (bias.size() != c)
    throw DimensionError("add_row_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  const bool tracked = tape.tracks({&x, &bias});
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bias[j];
  Tensor<T> y = Tensor<T>::make_result(x.shape(), std::move(out), tracked);
  if (tracked) {
    tape.record("add_row_bias", y, {x, bias}, [x, bias, y, r, c]() mutable {
      const T* dy = y.grad().data();
      if (x.requires_grad()) kernels::axpy<T>(r * c, T{1}, dy, x.grad().data());
      if (bias.requires_grad())
        for (std::size_t i = 0; i < r; ++i) kernels::axpy<T>(c, T{1}, dy + i * c, bias.grad().data());
    });
  }
  return y;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  const bool tracked = tape.tracks({&x});
  T acc{0};
  for (T v : x.data()) acc += v;
  Tensor<T> y = Tensor<T>::make_result({}, {acc}, tracked);
  if (tracked) {
    tape.record("sum", y, {x}, [x, y]() mutable {
      const T g = y.grad()[0];
      for (T& v : x.grad()) v += g;
    });
  }
  return y;
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x) {
  return scale(tape, sum(tape, x), T{1} / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> weighted_sum(Tape<T>& tape, std::span<const Tensor<T>> terms, std::span<const T> weights) {
  if (terms.size() != weights.size())
    throw ContractError("weighted_sum: " + std::to_string(terms.size()) + " terms but " +
                        std::to_string(weights.size()) + " weights");
  T acc{0};
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].size() != 1) throw DimensionError("weighted_sum: terms must be scalars");
    acc += weights[i] * terms[i].item();
  }
  const bool tracked = tape.tracks(terms);
  Tensor<T> y = Tensor<T>::make_result({}, {acc}, tracked);
  if (tracked) {
    std::vector<Tensor<T>> ins(terms.begin(), terms.end());
    std::vector<T> w(weights.begin(), weights.end());
    tape.record("weighted_sum", y, ins, [ins, w, y]() mutable {
      const T g = y.grad()[0];
      for (std::size_t i = 0; i < ins.size(); ++i)
        if (ins[i].requires_grad()) ins[i].grad()[0] += w[i] * g;
    });
  }
  return y;
}

namespace {

struct ConvGeometry {
  std::size_t batch, n, n_out, k, stride, pad_left;

  // Output rows [lo, hi) whose tap t reads a real (unpadded) input row.
  std::pair<std::size_t, std::size_t> valid(std::size_t t) const {
    // input index = o*stride + t - pad_left must lie in [0, n)
    std::size_t lo = 0;
    if (t < pad_left) lo = (pad_left - t + stride - 1) / stride;
    if (n + pad_left <= t) return {0, 0};
    const std::size_t hi_excl = (n + pad_left - t - 1) / stride + 1;
    const std::size_t hi = std::min(hi_excl, n_out);
    return lo < hi ? std::pair{lo, hi} : std::pair{std::size_t{0}, std::size_t{0}};
  }
};

template <typename T>
ConvGeometry conv_geometry(const char* op, const Tensor<T>& input, std::size_t k, std::size_t stride,
                           std::size_t pad_left, std::size_t pad_right, std::size_t batch) {
  if (stride == 0) throw ConfigError(std::string(op) + ": stride must be positive");
  if (batch == 0 || input.shape()[0] % batch)
    throw DimensionError(std::string(op) + ": batch " + std::to_string(batch) + " does not divide " +
                         shape_str(input.shape()));
  const std::size_t n = input.shape()[0] / batch;
  const std::size_t padded = n + pad_left + pad_right;
  if (k == 0 || padded < k)
    throw DimensionError(std::string(op) + ": kernel length " + std::to_string(k) +
                         " exceeds padded input length " + std::to_string(padded));
  return {batch, n, (padded - k) / stride + 1, k, stride, pad_left};
}

}  // namespace

template <typename T>
Tensor<T> conv1d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad_left, std::size_t pad_right, std::size_t batch) {
  require_matrix(input, "conv1d", "input");
  if (kernel.rank() != 3) throw DimensionError("conv1d: kernel must be [k x c_in x c_out], got " + shape_str(kernel.shape()));
  const std::size_t cin = input.shape()[1];
  const std::size_t k = kernel.shape()[0], cout = kernel.shape()[2];
  if (kernel.shape()[1] != cin)
    throw DimensionError("conv1d: kernel " + shape_str(kernel.shape()) + " does not match input " +
                         shape_str(input.shape()));
  if (bias.size() != cout) throw DimensionError("conv1d: bias " + shape_str(bias.shape()) + " does not match c_out");
  const ConvGeometry g = conv_geometry("conv1d", input, k, stride, pad_left, pad_right, batch);
  const bool tracked = tape.tracks({&input, &kernel, &bias});

  std::vector<T> out(batch * g.n_out * cout);
  for (std::size_t o = 0; o < batch * g.n_out; ++o)
    std::copy(bias.data().begin(), bias.data().end(), out.begin() + static_cast<std::ptrdiff_t>(o * cout));
  for (std::size_t s = 0; s < batch; ++s) {
    const T* xs = input.data().data() + s * g.n * cin;
    T* ys = out.data() + s * g.n_out * cout;
    for (std::size_t t = 0; t < k; ++t) {
      const auto [lo, hi] = g.valid(t);
      if (lo >= hi) continue;
      const T* x0 = xs + (lo * stride + t - pad_left) * cin;
      kernels::gemm<T>(hi - lo, cout, cin, x0, stride * cin, kernel.data().data() + t * cin * cout, cout,
                       ys + lo * cout, cout, true);
    }
  }
  Tensor<T> y = Tensor<T>::make_result({batch * g.n_out, cout}, std::move(out), tracked);
  if (tracked) {
    tape.record("conv1d", y, {input, kernel, bias}, [input, kernel, bias, y, g, cin, cout]() mutable {
      std::vector<T> tmp;
      for (std::size_t s = 0; s < g.batch; ++s) {
        const T* dys = y.grad().data() + s * g.n_out * cout;
        const T* xs = input.data().data() + s * g.n * cin;
        for (std::size_t t = 0; t < g.k; ++t) {
          const auto [lo, hi] = g.valid(t);
          if (lo >= hi) continue;
          const std::size_t cnt = hi - lo;
          const std::size_t row0 = lo * g.stride + t - g.pad_left;
          const T* wt = kernel.data().data() + t * cin * cout;
          if (input.requires_grad()) {
            tmp.resize(cout * cin);
            transpose_into(wt, cin, cout, tmp.data());
            kernels::gemm<T>(cnt, cin, cout, dys + lo * cout, cout, tmp.data(), cin,
                             input.grad().data() + s * g.n * cin + row0 * cin, g.stride * cin, true);
          }
          if (kernel.requires_grad()) {
            // dW_t += X_rows^T * dY_rows
            tmp.resize(cin * cnt);
            for (std::size_t i = 0; i < cnt; ++i)
              for (std::size_t c = 0; c < cin; ++c) tmp[c * cnt + i] = xs[(row0 + i * g.stride) * cin + c];
            kernels::gemm<T>(cin, cout, cnt, tmp.data(), cnt, dys + lo * cout, cout,
                             kernel.grad().data() + t * cin * cout, cout, true);
          }
        }
        if (bias.requires_grad())
          for (std::size_t o = 0; o < g.n_out; ++o)
            kernels::axpy<T>(cout, T{1}, dys + o * cout, bias.grad().data());
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> depthwise_conv1d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& kernel,
                           const Tensor<T>& bias, std::size_t stride, std::size_t pad_left,
                           std::size_t pad_right, std::size_t batch) {
  require_matrix(input, "depthwise_conv1d", "input");
  require_matrix(kernel, "depthwise_conv1d", "kernel");
  const std::size_t c = input.shape()[1];
  const std::size_t k = kernel.shape()[0];
  if (kernel.shape()[1] != c || bias.size() != c)
    throw DimensionError("depthwise_conv1d: kernel " + shape_str(kernel.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match input " + shape_str(input.shape()));
  const ConvGeometry g = conv_geometry("depthwise_conv1d", input, k, stride, pad_left, pad_right, batch);
  const bool tracked = tape.tracks({&input, &kernel, &bias});

  std::vector<T> out(batch * g.n_out * c);
  for (std::size_t s = 0; s < batch; ++s) {
    const T* xs = input.data().data() + s * g.n * c;
    T* ys = out.data() + s * g.n_out * c;
    for (std::size_t o = 0; o < g.n_out; ++o)
      for (std::size_t ch = 0; ch < c; ++ch) ys[o * c + ch] = bias[ch];
    for (std::size_t t = 0; t < k; ++t) {
      const auto [lo, hi] = g.valid(t);
      const T* w = kernel.data().data() + t * c;
      for (std::size_t o = lo; o < hi; ++o) {
        const T* xr = xs + (o * stride + t - pad_left) * c;
        T* yr = ys + o * c;
        for (std::size_t ch = 0; ch < c; ++ch) yr[ch] += xr[ch] * w[ch];
      }
    }
  }
  Tensor<T> y = Tensor<T>::make_result({batch * g.n_out, c}, std::move(out), tracked);
  if (tracked) {
    tape.record("depthwise_conv1d", y, {input, kernel, bias}, [input, kernel, bias, y, g, c]() mutable {
      for (std::size_t s = 0; s < g.batch; ++s) {
        const T* dys = y.grad().data() + s * g.n_out * c;
        const T* xs = input.data().data() + s * g.n * c;
        for (std::size_t t = 0; t < g.k; ++t) {
          const auto [lo, hi] = g.valid(t);
          const T* w = kernel.data().data() + t * c;
          for (std::size_t o = lo; o < hi; ++o) {
            const std::size_t row = o * g.stride + t - g.pad_left;
            const T* dyr = dys + o * c;
            if (input.requires_grad()) {
              T* dxr = input.grad().data() + (s * g.n + row) * c;
              for (std::size_t ch = 0; ch < c; ++ch) dxr[ch] += dyr[ch] * w[ch];
            }
            if (kernel.requires_grad()) {
              T* dw = kernel.grad().data() + t * c;
              const T* xr = xs + row * c;
              for (std::size_t ch = 0; ch < c; ++ch) dw[ch] += dyr[ch] * xr[ch];
            }
          }
        }
        if (bias.requires_grad())
          for (std::size_t o = 0; o < g.n_out; ++o) kernels::axpy<T>(c, T{1}, dys + o * c, bias.grad().data());
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> softmax_rows(Tape<T>& tape, const Tensor<T>& m) {
  require_matrix(m, "softmax_rows", "input");
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  const bool tracked = tape.tracks({&m});
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = m.data().data() + i * c;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      if (!std::isfinite(row[j])) throw ContractError("softmax_rows: non-finite input");
      mx = std::max(mx, row[j]);
    }
    T total{0};
    T* o = out.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(row[j] - mx);
      total += o[j];
    }
    const T inv = T{1} / total;
    for (std::size_t j = 0; j < c; ++j) o[j] *= inv;
  }
  Tensor<T> y = Tensor<T>::make_result(m.shape(), std::move(out), tracked);
  if (tracked) {
    tape.record("softmax_rows", y, {m}, [m, y, r, c]() mutable {
      for (std::size_t i = 0; i < r; ++i) {
        const T* yr = y.data().data() + i * c;
        const T* dyr = y.grad().data() + i * c;
        T* dx = m.grad().data() + i * c;
        T inner{0};
        for (std::size_t j = 0; j < c; ++j) inner += dyr[j] * yr[j];
        for (std::size_t j = 0; j < c; ++j) dx[j] += yr[j] * (dyr[j] - inner);
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require_matrix(x, "layer_norm", "input");
  const std::size_t r = x.shape()[0], d = x.shape()[1];
  if (d < 2) throw DimensionError("layer_norm: feature dimension must be at least 2, got " + shape_str(x.shape()));
  if (gain.size() != d || bias.size() != d)
    throw DimensionError("layer_norm: gain/bias must have length " + std::to_string(d));
  const bool tracked = tape.tracks({&x, &gain, &bias});
  std::vector<T> out(r * d), xhat(r * d), rstd(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = x.data().data() + i * d;
    T mu{0};
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    rstd[i] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mu) * rstd[i];
      out[i * d + j] = xhat[i * d + j] * gain[j] + bias[j];
    }
  }
  Tensor<T> y = Tensor<T>::make_result(x.shape(), std::move(out), tracked);
  if (tracked) {
    tape.record("layer_norm", y, {x, gain, bias},
                [x, gain, bias, y, xhat = std::move(xhat), rstd = std::move(rstd), r, d]() mutable {
                  std::vector<T> dxhat(d);
                  for (std::size_t i = 0; i < r; ++i) {
                    const T* dyr = y.grad().data() + i * d;
                    const T* xh = xhat.data() + i * d;
                    if (gain.requires_grad())
                      for (std::size_t j = 0; j < d; ++j) gain.grad()[j] += dyr[j] * xh[j];
                    if (bias.requires_grad())
                      for (std::size_t j = 0; j < d; ++j) bias.grad()[j] += dyr[j];
                    if (!x.requires_grad()) continue;
                    T m1{0}, m2{0};
                    for (std::size_t j = 0; j < d; ++j) {
                      dxhat[j] = dyr[j] * gain[j];
                      m1 += dxhat[j];
                      m2 += dxhat[j] * xh[j];
                    }
                    m1 /= static_cast<T>(d);
                    m2 /= static_cast<T>(d);
                    T* dx = x.grad().data() + i * d;
                    for (std::size_t j = 0; j < d; ++j) dx[j] += rstd[i] * (dxhat[j] - m1 - xh[j] * m2);
                  }
                });
  }
  return y;
}

template <typename T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& x) {
  const bool tracked = tape.tracks({&x});
  std::vector<T> out(x.size());
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
  Tensor<T> y = Tensor<T>::make_result(x.shape(), std::move(out), tracked);
  if (tracked) {
    tape.record("gelu", y, {x}, [x, y]() mutable {
      constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
      constexpr T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
      auto dx = x.grad();
      const auto dy = y.grad();
      for (std::size_t i = 0; i < dx.size(); ++i) {
        const T v = x[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        dx[i] += dy[i] * (cdf + v * pdf);
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x) {
  const bool tracked = tape.tracks({&x});
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x[i];
    if (v >= T{0}) {
      out[i] = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T{1} + e);
    }
  }
  Tensor<T> y = Tensor<T>::make_result(x.shape(), std::move(out), tracked);
  if (tracked) {
    tape.record("sigmoid", y, {x}, [x, y]() mutable {
      auto dx = x.grad();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += y.grad()[i] * y[i] * (T{1} - y[i]);
    });
  }
  return y;
}

template <typename T>
Tensor<T> concat_cols(Tape<T>& tape, std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols", "part");
    if (p.shape()[0] != r)
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    total += p.shape()[1];
  }
  const bool tracked = tape.tracks(parts);
  std::vector<T> out(r * total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.shape()[1];
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(p.data().data() + i * c, c, out.data() + i * total + off);
    off += c;
  }
  Tensor<T> y = Tensor<T>::make_result({r, total}, std::move(out), tracked);
  if (tracked) {
    std::vector<Tensor<T>> ins(parts.begin(), parts.end());
    tape.record("concat_cols", y, ins, [ins, y, r, total]() mutable {
      std::size_t off = 0;
      for (auto& p : ins) {
        const std::size_t c = p.shape()[1];
        if (p.requires_grad())
          for (std::size_t i = 0; i < r; ++i)
            kernels::axpy<T>(c, T{1}, y.grad().data() + i * total + off, p.grad().data() + i * c);
        off += c;
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> slice_cols(Tape<T>& tape, const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_cols", "input");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (count == 0 || begin + count > c)
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_str(x.shape()));
  const bool tracked = tape.tracks({&x});
  std::vector<T> out(r * count);
  for (std::size_t i = 0; i < r; ++i) std::copy_n(x.data().data() + i * c + begin, count, out.data() + i * count);
  Tensor<T> y = Tensor<T>::make_result({r, count}, std::move(out), tracked);
  if (tracked) {
    tape.record("slice_cols", y, {x}, [x, y, r, c, begin, count]() mutable {
      for (std::size_t i = 0; i < r; ++i)
        kernels::axpy<T>(count, T{1}, y.grad().data() + i * count, x.grad().data() + i * c + begin);
    });
  }
  return y;
}

template <typename T>
Tensor<T> segment_mean(Tape<T>& tape, const Tensor<T>& x, std::size_t batch) {
  require_matrix(x, "segment_mean", "input");
  if (batch == 0 || x.shape()[0] % batch)
    throw DimensionError("segment_mean: batch " + std::to_string(batch) + " does not divide " + shape_str(x.shape()));
  const std::size_t n = x.shape()[0] / batch, c = x.shape()[1];
  const T inv = T{1} / static_cast<T>(n);
  const bool tracked = tape.tracks({&x});
  std::vector<T> out(batch * c, T{0});
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t i = 0; i < n; ++i) kernels::axpy<T>(c, T{1}, x.data().data() + (s * n + i) * c, out.data() + s * c);
    for (std::size_t j = 0; j < c; ++j) out[s * c + j] *= inv;
  }
  Tensor<T> y = Tensor<T>::make_result({batch, c}, std::move(out), tracked);
  if (tracked) {
    tape.record("segment_mean", y, {x}, [x, y, batch, n, c, inv]() mutable {
      for (std::size_t s = 0; s < batch; ++s)
        for (std::size_t i = 0; i < n; ++i)
          kernels::axpy<T>(c, inv, y.grad().data() + s * c, x.grad().data() + (s * n + i) * c);
    });
  }
  return y;
}

template <typename T>
Tensor<T> replace_rows(Tape<T>& tape, const Tensor<T>& x, std::span<const std::uint8_t> mask,
                       const Tensor<T>& token) {
  require_matrix(x, "replace_rows", "input");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (mask.size() != r) throw DimensionError("replace_rows: mask length does not match row count");
  if (token.size() != c) throw DimensionError("replace_rows: token length does not match " + shape_str(x.shape()));
  const bool tracked = tape.tracks({&x, &token});
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < r; ++i)
    if (mask[i]) std::copy(token.data().begin(), token.data().end(), out.begin() + static_cast<std::ptrdiff_t>(i * c));
  Tensor<T> y = Tensor<T>::make_result(x.shape(), std::move(out), tracked);
  if (tracked) {
    std::vector<std::uint8_t> m(mask.begin(), mask.end());
    tape.record("replace_rows", y, {x, token}, [x, token, y, m, r, c]() mutable {
      for (std::size_t i = 0; i < r; ++i) {
        const T* dy = y.grad().data() + i * c;
        if (m[i]) {
          if (token.requires_grad()) kernels::axpy<T>(c, T{1}, dy, token.grad().data());
        } else if (x.requires_grad()) {
          kernels::axpy<T>(c, T{1}, dy, x.grad().data() + i * c);
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> select_rows(Tape<T>& tape, std::span<const std::uint8_t> mask, const Tensor<T>& when_set,
                      const Tensor<T>& when_clear) {
  require_same_shape(when_set, when_clear, "select_rows");
  require_matrix(when_set, "select_rows", "input");
  const std::size_t r = when_set.shape()[0], c = when_set.shape()[1];
  if (mask.size() != r) throw DimensionError("select_rows: mask length does not match row count");
  const bool tracked = tape.tracks({&when_set, &when_clear});
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const T* src = (mask[i] ? when_set : when_clear).data().data() + i * c;
    std::copy_n(src, c, out.data() + i * c);
  }
  Tensor<T> y = Tensor<T>::make_result(when_set.shape(), std::move(out), tracked);
  if (tracked) {
    std::vector<std::uint8_t> m(mask.begin(), mask.end());
    tape.record("select_rows", y, {when_set, when_clear}, [when_set, when_clear, y, m, r, c]() mutable {
      for (std::size_t i = 0; i < r; ++i) {
        const Tensor<T>& dst = m[i] ? when_set : when_clear;
        if (dst.requires_grad()) kernels::axpy<T>(c, T{1}, y.grad().data() + i * c, dst.grad().data() + i * c);
      }
    });
  }
  return y;
}

#define SINFORMER_INSTANTIATE_OPS(T)                                                                     \
  template void transpose_into<T>(const T*, std::size_t, std::size_t, T*);                               \
  template Tensor<T> matmul<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> batched_matmul<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, bool); \
  template Tensor<T> add<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale<T>(Tape<T>&, const Tensor<T>&, T);                                            \
  template Tensor<T> add_row_bias<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> sum<T>(Tape<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> mean<T>(Tape<T>&, const Tensor<T>&);                                                \
  template Tensor<T> weighted_sum<T>(Tape<T>&, std::span<const Tensor<T>>, std::span<const T>);          \
  template Tensor<T> conv1d<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                               std::size_t, std::size_t, std::size_t, std::size_t);                      \
  template Tensor<T> depthwise_conv1d<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                         std::size_t, std::size_t, std::size_t, std::size_t);            \
  template Tensor<T> softmax_rows<T>(Tape<T>&, const Tensor<T>&);                                        \
  template Tensor<T> layer_norm<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);   \
  template Tensor<T> gelu<T>(Tape<T>&, const Tensor<T>&);                                                \
  template Tensor<T> sigmoid<T>(Tape<T>&, const Tensor<T>&);                                             \
  template Tensor<T> concat_cols<T>(Tape<T>&, std::span<const Tensor<T>>);                               \
  template Tensor<T> slice_cols<T>(Tape<T>&, const Tensor<T>&, std::size_t, std::size_t);                \
  template Tensor<T> segment_mean<T>(Tape<T>&, const Tensor<T>&, std::size_t);                           \
  template Tensor<T> replace_rows<T>(Tape<T>&, const Tensor<T>&, std::span<const std::uint8_t>,          \
                                     const Tensor<T>&);                                                  \
  template Tensor<T> select_rows<T>(Tape<T>&, std::span<const std::uint8_t>, const Tensor<T>&,           \
                                    const Tensor<T>&);

SINFORMER_INSTANTIATE_OPS(float)
SINFORMER_INSTANTIATE_OPS(double)

}  // namespace sinformer::nn
