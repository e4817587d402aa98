#include "sinformer/model.hpp"

#include <cmath>
#include <string>

#include "sinformer/errors.hpp"

namespace sinformer::model {

std::string conv_mode_name(ConvMode mode) { return mode == ConvMode::full ? "full" : "depthwise"; }

ConvMode parse_conv_mode(const std::string& name) {
  if (name == "depthwise") return ConvMode::depthwise;
  if (name == "full") return ConvMode::full;
  throw ConfigError("conv_mode must be 'depthwise' or 'full', got '" + name + "'");
}

void ModelConfig::validate() const {
  if (m == 0 || l == 0) throw ConfigError("m and l must be positive");
  if (m % l != 0)
    throw ConfigError("m = " + std::to_string(m) + " is not divisible by patch length l = " + std::to_string(l));
  if (d < 2) throw ConfigError("d must be at least 2");
  if (L == 0) throw ConfigError("L must be at least 1");
  if (scales.empty()) throw ConfigError("scales must list at least one DSA head");
  for (std::size_t s : scales)
    if (s == 0 || n() % s != 0)
      throw ConfigError("scale " + std::to_string(s) + " does not divide token count n = " + std::to_string(n()));
  if (d_k == 0 || d_k % 2 != 0) throw ConfigError("d_k must be a positive even number (RoPE pairs)");
  if (d_f == 0) throw ConfigError("d_f must be positive");
  if (K < 2) throw ConfigError("K must be at least 2");
  if (!(rope_base > 1.0)) throw ConfigError("rope_base must exceed 1");
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.m = 400;
  c.l = 50;
  c.d = 64;
  c.L = 2;
  c.scales = {1, 2, 4, 8};
  c.d_k = 16;
  c.d_f = 128;
  c.K = 4;
  return c;
}

namespace {

enum class Fill { xavier, zero, one, normal };

struct Slot {
  Shape shape;
  Fill fill;
  std::size_t fan_in = 0, fan_out = 0;
  bool trainable = true;
};

Shape conv_shape(const ModelConfig& c, std::size_t s) {
  return c.conv_mode == ConvMode::full ? Shape{s, c.d_k, c.d_k} : Shape{s, c.d_k};
}

std::size_t conv_fan(const ModelConfig& c, std::size_t s) {
  return c.conv_mode == ConvMode::full ? s * c.d_k : s;
}

// Visits every tensor slot in declared order. P may be const.
template <typename P, typename F>
void visit(P& p, F&& f) {
  const auto& c = p.cfg;
  const Slot bias_dk{{c.d_k}, Fill::zero};
  f("w_d", p.w_d, Slot{{c.l, c.d}, Fill::xavier, c.l, c.d});
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    auto& blk = p.blocks[b];
    const std::string pre = "blocks." + std::to_string(b) + ".";
    f(pre + "ln1.gain", blk.ln1_gain, Slot{{c.d}, Fill::one});
    f(pre + "ln1.bias", blk.ln1_bias, Slot{{c.d}, Fill::zero});
    for (std::size_t i = 0; i < blk.heads.size(); ++i) {
      auto& h = blk.heads[i];
      const std::size_t s = c.scales[i];
      const std::string hp = pre + "heads." + std::to_string(i) + ".";
      const Slot proj{{c.d, c.d_k}, Fill::xavier, c.d, c.d_k};
      const Slot conv{conv_shape(c, s), Fill::xavier, conv_fan(c, s), conv_fan(c, s)};
      f(hp + "w_q", h.w_q, proj);
      f(hp + "w_k", h.w_k, proj);
      f(hp + "w_v", h.w_v, proj);
      f(hp + "conv_q", h.conv_q, conv);
      f(hp + "conv_q_bias", h.conv_q_bias, bias_dk);
      f(hp + "conv_k", h.conv_k, conv);
      f(hp + "conv_k_bias", h.conv_k_bias, bias_dk);
      f(hp + "conv_v", h.conv_v, conv);
      f(hp + "conv_v_bias", h.conv_v_bias, bias_dk);
    }
    f(pre + "w_o", blk.w_o, Slot{{c.h() * c.d_k, c.d}, Fill::xavier, c.h() * c.d_k, c.d});
    f(pre + "ln2.gain", blk.ln2_gain, Slot{{c.d}, Fill::one});
    f(pre + "ln2.bias", blk.ln2_bias, Slot{{c.d}, Fill::zero});
    f(pre + "ffn.w1", blk.w1, Slot{{c.d, c.d_f}, Fill::xavier, c.d, c.d_f});
    f(pre + "ffn.b1", blk.b1, Slot{{c.d_f}, Fill::zero});
    f(pre + "ffn.w2", blk.w2, Slot{{c.d_f, c.d}, Fill::xavier, c.d_f, c.d});
    f(pre + "ffn.b2", blk.b2, Slot{{c.d}, Fill::zero});
  }
  f("head.w_fc", p.w_fc, Slot{{c.d, c.K}, Fill::xavier, c.d, c.K});
  f("head.b_fc", p.b_fc, Slot{{c.K}, Fill::zero});
  f("w_r", p.w_r, Slot{{c.d, c.l}, Fill::xavier, c.d, c.l});
  f("mask_token", p.mask_token, Slot{{c.d}, Fill::normal, 0, 0, false});
  f("aux.w1", p.aux_w1, Slot{{c.l, c.d_f}, Fill::xavier, c.l, c.d_f});
  f("aux.b1", p.aux_b1, Slot{{c.d_f}, Fill::zero});
  f("aux.w2", p.aux_w2, Slot{{c.d_f, 1}, Fill::xavier, c.d_f, 1});
  f("aux.b2", p.aux_b2, Slot{{1}, Fill::zero});
}

template <typename T>
ModelParams<T> allocate(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams<T> p;
  p.cfg = cfg;
  p.blocks.resize(cfg.L);
  for (auto& b : p.blocks) b.heads.resize(cfg.h());
  visit(p, [](const std::string&, Tensor<T>& t, const Slot& s) { t = Tensor<T>::zeros(s.shape, s.trainable); });
  return p;
}

template <typename T>
void fill(Tensor<T>& t, const Slot& s, Rng& rng) {
  auto data = t.data();
  switch (s.fill) {
    case Fill::zero:
      std::fill(data.begin(), data.end(), T{0});
      break;
    case Fill::one:
      std::fill(data.begin(), data.end(), T{1});
      break;
    case Fill::normal:
      for (auto& v : data) v = static_cast<T>(rng.normal());
      break;
    case Fill::xavier: {
      const double a = std::sqrt(6.0 / static_cast<double>(s.fan_in + s.fan_out));
      for (auto& v : data) v = static_cast<T>(rng.uniform(-a, a));
      break;
    }
  }
}

}  // namespace

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  auto p = allocate<T>(cfg);
  Rng rng(seed);
  visit(p, [&](const std::string&, Tensor<T>& t, const Slot& s) { fill(t, s, rng); });
  return p;
}

template <typename T>
std::vector<NamedTensor<T>> ModelParams<T>::named() const {
  std::vector<NamedTensor<T>> out;
  visit(*this, [&](const std::string& name, const Tensor<T>& t, const Slot& s) {
    out.push_back({name, t, s.trainable});
  });
  return out;
}

template <typename T>
std::vector<Tensor<T>> ModelParams<T>::trainable() const {
  std::vector<Tensor<T>> out;
  for (auto& nt : named())
    if (nt.trainable) out.push_back(nt.tensor);
  return out;
}

template <typename T>
std::vector<std::string> ModelParams<T>::trainable_names() const {
  std::vector<std::string> out;
  for (auto& nt : named())
    if (nt.trainable) out.push_back(nt.name);
  return out;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  auto out = allocate<U>(cfg);
  const auto src = named();
  const auto dst = out.named();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto d = dst[i].tensor;
    const auto s = src[i].tensor.data();
    for (std::size_t j = 0; j < s.size(); ++j) d[j] = static_cast<U>(s[j]);
  }
  return out;
}

template <typename T>
void ModelParams<T>::reset_classifier(std::uint64_t seed) {
  Rng rng{seed, 0x636c6173ULL};
  fill(w_fc, Slot{{cfg.d, cfg.K}, Fill::xavier, cfg.d, cfg.K}, rng);
  fill(b_fc, Slot{{cfg.K}, Fill::zero}, rng);
}

std::uint64_t count_params(const ModelConfig& c) {
  c.validate();
  std::uint64_t per_block = 2 * c.d;  // LN1
  for (std::size_t s : c.scales) {
    const std::uint64_t conv = c.conv_mode == ConvMode::full ? s * c.d_k * c.d_k : s * c.d_k;
    per_block += 3 * c.d * c.d_k + 3 * conv + 3 * c.d_k;
  }
  per_block += c.h() * c.d_k * c.d;                        // W_O
  per_block += 2 * c.d;                                    // LN2
  per_block += c.d * c.d_f + c.d_f + c.d_f * c.d + c.d;    // FFN
  const std::uint64_t embed = c.l * c.d;
  const std::uint64_t cls = c.d * c.K + c.K;
  const std::uint64_t recon = c.d * c.l;
  const std::uint64_t aux = c.l * c.d_f + c.d_f + c.d_f + 1;
  return embed + c.L * per_block + cls + recon + aux;
}

template <typename T>
Tensor<T> to_patches(const Tensor<T>& records, const ModelConfig& cfg) {
  cfg.validate();
  if (records.rank() != 2 || records.cols() != cfg.m)
    throw DimensionError("records must be [B x " + std::to_string(cfg.m) + "], got " + shape_str(records.shape()));
  return records.reshaped({records.rows() * cfg.n(), cfg.l});
}

template <typename T>
Embedding<T> embed_patches(Tape<T>& tape, const ModelParams<T>& p, const Tensor<T>& records) {
  Embedding<T> e;
  e.patches = to_patches(records, p.cfg);
  e.tokens = nn::matmul(tape, e.patches, p.w_d);
  return e;
}

template <typename T>
Tensor<T> rope(Tape<T>& tape, const Tensor<T>& x, std::span<const double> positions, double base) {
  if (x.rank() != 2) throw DimensionError("rope: expected a matrix, got " + shape_str(x.shape()));
  const std::size_t rows = x.rows(), c = x.cols(), n = positions.size();
  if (c % 2 != 0) throw ConfigError("rope: width " + std::to_string(c) + " is odd");
  if (n == 0 || rows % n != 0)
    throw DimensionError("rope: " + std::to_string(rows) + " rows do not tile " + std::to_string(n) + " positions");
  const std::size_t half = c / 2;
  std::vector<T> cs(n * half), sn(n * half);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < half; ++j) {
      const double w = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(c));
      const double a = positions[r] * w;
      cs[r * half + j] = static_cast<T>(std::cos(a));
      sn[r * half + j] = static_cast<T>(std::sin(a));
    }
  const bool tracked = tape.tracks({&x});
  std::vector<T> out(rows * c);
  const T* xd = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* cr = cs.data() + (r % n) * half;
    const T* sr = sn.data() + (r % n) * half;
    for (std::size_t j = 0; j < half; ++j) {
      const T x1 = xd[r * c + 2 * j], x2 = xd[r * c + 2 * j + 1];
      out[r * c + 2 * j] = x1 * cr[j] - x2 * sr[j];
      out[r * c + 2 * j + 1] = x1 * sr[j] + x2 * cr[j];
    }
  }
  auto y = Tensor<T>::make_result(x.shape(), std::move(out), tracked);
  if (tracked) {
    tape.record("rope", y, {x}, [x, y, cs = std::move(cs), sn = std::move(sn), rows, c, n, half]() {
      const T* dy = y.grad().data();
      T* dx = x.grad().data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* cr = cs.data() + (r % n) * half;
        const T* sr = sn.data() + (r % n) * half;
        for (std::size_t j = 0; j < half; ++j) {
          const T g1 = dy[r * c + 2 * j], g2 = dy[r * c + 2 * j + 1];
          dx[r * c + 2 * j] += g1 * cr[j] + g2 * sr[j];
          dx[r * c + 2 * j + 1] += -g1 * sr[j] + g2 * cr[j];
        }
      }
    });
  }
  return y;
}

namespace {

template <typename T>
Tensor<T> head_conv(Tape<T>& tape, const ModelConfig& cfg, const Tensor<T>& x, const Tensor<T>& kernel,
                    const Tensor<T>& bias, std::size_t stride, std::size_t pl, std::size_t pr, std::size_t batch) {
  if (cfg.conv_mode == ConvMode::full) return nn::conv1d(tape, x, kernel, bias, stride, pl, pr, batch);
  return nn::depthwise_conv1d(tape, x, kernel, bias, stride, pl, pr, batch);
}

}  // namespace

template <typename T>
Tensor<T> dsa_core(Tape<T>& tape, const DsaParams<T>& head, const Tensor<T>& q, const Tensor<T>& k,
                   const Tensor<T>& v, std::size_t s, const ModelConfig& cfg, std::size_t batch,
                   AttentionProbe<T>* probe) {
  const std::size_t n = cfg.n();
  if (s == 0 || n % s != 0)
    throw ConfigError("scale " + std::to_string(s) + " does not divide token count n = " + std::to_string(n));
  const std::size_t pl = (s - 1) / 2, pr = s - 1 - pl;
  const auto qc = head_conv(tape, cfg, q, head.conv_q, head.conv_q_bias, 1, pl, pr, batch);
  const auto kc = head_conv(tape, cfg, k, head.conv_k, head.conv_k_bias, s, 0, 0, batch);
  const auto vc = head_conv(tape, cfg, v, head.conv_v, head.conv_v_bias, s, 0, 0, batch);

  const double off = probe ? probe->position_offset : 0.0;
  std::vector<double> pos_q(n), pos_k(n / s);
  for (std::size_t i = 0; i < n; ++i) pos_q[i] = static_cast<double>(i) + off;
  for (std::size_t i = 0; i < n / s; ++i)
    pos_k[i] = static_cast<double>(i * s) + static_cast<double>(s - 1) / 2.0 + off;

  const auto qr = nn::scale(tape, rope(tape, qc, pos_q, cfg.rope_base),
                            static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.d_k))));
  const auto kr = rope(tape, kc, pos_k, cfg.rope_base);
  const auto logits = nn::batched_matmul(tape, qr, kr, batch, true);
  if (probe && probe->current_block == probe->capture_block) probe->logits.push_back(logits);
  const auto attn = nn::softmax_rows(tape, logits);
  return nn::batched_matmul(tape, attn, vc, batch, false);
}

template <typename T>
Tensor<T> dsa(Tape<T>& tape, const DsaParams<T>& head, const Tensor<T>& x_norm, std::size_t s,
              const ModelConfig& cfg, std::size_t batch, AttentionProbe<T>* probe) {
  const auto q = nn::matmul(tape, x_norm, head.w_q);
  const auto k = nn::matmul(tape, x_norm, head.w_k);
  const auto v = nn::matmul(tape, x_norm, head.w_v);
  return dsa_core(tape, head, q, k, v, s, cfg, batch, probe);
}

template <typename T>
Tensor<T> isa(Tape<T>& tape, const BlockParams<T>& blk, const Tensor<T>& x, const ModelConfig& cfg,
              std::size_t batch, AttentionProbe<T>* probe) {
  const std::size_t h = cfg.h(), dk = cfg.d_k;
  const auto xn = nn::layer_norm(tape, x, blk.ln1_gain, blk.ln1_bias);
  // Column layout of the fused projection: [Q_0..Q_{h-1} | K_0.. | V_0..].
  std::vector<Tensor<T>> w;
  w.reserve(3 * h);
  for (const auto& hd : blk.heads) w.push_back(hd.w_q);
  for (const auto& hd : blk.heads) w.push_back(hd.w_k);
  for (const auto& hd : blk.heads) w.push_back(hd.w_v);
  const auto qkv = nn::matmul(tape, xn, nn::concat_cols<T>(tape, w));
  std::vector<Tensor<T>> outs;
  outs.reserve(h);
  for (std::size_t i = 0; i < h; ++i) {
    const auto q = nn::slice_cols(tape, qkv, i * dk, dk);
    const auto k = nn::slice_cols(tape, qkv, (h + i) * dk, dk);
    const auto v = nn::slice_cols(tape, qkv, (2 * h + i) * dk, dk);
    outs.push_back(dsa_core(tape, blk.heads[i], q, k, v, cfg.scales[i], cfg, batch, probe));
  }
  return nn::matmul(tape, nn::concat_cols<T>(tape, outs), blk.w_o);
}

template <typename T>
Tensor<T> ffn(Tape<T>& tape, const BlockParams<T>& blk, const Tensor<T>& x) {
  const auto xn = nn::layer_norm(tape, x, blk.ln2_gain, blk.ln2_bias);
  const auto hid = nn::gelu(tape, nn::add_row_bias(tape, nn::matmul(tape, xn, blk.w1), blk.b1));
  return nn::add_row_bias(tape, nn::matmul(tape, hid, blk.w2), blk.b2);
}

template <typename T>
Tensor<T> encoder_block(Tape<T>& tape, const BlockParams<T>& blk, const Tensor<T>& x, const ModelConfig& cfg,
                        std::size_t batch, AttentionProbe<T>* probe) {
  const auto x1 = nn::add(tape, isa(tape, blk, x, cfg, batch, probe), x);
  return nn::add(tape, ffn(tape, blk, x1), x1);
}

template <typename T>
std::vector<Tensor<T>> encode(Tape<T>& tape, const ModelParams<T>& p, const Tensor<T>& tokens, std::size_t batch,
                              AttentionProbe<T>* probe) {
  if (tokens.rank() != 2 || tokens.rows() != batch * p.cfg.n() || tokens.cols() != p.cfg.d)
    throw DimensionError("encode: tokens must be [" + std::to_string(batch * p.cfg.n()) + " x " +
                         std::to_string(p.cfg.d) + "], got " + shape_str(tokens.shape()));
  std::vector<Tensor<T>> outs;
  outs.reserve(p.blocks.size());
  Tensor<T> x = tokens;
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    if (probe) probe->current_block = b;
    x = encoder_block(tape, p.blocks[b], x, p.cfg, batch, probe);
    outs.push_back(x);
  }
  return outs;
}

template <typename T>
ForwardCache<T> forward_classify(Tape<T>& tape, const ModelParams<T>& p, const Tensor<T>& records,
                                 AttentionProbe<T>* probe) {
  ForwardCache<T> c;
  const std::size_t batch = records.rows();
  auto emb = embed_patches(tape, p, records);
  c.patches = emb.patches;
  c.block_outputs = encode(tape, p, emb.tokens, batch, probe);
  c.pooled = nn::segment_mean(tape, c.final_tokens(), batch);
  c.logits = nn::add_row_bias(tape, nn::matmul(tape, c.pooled, p.w_fc), p.b_fc);
  c.probs = nn::softmax_rows(tape, c.logits);
  return c;
}

MaskDraw draw_mask(std::size_t n, std::size_t batch, double ratio, Rng& rng) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("mask_ratio must lie in (0, 1)");
  const auto count = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  if (count == 0 || count >= n)
    throw ConfigError("mask_ratio " + std::to_string(ratio) + " masks " + std::to_string(count) + " of " +
                      std::to_string(n) + " tokens (degenerate)");
  MaskDraw m;
  m.bits.assign(n * batch, 0);
  std::vector<std::size_t> idx(n);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < count; ++i) {
      std::swap(idx[i], idx[i + rng.below(n - i)]);
      m.bits[b * n + idx[i]] = 1;
    }
  }
  return m;
}

template <typename T>
Masked<T> mask_tokens(Tape<T>& tape, const Tensor<T>& tokens, double ratio, const Tensor<T>& mask_token,
                      std::size_t batch, Rng& rng) {
  if (batch == 0 || tokens.rows() % batch != 0)
    throw DimensionError("mask_tokens: rows do not split into " + std::to_string(batch) + " records");
  Masked<T> out;
  out.mask = draw_mask(tokens.rows() / batch, batch, ratio, rng);
  out.tokens = nn::replace_rows(tape, tokens, out.mask.bits, mask_token);
  return out;
}

template <typename T>
Tensor<T> reconstruct(Tape<T>& tape, const ModelParams<T>& p, const Tensor<T>& masked_tokens, std::size_t batch) {
  const auto enc = encode(tape, p, masked_tokens, batch);
  return nn::matmul(tape, enc.back(), p.w_r);
}

#define SINFORMER_INSTANTIATE_MODEL(T)                                                                          \
  template struct ModelParams<T>;                                                                               \
  template ModelParams<float> ModelParams<T>::cast<float>() const;                                              \
  template ModelParams<double> ModelParams<T>::cast<double>() const;                                            \
  template Tensor<T> to_patches(const Tensor<T>&, const ModelConfig&);                                          \
  template Embedding<T> embed_patches(Tape<T>&, const ModelParams<T>&, const Tensor<T>&);                       \
  template Tensor<T> rope(Tape<T>&, const Tensor<T>&, std::span<const double>, double);                         \
  template Tensor<T> dsa_core(Tape<T>&, const DsaParams<T>&, const Tensor<T>&, const Tensor<T>&,                \
                              const Tensor<T>&, std::size_t, const ModelConfig&, std::size_t, AttentionProbe<T>*); \
  template Tensor<T> dsa(Tape<T>&, const DsaParams<T>&, const Tensor<T>&, std::size_t, const ModelConfig&,      \
                         std::size_t, AttentionProbe<T>*);                                                      \
  template Tensor<T> isa(Tape<T>&, const BlockParams<T>&, const Tensor<T>&, const ModelConfig&, std::size_t,    \
                         AttentionProbe<T>*);                                                                   \
  template Tensor<T> ffn(Tape<T>&, const BlockParams<T>&, const Tensor<T>&);                                    \
  template Tensor<T> encoder_block(Tape<T>&, const BlockParams<T>&, const Tensor<T>&, const ModelConfig&,       \
                                   std::size_t, AttentionProbe<T>*);                                            \
  template std::vector<Tensor<T>> encode(Tape<T>&, const ModelParams<T>&, const Tensor<T>&, std::size_t,        \
                                         AttentionProbe<T>*);                                                   \
  template ForwardCache<T> forward_classify(Tape<T>&, const ModelParams<T>&, const Tensor<T>&,                  \
                                            AttentionProbe<T>*);                                                \
  template Masked<T> mask_tokens(Tape<T>&, const Tensor<T>&, double, const Tensor<T>&, std::size_t, Rng&);      \
  template Tensor<T> reconstruct(Tape<T>&, const ModelParams<T>&, const Tensor<T>&, std::size_t);

SINFORMER_INSTANTIATE_MODEL(float)
SINFORMER_INSTANTIATE_MODEL(double)

}  // namespace sinformer::model
