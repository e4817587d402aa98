// Compiled with -mavx2 -mfma. Only reached through the dispatch table after a
// runtime CPU check, so the rest of the library stays baseline x86-64.

#include "sinformer/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <cmath>

namespace sinformer::kernels::detail {
namespace {

template <typename T>
struct Lanes;

template <>
struct Lanes<float> {
  using reg = __m256;
  static constexpr std::size_t width = 8;
  static reg zero() { return _mm256_setzero_ps(); }
  static reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
  static reg bcast(const float* p) { return _mm256_broadcast_ss(p); }
  static reg set1(float v) { return _mm256_set1_ps(v); }
  static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
  static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
  static float hsum(reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    __m128 s = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, s);
    s = _mm_add_ss(s, sh);
    return _mm_cvtss_f32(s);
  }
};

template <>
struct Lanes<double> {
  using reg = __m256d;
  static constexpr std::size_t width = 4;
  static reg zero() { return _mm256_setzero_pd(); }
  static reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
  static reg bcast(const double* p) { return _mm256_broadcast_sd(p); }
  static reg set1(double v) { return _mm256_set1_pd(v); }
  static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
  static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
  static double hsum(reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d h = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, h));
  }
};

// Every output element is a single FMA chain over k in ascending order, so a
// row's result does not depend on which block or tail path computed it.
template <typename T, std::size_t Rows, std::size_t Vecs>
inline void micro_kernel(std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb,
                         T* c, std::size_t ldc, bool accumulate) {
  using L = Lanes<T>;
  typename L::reg acc[Rows][Vecs];
  for (std::size_t r = 0; r < Rows; ++r)
    for (std::size_t v = 0; v < Vecs; ++v)
      acc[r][v] = accumulate ? L::load(c + r * ldc + v * L::width) : L::zero();
  for (std::size_t p = 0; p < k; ++p) {
    typename L::reg bv[Vecs];
    for (std::size_t v = 0; v < Vecs; ++v) bv[v] = L::load(b + p * ldb + v * L::width);
    for (std::size_t r = 0; r < Rows; ++r) {
      const typename L::reg av = L::bcast(a + r * lda + p);
      for (std::size_t v = 0; v < Vecs; ++v) acc[r][v] = L::fma(av, bv[v], acc[r][v]);
    }
  }
  for (std::size_t r = 0; r < Rows; ++r)
    for (std::size_t v = 0; v < Vecs; ++v) L::store(c + r * ldc + v * L::width, acc[r][v]);
}

template <typename T, std::size_t Rows>
inline void row_block(std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
                      std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  constexpr std::size_t w = Lanes<T>::width;
  std::size_t j = 0;
  for (; j + 2 * w <= n; j += 2 * w)
    micro_kernel<T, Rows, 2>(k, a, lda, b + j, ldb, c + j, ldc, accumulate);
  for (; j + w <= n; j += w) micro_kernel<T, Rows, 1>(k, a, lda, b + j, ldb, c + j, ldc, accumulate);
  for (; j < n; ++j) {
    for (std::size_t r = 0; r < Rows; ++r) {
      T acc = accumulate ? c[r * ldc + j] : T{0};
      for (std::size_t p = 0; p < k; ++p) acc = std::fma(a[r * lda + p], b[p * ldb + j], acc);
      c[r * ldc + j] = acc;
    }
  }
}

template <typename T>
void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
               const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) row_block<T, 4>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
  for (; i < m; ++i) row_block<T, 1>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
}

template <typename T>
T dot_avx2(const T* x, const T* y, std::size_t n) {
  using L = Lanes<T>;
  constexpr std::size_t w = L::width;
  typename L::reg s0 = L::zero();
  typename L::reg s1 = L::zero();
  std::size_t i = 0;
  for (; i + 2 * w <= n; i += 2 * w) {
    s0 = L::fma(L::load(x + i), L::load(y + i), s0);
    s1 = L::fma(L::load(x + i + w), L::load(y + i + w), s1);
  }
  for (; i + w <= n; i += w) s0 = L::fma(L::load(x + i), L::load(y + i), s0);
  T acc = L::hsum(L::add(s0, s1));
  for (; i < n; ++i) acc = std::fma(x[i], y[i], acc);
  return acc;
}

template <typename T>
void axpy_avx2(std::size_t n, T alpha, const T* x, T* y) {
  using L = Lanes<T>;
  constexpr std::size_t w = L::width;
  const typename L::reg av = L::set1(alpha);
  std::size_t i = 0;
  for (; i + w <= n; i += w) L::store(y + i, L::fma(av, L::load(x + i), L::load(y + i)));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

}  // namespace

template <typename T>
const KernelTable<T>& avx2_table() {
  static const KernelTable<T> t{&gemm_avx2<T>, &dot_avx2<T>, &axpy_avx2<T>};
  return t;
}

template const KernelTable<float>& avx2_table<float>();
template const KernelTable<double>& avx2_table<double>();

}  // namespace sinformer::kernels::detail

#else

namespace sinformer::kernels::detail {

// Non-x86 builds fall back to the scalar table; isa_supported() reports false.
template <typename T>
const KernelTable<T>& avx2_table() {
  return scalar_table<T>();
}

template const KernelTable<float>& avx2_table<float>();
template const KernelTable<double>& avx2_table<double>();

}  // namespace sinformer::kernels::detail

#endif
