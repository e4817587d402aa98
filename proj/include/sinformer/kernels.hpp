#pragma once

// Dense inner-loop kernels with a portable scalar reference and AVX2/FMA
// variants. The active instruction set is picked once at startup from the
// CPU and the SINFORMER_SIMD environment variable ("scalar", "avx2", "auto")
// and can be overridden programmatically for equivalence testing.

#include <cstddef>
#include <string_view>

namespace sinformer::kernels {

enum class Isa { scalar, avx2 };

bool isa_supported(Isa isa) noexcept;
Isa active_isa() noexcept;
/// Throws ConfigError when the CPU lacks the requested instruction set.
void set_active_isa(Isa isa);
std::string_view isa_name(Isa isa) noexcept;

template <typename T>
struct KernelTable {
  // C[m x n] = A[m x k] * B[k x n] (row-major with leading dimensions),
  // or C += A * B when accumulate is set.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
               const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
  T (*dot)(const T* x, const T* y, std::size_t n);
  // y += alpha * x
  void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
};

template <typename T>
const KernelTable<T>& table(Isa isa);

template <typename T>
inline const KernelTable<T>& active() {
  return table<T>(active_isa());
}

template <typename T>
inline void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                 const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  active<T>().gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

template <typename T>
inline T dot(const T* x, const T* y, std::size_t n) {
  return active<T>().dot(x, y, n);
}

template <typename T>
inline void axpy(std::size_t n, T alpha, const T* x, T* y) {
  active<T>().axpy(n, alpha, x, y);
}

namespace detail {
template <typename T>
const KernelTable<T>& scalar_table();
template <typename T>
const KernelTable<T>& avx2_table();
}  // namespace detail

}  // namespace sinformer::kernels
