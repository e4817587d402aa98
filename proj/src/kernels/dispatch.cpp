#include <atomic>
#include <cstdlib>
#include <string>

#include "sinformer/errors.hpp"
#include "sinformer/kernels.hpp"

namespace sinformer::kernels {
namespace {

bool cpu_has_avx2() noexcept {
#if (defined(__x86_64__) || defined(__i386__)) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() noexcept {
  const bool have = cpu_has_avx2();
  if (const char* env = std::getenv("SINFORMER_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Isa::scalar;
    if (v == "avx2" && have) return Isa::avx2;
  }
  return have ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

bool isa_supported(Isa isa) noexcept {
  if (isa == Isa::scalar) return true;
  static const bool have = cpu_has_avx2();
  return have;
}

Isa active_isa() noexcept { return current().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa))
    throw ConfigError("instruction set '" + std::string(isa_name(isa)) + "' is not supported by this CPU");
  current().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

template <typename T>
const KernelTable<T>& table(Isa isa) {
  return isa == Isa::avx2 ? detail::avx2_table<T>() : detail::scalar_table<T>();
}

template const KernelTable<float>& table<float>(Isa);
template const KernelTable<double>& table<double>(Isa);

}  // namespace sinformer::kernels
