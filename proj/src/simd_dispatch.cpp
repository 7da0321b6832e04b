#include <atomic>
#include <cstdlib>
#include <string_view>

#include "busdensity/common.hpp"
#include "simd_impl.hpp"

namespace busdensity::simd {

namespace {

#define BUSDENSITY_KERNEL_TABLE(ns)                                                            \
  ns::minmax_u8, ns::count_le_u8, ns::sum_sumsq_u8, ns::nibble_histogram, ns::accumulate_u8,   \
      ns::minmax_f32, ns::normalize_f32, ns::dot_f64, ns::axpy_f64, ns::relu_f64,                 \
      ns::relu_backward_f64

const Kernels kScalar{Isa::scalar, "scalar", BUSDENSITY_KERNEL_TABLE(scalar)};

#if defined(BUSDENSITY_HAVE_AVX2)
const Kernels kAvx2{Isa::avx2, "avx2", BUSDENSITY_KERNEL_TABLE(avx2)};

bool cpu_has_avx2() noexcept {
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}
#endif

#undef BUSDENSITY_KERNEL_TABLE

const Kernels* initial_table() noexcept {
  const Kernels* best = avx2_kernels();
  if (const char* env = std::getenv("BUSDENSITY_SIMD")) {
    if (std::string_view(env) == "scalar") return &kScalar;
  }
  return best ? best : &kScalar;
}

std::atomic<const Kernels*>& table() noexcept {
  static std::atomic<const Kernels*> t{initial_table()};
  return t;
}

}  // namespace

const Kernels& scalar_kernels() noexcept { return kScalar; }

const Kernels* avx2_kernels() noexcept {
#if defined(BUSDENSITY_HAVE_AVX2)
  static const bool supported = cpu_has_avx2();
  return supported ? &kAvx2 : nullptr;
#else
  return nullptr;
#endif
}

const Kernels& active() noexcept { return *table().load(std::memory_order_relaxed); }

bool set_active(Isa isa) noexcept {
  const Kernels* k = isa == Isa::scalar ? &kScalar : avx2_kernels();
  if (!k) return false;
  table().store(k, std::memory_order_relaxed);
  return true;
}

std::string_view active_name() noexcept { return active().name; }

ByteRange minmax(std::span<const std::uint8_t> p) {
  if (p.empty()) throw Error("empty_input", "minmax of empty range");
  ByteRange r{};
  active().minmax_u8(p.data(), p.size(), &r.lo, &r.hi);
  return r;
}

std::uint64_t count_le(std::span<const std::uint8_t> p, std::uint8_t threshold) {
  return active().count_le_u8(p.data(), p.size(), threshold);
}

std::array<std::uint64_t, 16> nibble_histogram(std::span<const std::uint8_t> p) {
  std::array<std::uint64_t, 16> counts{};
  active().nibble_histogram(p.data(), p.size(), counts.data());
  return counts;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("shape_mismatch", "dot operands differ in length");
  return active().dot_f64(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw Error("shape_mismatch", "axpy operands differ in length");
  active().axpy_f64(alpha, x.data(), y.data(), x.size());
}

}  // namespace busdensity::simd
