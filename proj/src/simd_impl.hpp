#pragma once

#include "busdensity/simd.hpp"

namespace busdensity::simd {

#define BUSDENSITY_DECLARE_KERNELS                                                              \
  void minmax_u8(const std::uint8_t* p, std::size_t n, std::uint8_t* lo, std::uint8_t* hi);     \
  std::uint64_t count_le_u8(const std::uint8_t* p, std::size_t n, std::uint8_t threshold);      \
  void sum_sumsq_u8(const std::uint8_t* p, std::size_t n, std::uint64_t* sum,                   \
                    std::uint64_t* sumsq);                                                      \
  void nibble_histogram(const std::uint8_t* p, std::size_t n, std::uint64_t* counts);           \
  void accumulate_u8(const std::uint8_t* row, std::size_t n, std::uint32_t* sums);              \
  void minmax_f32(const float* p, std::size_t n, float* lo, float* hi);                          \
  void normalize_f32(const float* in, std::size_t n, float offset, float range, float* out);    \
  double dot_f64(const double* a, const double* b, std::size_t n);                              \
  void axpy_f64(double alpha, const double* x, double* y, std::size_t n);                       \
  void relu_f64(double* x, std::size_t n);                                                      \
  void relu_backward_f64(const double* activation, double* grad, std::size_t n);

namespace scalar {
BUSDENSITY_DECLARE_KERNELS
}
#if defined(BUSDENSITY_HAVE_AVX2)
namespace avx2 {
BUSDENSITY_DECLARE_KERNELS
}
#endif

#undef BUSDENSITY_DECLARE_KERNELS

}  // namespace busdensity::simd
