#include "simd_impl.hpp"

#include <algorithm>

namespace busdensity::simd::scalar {

void minmax_u8(const std::uint8_t* p, std::size_t n, std::uint8_t* lo, std::uint8_t* hi) {
  std::uint8_t mn = 255, mx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mn = std::min(mn, p[i]);
    mx = std::max(mx, p[i]);
  }
  *lo = mn;
  *hi = mx;
}

std::uint64_t count_le_u8(const std::uint8_t* p, std::size_t n, std::uint8_t threshold) {
  std::uint64_t c = 0;
  for (std::size_t i = 0; i < n; ++i) c += p[i] <= threshold;
  return c;
}

void sum_sumsq_u8(const std::uint8_t* p, std::size_t n, std::uint64_t* sum, std::uint64_t* sumsq) {
  std::uint64_t s = 0, s2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    s += p[i];
    s2 += static_cast<std::uint64_t>(p[i]) * p[i];
  }
  *sum = s;
  *sumsq = s2;
}

void nibble_histogram(const std::uint8_t* p, std::size_t n, std::uint64_t* counts) {
  for (std::size_t i = 0; i < n; ++i) ++counts[p[i] >> 4];
}

void accumulate_u8(const std::uint8_t* row, std::size_t n, std::uint32_t* sums) {
  for (std::size_t i = 0; i < n; ++i) sums[i] += row[i];
}

void minmax_f32(const float* p, std::size_t n, float* lo, float* hi) {
  float mn = p[0], mx = p[0];
  for (std::size_t i = 1; i < n; ++i) {
    mn = std::min(mn, p[i]);
    mx = std::max(mx, p[i]);
  }
  *lo = mn;
  *hi = mx;
}

void normalize_f32(const float* in, std::size_t n, float offset, float range, float* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = (in[i] - offset) / range;
}

double dot_f64(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void relu_f64(double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_f64(const double* activation, double* grad, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!(activation[i] > 0.0)) grad[i] = 0.0;
}

}  // namespace busdensity::simd::scalar
