// AVX2 + FMA kernels. Compiled with -mavx2 -mfma; only reached after the
// dispatcher has confirmed CPU support.

#include <immintrin.h>

#include <algorithm>

#include "simd_impl.hpp"

namespace busdensity::simd::avx2 {

namespace {

inline std::uint64_t hsum_epi64(__m256i v) {
  alignas(32) std::uint64_t lanes[4];
  _mm256_store_si256(reinterpret_cast<__m256i*>(lanes), v);
  return lanes[0] + lanes[1] + lanes[2] + lanes[3];
}

inline double hsum_pd(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// Byte counters saturate at 255 increments; flush before that.
constexpr std::size_t kByteFlush = 255;

}  // namespace

void minmax_u8(const std::uint8_t* p, std::size_t n, std::uint8_t* lo, std::uint8_t* hi) {
  std::size_t i = 0;
  std::uint8_t mn = 255, mx = 0;
  if (n >= 32) {
    __m256i vmin = _mm256_set1_epi8(static_cast<char>(0xFF));
    __m256i vmax = _mm256_setzero_si256();
    for (; i + 32 <= n; i += 32) {
      const __m256i v = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(p + i));
      vmin = _mm256_min_epu8(vmin, v);
      vmax = _mm256_max_epu8(vmax, v);
    }
    alignas(32) std::uint8_t a[32], b[32];
    _mm256_store_si256(reinterpret_cast<__m256i*>(a), vmin);
    _mm256_store_si256(reinterpret_cast<__m256i*>(b), vmax);
    for (int k = 0; k < 32; ++k) {
      mn = std::min(mn, a[k]);
      mx = std::max(mx, b[k]);
    }
  }
  for (; i < n; ++i) {
    mn = std::min(mn, p[i]);
    mx = std::max(mx, p[i]);
  }
  *lo = mn;
  *hi = mx;
}

std::uint64_t count_le_u8(const std::uint8_t* p, std::size_t n, std::uint8_t threshold) {
  const __m256i t = _mm256_set1_epi8(static_cast<char>(threshold));
  const __m256i zero = _mm256_setzero_si256();
  __m256i total = _mm256_setzero_si256();
  std::size_t i = 0;
  while (i + 32 <= n) {
    __m256i acc = _mm256_setzero_si256();
    for (std::size_t k = 0; k < kByteFlush && i + 32 <= n; ++k, i += 32) {
      const __m256i v = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(p + i));
      const __m256i le = _mm256_cmpeq_epi8(_mm256_min_epu8(v, t), v);
      acc = _mm256_sub_epi8(acc, le);
    }
    total = _mm256_add_epi64(total, _mm256_sad_epu8(acc, zero));
  }
  std::uint64_t c = hsum_epi64(total);
  for (; i < n; ++i) c += p[i] <= threshold;
  return c;
}

void sum_sumsq_u8(const std::uint8_t* p, std::size_t n, std::uint64_t* sum, std::uint64_t* sumsq) {
  const __m256i zero = _mm256_setzero_si256();
  __m256i vsum = _mm256_setzero_si256();
  __m256i vsq64 = _mm256_setzero_si256();
  std::size_t i = 0;
  // Each 32-byte step adds at most 4 * 65025 to a 32-bit lane.
  constexpr std::size_t kSqFlush = 8000;
  while (i + 32 <= n) {
    __m256i vsq32 = _mm256_setzero_si256();
    for (std::size_t k = 0; k < kSqFlush && i + 32 <= n; ++k, i += 32) {
      const __m256i v = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(p + i));
      vsum = _mm256_add_epi64(vsum, _mm256_sad_epu8(v, zero));
      const __m256i lo16 = _mm256_cvtepu8_epi16(_mm256_castsi256_si128(v));
      const __m256i hi16 = _mm256_cvtepu8_epi16(_mm256_extracti128_si256(v, 1));
      vsq32 = _mm256_add_epi32(vsq32, _mm256_madd_epi16(lo16, lo16));
      vsq32 = _mm256_add_epi32(vsq32, _mm256_madd_epi16(hi16, hi16));
    }
    vsq64 = _mm256_add_epi64(vsq64, _mm256_cvtepu32_epi64(_mm256_castsi256_si128(vsq32)));
    vsq64 = _mm256_add_epi64(vsq64, _mm256_cvtepu32_epi64(_mm256_extracti128_si256(vsq32, 1)));
  }
  std::uint64_t s = hsum_epi64(vsum);
  std::uint64_t s2 = hsum_epi64(vsq64);
  for (; i < n; ++i) {
    s += p[i];
    s2 += static_cast<std::uint64_t>(p[i]) * p[i];
  }
  *sum = s;
  *sumsq = s2;
}

void nibble_histogram(const std::uint8_t* p, std::size_t n, std::uint64_t* counts) {
  const __m256i low_nibble = _mm256_set1_epi8(0x0F);
  const __m256i zero = _mm256_setzero_si256();
  std::size_t i = 0;
  while (i + 32 <= n) {
    __m256i acc[16];
    for (auto& a : acc) a = _mm256_setzero_si256();
    for (std::size_t k = 0; k < kByteFlush && i + 32 <= n; ++k, i += 32) {
      const __m256i v = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(p + i));
      const __m256i bin = _mm256_and_si256(_mm256_srli_epi16(v, 4), low_nibble);
      for (int b = 0; b < 16; ++b)
        acc[b] = _mm256_sub_epi8(acc[b], _mm256_cmpeq_epi8(bin, _mm256_set1_epi8(static_cast<char>(b))));
    }
    for (int b = 0; b < 16; ++b) counts[b] += hsum_epi64(_mm256_sad_epu8(acc[b], zero));
  }
  for (; i < n; ++i) ++counts[p[i] >> 4];
}

void accumulate_u8(const std::uint8_t* row, std::size_t n, std::uint32_t* sums) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m128i bytes = _mm_loadl_epi64(reinterpret_cast<const __m128i*>(row + i));
    const __m256i wide = _mm256_cvtepu8_epi32(bytes);
    __m256i* dst = reinterpret_cast<__m256i*>(sums + i);
    _mm256_storeu_si256(dst, _mm256_add_epi32(_mm256_loadu_si256(dst), wide));
  }
  for (; i < n; ++i) sums[i] += row[i];
}

void minmax_f32(const float* p, std::size_t n, float* lo, float* hi) {
  float mn = p[0], mx = p[0];
  std::size_t i = 0;
  if (n >= 8) {
    __m256 vmin = _mm256_loadu_ps(p);
    __m256 vmax = vmin;
    for (i = 8; i + 8 <= n; i += 8) {
      const __m256 v = _mm256_loadu_ps(p + i);
      vmin = _mm256_min_ps(vmin, v);
      vmax = _mm256_max_ps(vmax, v);
    }
    alignas(32) float a[8], b[8];
    _mm256_store_ps(a, vmin);
    _mm256_store_ps(b, vmax);
    mn = a[0];
    mx = b[0];
    for (int k = 1; k < 8; ++k) {
      mn = std::min(mn, a[k]);
      mx = std::max(mx, b[k]);
    }
  }
  for (; i < n; ++i) {
    mn = std::min(mn, p[i]);
    mx = std::max(mx, p[i]);
  }
  *lo = mn;
  *hi = mx;
}

void normalize_f32(const float* in, std::size_t n, float offset, float range, float* out) {
  const __m256 o = _mm256_set1_ps(offset);
  const __m256 r = _mm256_set1_ps(range);
  std::size_t i = 0;
  // IEEE subtract and divide are exact-rounded, so this matches the scalar loop bit for bit.
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_div_ps(_mm256_sub_ps(_mm256_loadu_ps(in + i), o), r));
  for (; i < n; ++i) out[i] = (in[i] - offset) / range;
}

double dot_f64(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double s = hsum_pd(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  // mul + add rather than FMA keeps axpy bit-identical to the scalar loop.
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_mul_pd(a, _mm256_loadu_pd(x + i))));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void relu_f64(double* x, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    _mm256_storeu_pd(x + i, _mm256_and_pd(v, _mm256_cmp_pd(v, zero, _CMP_GT_OQ)));
  }
  for (; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_f64(const double* activation, double* grad, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(activation + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(grad + i, _mm256_and_pd(_mm256_loadu_pd(grad + i), mask));
  }
  for (; i < n; ++i)
    if (!(activation[i] > 0.0)) grad[i] = 0.0;
}

}  // namespace busdensity::simd::avx2
