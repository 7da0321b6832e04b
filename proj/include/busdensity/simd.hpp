#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

// Data-parallel inner loops used by imaging, features and classifiers.
//
// Every kernel has a scalar reference implementation and, on x86-64, an AVX2
// variant. The active table is chosen once at startup from CPU support and the
// BUSDENSITY_SIMD environment variable ("scalar" or "avx2"). Integer kernels
// are bit-identical across variants; floating-point reductions (dot) may
// differ in the last bits because the summation order differs.

namespace busdensity::simd {

enum class Isa { scalar, avx2 };

struct Kernels {
  Isa isa;
  const char* name;

  void (*minmax_u8)(const std::uint8_t* p, std::size_t n, std::uint8_t* lo, std::uint8_t* hi);
  std::uint64_t (*count_le_u8)(const std::uint8_t* p, std::size_t n, std::uint8_t threshold);
  void (*sum_sumsq_u8)(const std::uint8_t* p, std::size_t n, std::uint64_t* sum,
                       std::uint64_t* sumsq);
  /// counts[k] += number of bytes with (p >> 4) == k.
  void (*nibble_histogram)(const std::uint8_t* p, std::size_t n, std::uint64_t* counts);
  /// sums[i] += row[i] for i < n.
  void (*accumulate_u8)(const std::uint8_t* row, std::size_t n, std::uint32_t* sums);

  void (*minmax_f32)(const float* p, std::size_t n, float* lo, float* hi);
  /// out[i] = (in[i] - offset) / range.
  void (*normalize_f32)(const float* in, std::size_t n, float offset, float range, float* out);

  double (*dot_f64)(const double* a, const double* b, std::size_t n);
  /// y += alpha * x.
  void (*axpy_f64)(double alpha, const double* x, double* y, std::size_t n);
  void (*relu_f64)(double* x, std::size_t n);
  /// grad[i] = activation[i] > 0 ? grad[i] : 0.
  void (*relu_backward_f64)(const double* activation, double* grad, std::size_t n);
};

const Kernels& scalar_kernels() noexcept;
/// nullptr when AVX2+FMA is not compiled in or not supported by this CPU.
const Kernels* avx2_kernels() noexcept;

const Kernels& active() noexcept;
/// Switches the process-wide table; returns false if the ISA is unavailable.
bool set_active(Isa isa) noexcept;
std::string_view active_name() noexcept;

// Span front ends over the active table.

struct ByteRange {
  std::uint8_t lo;
  std::uint8_t hi;
};

ByteRange minmax(std::span<const std::uint8_t> p);
std::uint64_t count_le(std::span<const std::uint8_t> p, std::uint8_t threshold);
std::array<std::uint64_t, 16> nibble_histogram(std::span<const std::uint8_t> p);
double dot(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

}  // namespace busdensity::simd
