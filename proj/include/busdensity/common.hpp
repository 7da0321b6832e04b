#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace busdensity {

/// Library version, recorded in model files and run metadata.
inline constexpr std::string_view kVersion = "1.0.0";

/// Error classes map onto CLI exit codes: validation → 1, runtime → 2.
enum class ErrorKind { validation, runtime };

/// Every failure raised by the library carries a stable machine-readable code
/// ("corrupt_raster", "quasi_separation", ...) alongside the human message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message, ErrorKind kind = ErrorKind::validation)
      : std::runtime_error(code + ": " + message), code_(std::move(code)), kind_(kind) {}

  const std::string& code() const noexcept { return code_; }
  ErrorKind kind() const noexcept { return kind_; }

 private:
  std::string code_;
  ErrorKind kind_;
};

/// BI-RADS mammographic density category. The integer value is the ordinal
/// code used for rank statistics and vote aggregation (A=0 ... D=3).
enum class Density : std::uint8_t { A = 0, B = 1, C = 2, D = 3 };

inline constexpr int kNumDensity = 4;
inline constexpr std::array<Density, kNumDensity> kAllDensities{Density::A, Density::B, Density::C,
                                                                Density::D};

constexpr int index_of(Density d) noexcept { return static_cast<int>(d); }
constexpr Density density_from_index(int i) { return static_cast<Density>(i); }

char density_code(Density d) noexcept;

/// Probability vector over (A, B, C, D).
struct DensityDistribution {
  std::array<double, kNumDensity> p{};

  static DensityDistribution uniform() noexcept { return {{0.25, 0.25, 0.25, 0.25}}; }
  static DensityDistribution one_hot(Density d) noexcept {
    DensityDistribution out;
    out.p[index_of(d)] = 1.0;
    return out;
  }

  double operator[](Density d) const noexcept { return p[index_of(d)]; }
  /// Most probable class; ties go to the lower class index.
  Density argmax() const noexcept;
  /// Entries in [0, 1] summing to 1 within tol.
  bool on_simplex(double tol = 1e-9) const noexcept;

  bool operator==(const DensityDistribution&) const = default;
};
std::optional<Density> parse_density(std::string_view text) noexcept;

// Calendar dates (days precision).
using Date = std::chrono::sys_days;

std::optional<Date> parse_iso_date(std::string_view text) noexcept;
std::string format_iso_date(Date d);
/// Same calendar day `years` later; Feb 29 maps to Feb 28 in non-leap targets.
Date add_years(Date d, int years);
int year_of(Date d);
long days_between(Date from, Date to);

/// 64-bit mixer used to derive independent child seeds from a master seed.
std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept;

/// FNV-1a over raw bytes; used for config and training-data digests.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = 1469598103934665603ULL) noexcept;
std::string hex64(std::uint64_t v);

/// Worker count from BUSDENSITY_THREADS (default: hardware concurrency, min 1).
unsigned worker_threads();

/// Round half away from zero.
long round_half_away(double v) noexcept;

}  // namespace busdensity
