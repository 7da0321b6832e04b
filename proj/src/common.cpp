#include "busdensity/common.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <thread>

namespace busdensity {

char density_code(Density d) noexcept { return static_cast<char>('A' + index_of(d)); }

Density DensityDistribution::argmax() const noexcept {
  int best = 0;
  for (int k = 1; k < kNumDensity; ++k)
    if (p[k] > p[best]) best = k;
  return density_from_index(best);
}

bool DensityDistribution::on_simplex(double tol) const noexcept {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) return false;
    sum += v;
  }
  return std::fabs(sum - 1.0) <= tol;
}

std::optional<Density> parse_density(std::string_view text) noexcept {
  if (text.size() != 1) return std::nullopt;
  const char c = text[0];
  if (c >= 'A' && c <= 'D') return density_from_index(c - 'A');
  if (c >= 'a' && c <= 'd') return density_from_index(c - 'a');
  return std::nullopt;
}

namespace {

bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace

std::optional<Date> parse_iso_date(std::string_view text) noexcept {
  // YYYY-MM-DD only; time-of-day suffixes are not part of the manifest schema.
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  int y = 0, m = 0, d = 0;
  if (!parse_int(text.substr(0, 4), y) || !parse_int(text.substr(5, 2), m) ||
      !parse_int(text.substr(8, 2), d))
    return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{y},
                                        std::chrono::month{static_cast<unsigned>(m)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  return Date{ymd};
}

std::string format_iso_date(Date d) {
  const std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

Date add_years(Date d, int years) {
  std::chrono::year_month_day ymd{d};
  ymd += std::chrono::years{years};
  if (!ymd.ok()) ymd = ymd.year() / ymd.month() / std::chrono::last;
  return Date{ymd};
}

int year_of(Date d) { return static_cast<int>(std::chrono::year_month_day{d}.year()); }

long days_between(Date from, Date to) { return static_cast<long>((to - from).count()); }

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept {
  return splitmix64(master ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h) noexcept {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

unsigned worker_threads() {
  unsigned n = std::thread::hardware_concurrency();
  if (const char* env = std::getenv("BUSDENSITY_THREADS")) {
    int v = 0;
    if (parse_int(env, v) && v > 0) n = static_cast<unsigned>(v);
  }
  return n == 0 ? 1 : n;
}

long round_half_away(double v) noexcept { return std::lround(v); }

}  // namespace busdensity
