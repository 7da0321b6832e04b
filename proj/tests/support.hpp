#pragma once

// Independent reference implementations used as test oracles. They are
// deliberately naive (O(n^2) pair enumeration, per-pixel loops) and share no
// code with the library.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "busdensity/common.hpp"

namespace oracle {

inline double psi(double pos, double neg) { return pos > neg ? 1.0 : (pos == neg ? 0.5 : 0.0); }

inline double brute_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      wins += psi(s[i], s[j]);
      ++pairs;
    }
  }
  return wins / static_cast<double>(pairs);
}

struct BruteDelong {
  double auc;
  double variance;
};

inline BruteDelong brute_delong(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < s.size(); ++i) (y[i] ? pos : neg).push_back(s[i]);
  const double m = static_cast<double>(pos.size());
  const double n = static_cast<double>(neg.size());
  std::vector<double> v10(pos.size(), 0.0), v01(neg.size(), 0.0);
  for (std::size_t i = 0; i < pos.size(); ++i)
    for (std::size_t j = 0; j < neg.size(); ++j) {
      const double p = psi(pos[i], neg[j]);
      v10[i] += p / n;
      v01[j] += p / m;
    }
  double auc = 0.0;
  for (double v : v10) auc += v;
  auc /= m;
  double s10 = 0.0, s01 = 0.0;
  for (double v : v10) s10 += (v - auc) * (v - auc);
  for (double v : v01) s01 += (v - auc) * (v - auc);
  s10 /= (m - 1);
  s01 /= (n - 1);
  return {auc, s10 / m + s01 / n};
}

inline double brute_tau_b(const std::vector<double>& x, const std::vector<double>& y) {
  long long conc = 0, disc = 0, untied_x = 0, untied_y = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx != 0) ++untied_x;
      if (dy != 0) ++untied_y;
      if (dx * dy > 0) ++conc;
      if (dx * dy < 0) ++disc;
    }
  return static_cast<double>(conc - disc) /
         std::sqrt(static_cast<double>(untied_x) * static_cast<double>(untied_y));
}

/// Per-pixel binning into [16k, 16k + 15], optionally after min-max rescale.
inline std::array<double, 16> hand_histogram(const std::vector<std::uint8_t>& px, bool normalize) {
  std::array<long, 16> counts{};
  int lo = 255, hi = 0;
  for (auto p : px) {
    lo = std::min<int>(lo, p);
    hi = std::max<int>(hi, p);
  }
  for (auto p : px) {
    int v = p;
    if (normalize) v = hi == lo ? 0 : static_cast<int>(std::lround((p - lo) * 255.0 / (hi - lo)));
    counts[v / 16] += 1;
  }
  std::array<double, 16> bins{};
  for (int k = 0; k < 16; ++k) bins[k] = static_cast<double>(counts[k]) / static_cast<double>(px.size());
  return bins;
}

/// Central-difference derivative of f at x[i].
template <typename F, typename Vec>
double central_difference(F&& f, Vec& x, std::size_t i, double eps) {
  const double saved = x[i];
  x[i] = saved + eps;
  const double up = f(x);
  x[i] = saved - eps;
  const double down = f(x);
  x[i] = saved;
  return (up - down) / (2.0 * eps);
}

/// ||a - b|| / max(||a||, ||b||) over whole gradient vectors.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace oracle

namespace testutil {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("busdensity_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
