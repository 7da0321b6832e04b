#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "busdensity/imaging.hpp"

namespace busdensity::features {

inline constexpr int kNumBins = 16;

using FeatureVector = std::array<double, kNumBins>;

/// Fraction of pixels in each 16-level gray interval [16k, 16k + 15].
struct HistogramFeatures {
  FeatureVector bins{};
  std::array<std::uint64_t, kNumBins> counts{};
  std::uint64_t total = 0;
  bool normalized_input = false;
};

/// Min-max rescale to [0, 255] with round-half-away-from-zero, in exact
/// integer arithmetic. Constant images map to all zeros.
std::vector<std::uint8_t> minmax_rescale(std::span<const std::uint8_t> pixels);

HistogramFeatures gray_level_histogram(const imaging::GrayImage& img, bool normalize_first);

/// One row of the feature CSV.
struct FeatureRow {
  std::string image_id;
  std::string patient_id;
  HistogramFeatures features;
};

const std::vector<std::string>& feature_header();
std::string write_features(const std::vector<FeatureRow>& rows);
std::vector<FeatureRow> read_features(const std::filesystem::path& path);

}  // namespace busdensity::features
