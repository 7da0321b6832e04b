#include "busdensity/features.hpp"

#include "busdensity/common.hpp"
#include "busdensity/csv.hpp"
#include "busdensity/simd.hpp"

namespace busdensity::features {

std::vector<std::uint8_t> minmax_rescale(std::span<const std::uint8_t> pixels) {
  std::vector<std::uint8_t> out(pixels.size(), 0);
  if (pixels.empty()) return out;
  const auto [lo, hi] = simd::minmax(pixels);
  if (hi == lo) return out;
  const unsigned range = hi - lo;
  // round((p - lo) * 255 / range) with halves rounded up (all values are >= 0).
  std::array<std::uint8_t, 256> lut{};
  for (unsigned p = lo; p <= hi; ++p)
    lut[p] = static_cast<std::uint8_t>(((p - lo) * 510u + range) / (2u * range));
  for (std::size_t i = 0; i < pixels.size(); ++i) out[i] = lut[pixels[i]];
  return out;
}

HistogramFeatures gray_level_histogram(const imaging::GrayImage& img, bool normalize_first) {
  if (img.empty()) throw Error("empty_image", "histogram of an empty image");
  HistogramFeatures f;
  f.normalized_input = normalize_first;
  if (normalize_first) {
    const auto rescaled = minmax_rescale(img.pixels());
    f.counts = simd::nibble_histogram(rescaled);
  } else {
    f.counts = simd::nibble_histogram(img.pixels());
  }
  f.total = img.size();
  for (int k = 0; k < kNumBins; ++k)
    f.bins[k] = static_cast<double>(f.counts[k]) / static_cast<double>(f.total);
  return f;
}

const std::vector<std::string>& feature_header() {
  static const std::vector<std::string> h = [] {
    std::vector<std::string> v{"image_id", "patient_id", "normalized_input"};
    for (int k = 0; k < kNumBins; ++k) v.push_back("b" + std::to_string(k));
    return v;
  }();
  return h;
}

std::string write_features(const std::vector<FeatureRow>& rows) {
  csv::Writer w(feature_header());
  for (const auto& r : rows) {
    std::vector<std::string> fields{r.image_id, r.patient_id, r.features.normalized_input ? "1" : "0"};
    for (double b : r.features.bins) fields.push_back(csv::fmt_double(b));
    w.row(fields);
  }
  return w.str();
}

std::vector<FeatureRow> read_features(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  csv::require_header(t, feature_header(), "feature file");
  std::vector<FeatureRow> rows;
  rows.reserve(t.rows.size());
  for (const auto& r : t.rows) {
    if (r.size() != feature_header().size())
      throw Error("schema_mismatch", "bad feature row in " + path.string());
    FeatureRow row{r[0], r[1], {}};
    row.features.normalized_input = r[2] == "1";
    for (int k = 0; k < kNumBins; ++k) row.features.bins[k] = csv::to_double(r[3 + k], "bin");
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace busdensity::features
