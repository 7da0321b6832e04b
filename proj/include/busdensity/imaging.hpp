#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace busdensity::imaging {

/// Row-major 8-bit grayscale raster.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, std::vector<std::uint8_t> pixels, std::string image_id = {},
            std::string patient_id = {});
  GrayImage(int width, int height, std::uint8_t fill, std::string image_id = {},
            std::string patient_id = {});

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  bool empty() const noexcept { return pixels_.empty(); }

  std::uint8_t at(int x, int y) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint8_t& at(int x, int y) { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }
  std::span<std::uint8_t> pixels() noexcept { return pixels_; }
  std::span<const std::uint8_t> row(int y) const {
    return std::span<const std::uint8_t>(pixels_).subspan(static_cast<std::size_t>(y) * width_, width_);
  }

  /// Columns [x0, x1) as a new image.
  GrayImage columns(int x0, int x1) const;

  std::string image_id;
  std::string patient_id;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Real-valued grid in [0, 1] produced by preprocess().
struct NormalizedImage {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// ---------------------------------------------------------------------------
// Raster I/O. PNG and binary/ASCII PGM, 8-bit single channel only.

GrayImage load_image(const std::filesystem::path& path);
GrayImage decode_image(std::span<const std::uint8_t> bytes, const std::string& name = "<memory>");
std::vector<std::uint8_t> encode_png(const GrayImage& img);
std::vector<std::uint8_t> encode_pgm(const GrayImage& img);
void save_png(const GrayImage& img, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Cleaning

struct CleaningConfig {
  std::uint8_t blank_intensity = 5;
  double blank_fraction = 0.98;
  int min_side = 64;
  double separator_max_mean = 5.0;
  double flank_min_mean = 20.0;
  /// Fraction of the width, centred, searched for a dual-view separator.
  double central_band = 0.20;
};

enum class CleaningStatus { valid, invalid, dual_view };

std::string_view status_name(CleaningStatus s) noexcept;

struct CleaningVerdict {
  CleaningStatus status = CleaningStatus::valid;
  std::string reason;
  std::vector<GrayImage> sub_images;
};

/// Invalid when near-blank (too many pixels <= blank_intensity), too small, or
/// constant. Rules are checked in that order; `reason` names the first hit.
CleaningVerdict detect_invalid(const GrayImage& img, const CleaningConfig& cfg = {});

/// Per-column mean intensity.
std::vector<double> column_means(const GrayImage& img);

/// Looks for a dark separator column in the central band. The separator is the
/// maximal run of dark columns around it; both neighbouring columns must be
/// bright. Halves exclude the separator and are named <id>_L / <id>_R.
CleaningVerdict split_dual_view(const GrayImage& img, const CleaningConfig& cfg = {});

/// detect_invalid followed by split_dual_view for valid images.
CleaningVerdict clean_image(const GrayImage& img, const CleaningConfig& cfg = {});

// ---------------------------------------------------------------------------
// Preprocessing for fixed-size model input

enum class CropMode { center_crop, random_crop };
enum class ResizePolicy {
  /// Resize only when the smaller edge is below `side`.
  upscale_only,
  /// Always resize the smaller edge to exactly `side`.
  always,
};

struct Jitter {
  bool enabled = false;
  double max_brightness = 0.1;  // additive, fraction of full scale
  double max_contrast = 0.1;    // multiplicative deviation around the mean
};

struct PreprocessConfig {
  int side = 224;
  CropMode mode = CropMode::center_crop;
  ResizePolicy resize = ResizePolicy::upscale_only;
  std::uint64_t seed = 0;
  Jitter jitter;
};

/// Bilinear resampling with half-pixel centres and edge clamping.
std::vector<float> resize_bilinear(std::span<const float> src, int src_w, int src_h, int dst_w,
                                   int dst_h);

/// Output dimensions after the smaller-edge resize for a given policy.
std::pair<int, int> resized_dims(int width, int height, int side, ResizePolicy policy);

/// Resize (if needed), crop to side x side, then min-max normalise to [0, 1].
/// Constant crops become all zeros.
NormalizedImage preprocess(const GrayImage& img, const PreprocessConfig& cfg = {});

}  // namespace busdensity::imaging
