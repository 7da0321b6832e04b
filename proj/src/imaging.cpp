#include "busdensity/imaging.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "busdensity/common.hpp"
#include "busdensity/random.hpp"
#include "busdensity/simd.hpp"

namespace busdensity::imaging {

namespace fs = std::filesystem;

GrayImage::GrayImage(int width, int height, std::vector<std::uint8_t> pixels, std::string id,
                     std::string patient)
    : image_id(std::move(id)), patient_id(std::move(patient)), width_(width), height_(height),
      pixels_(std::move(pixels)) {
  if (width < 1 || height < 1) throw Error("bad_geometry", "image dimensions must be >= 1");
  if (pixels_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
    throw Error("bad_geometry", "pixel count does not match width x height");
}

GrayImage::GrayImage(int width, int height, std::uint8_t fill, std::string id, std::string patient)
    : GrayImage(width, height,
                std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(width, 0)) *
                                              static_cast<std::size_t>(std::max(height, 0)),
                                          fill),
                std::move(id), std::move(patient)) {}

GrayImage GrayImage::columns(int x0, int x1) const {
  if (x0 < 0 || x1 > width_ || x0 >= x1) throw Error("bad_geometry", "column slice out of range");
  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(x1 - x0) * height_);
  for (int y = 0; y < height_; ++y) {
    const auto r = row(y);
    out.insert(out.end(), r.begin() + x0, r.begin() + x1);
  }
  return GrayImage(x1 - x0, height_, std::move(out), image_id, patient_id);
}

// ---------------------------------------------------------------------------
// Raster I/O

namespace {

constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

std::uint32_t be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

GrayImage decode_png(std::span<const std::uint8_t> bytes, const std::string& name) {
  // IHDR is always the first chunk: length(4) "IHDR"(4) width height depth colour.
  if (bytes.size() < 33 || std::memcmp(bytes.data() + 12, "IHDR", 4) != 0)
    throw Error("corrupt_raster", name + ": truncated PNG header");
  const int depth = bytes[24];
  const int colour = bytes[25];
  if (colour == 2 || colour == 3 || colour == 6)
    throw Error("rgb_input", name + ": colour PNG; expected 8-bit grayscale");
  if (colour == 4) throw Error("rgb_input", name + ": gray+alpha PNG; expected single channel");
  if (colour != 0) throw Error("corrupt_raster", name + ": unknown PNG colour type");
  if (depth != 8) throw Error("unsupported_depth", name + ": PNG bit depth " + std::to_string(depth));

  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw Error("corrupt_raster", name + ": " + image.message);
  image.format = PNG_FORMAT_GRAY;
  const auto width = static_cast<int>(be32(bytes.data() + 16));
  const auto height = static_cast<int>(be32(bytes.data() + 20));
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw Error("corrupt_raster", name + ": " + msg);
  }
  return GrayImage(width, height, std::move(pixels));
}

// Skips whitespace and '#' comments in a PGM header.
std::size_t pnm_skip(std::span<const std::uint8_t> b, std::size_t pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  return pos;
}

bool pnm_int(std::span<const std::uint8_t> b, std::size_t& pos, long& out) {
  pos = pnm_skip(b, pos);
  if (pos >= b.size() || !std::isdigit(b[pos])) return false;
  out = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    out = out * 10 + (b[pos] - '0');
    if (out > 1'000'000'000) return false;
    ++pos;
  }
  return true;
}

GrayImage decode_pgm(std::span<const std::uint8_t> b, const std::string& name) {
  const bool binary = b[1] == '5';
  std::size_t pos = 2;
  long w = 0, h = 0, maxval = 0;
  if (!pnm_int(b, pos, w) || !pnm_int(b, pos, h) || !pnm_int(b, pos, maxval))
    throw Error("corrupt_raster", name + ": malformed PGM header");
  if (w < 1 || h < 1) throw Error("corrupt_raster", name + ": zero-sized PGM");
  if (maxval < 1 || maxval > 255)
    throw Error("unsupported_depth", name + ": PGM maxval " + std::to_string(maxval));
  const std::size_t count = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  std::vector<std::uint8_t> pixels(count);
  if (binary) {
    ++pos;  // single whitespace after maxval
    if (b.size() < pos + count) throw Error("corrupt_raster", name + ": truncated PGM data");
    std::copy_n(b.begin() + static_cast<std::ptrdiff_t>(pos), count, pixels.begin());
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      long v = 0;
      if (!pnm_int(b, pos, v) || v > maxval) throw Error("corrupt_raster", name + ": truncated PGM data");
      pixels[i] = static_cast<std::uint8_t>(v);
    }
  }
  return GrayImage(static_cast<int>(w), static_cast<int>(h), std::move(pixels));
}

}  // namespace

GrayImage decode_image(std::span<const std::uint8_t> bytes, const std::string& name) {
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0)
    return decode_png(bytes, name);
  if (bytes.size() >= 2 && bytes[0] == 'P') {
    if (bytes[1] == '5' || bytes[1] == '2') return decode_pgm(bytes, name);
    if (bytes[1] == '6' || bytes[1] == '3') throw Error("rgb_input", name + ": PPM colour raster");
  }
  throw Error("corrupt_raster", name + ": not a PNG or PGM raster");
}

GrayImage load_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("unreadable_file", "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  GrayImage img = decode_image(bytes, path.string());
  img.image_id = path.stem().string();
  return img;
}

std::vector<std::uint8_t> encode_png(const GrayImage& img) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels().data(), 0, nullptr))
    throw Error("png_encode", image.message, ErrorKind::runtime);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels().data(), 0, nullptr))
    throw Error("png_encode", image.message, ErrorKind::runtime);
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  const std::string header =
      "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels().begin(), img.pixels().end());
  return out;
}

void save_png(const GrayImage& img, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io_error", "cannot write " + path.string(), ErrorKind::runtime);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// Cleaning

std::string_view status_name(CleaningStatus s) noexcept {
  switch (s) {
    case CleaningStatus::invalid: return "invalid";
    case CleaningStatus::dual_view: return "dual_view";
    default: return "valid";
  }
}

CleaningVerdict detect_invalid(const GrayImage& img, const CleaningConfig& cfg) {
  CleaningVerdict v;
  const auto px = img.pixels();
  const auto& k = simd::active();
  const double blank = static_cast<double>(k.count_le_u8(px.data(), px.size(), cfg.blank_intensity)) /
                       static_cast<double>(px.size());
  std::uint64_t sum = 0, sumsq = 0;
  k.sum_sumsq_u8(px.data(), px.size(), &sum, &sumsq);
  // n * sum(x^2) - (sum x)^2 == 0 exactly when every pixel is equal.
  const unsigned __int128 n = px.size();
  const bool constant = n * sumsq == static_cast<unsigned __int128>(sum) * sum;

  if (blank > cfg.blank_fraction)
    v.reason = "near_blank";
  else if (img.width() < cfg.min_side || img.height() < cfg.min_side)
    v.reason = "too_small";
  else if (constant)
    v.reason = "zero_variance";
  v.status = v.reason.empty() ? CleaningStatus::valid : CleaningStatus::invalid;
  return v;
}

std::vector<double> column_means(const GrayImage& img) {
  std::vector<std::uint32_t> sums(static_cast<std::size_t>(img.width()), 0);
  const auto& k = simd::active();
  for (int y = 0; y < img.height(); ++y) k.accumulate_u8(img.row(y).data(), sums.size(), sums.data());
  std::vector<double> means(sums.size());
  for (std::size_t x = 0; x < sums.size(); ++x) means[x] = static_cast<double>(sums[x]) / img.height();
  return means;
}

CleaningVerdict split_dual_view(const GrayImage& img, const CleaningConfig& cfg) {
  CleaningVerdict v;
  v.status = CleaningStatus::valid;
  const int w = img.width();
  const auto means = column_means(img);
  const double half_band = cfg.central_band * w / 2.0;
  const int band_lo = std::max(0, static_cast<int>(std::ceil(w / 2.0 - half_band)));
  const int band_hi = std::min(w - 1, static_cast<int>(std::floor(w / 2.0 + half_band)) - 1);

  const auto dark = [&](int x) { return means[x] <= cfg.separator_max_mean; };
  int best_start = -1, best_end = -1;
  double best_dist = 0;
  for (int x = band_lo; x <= band_hi; ++x) {
    if (!dark(x)) continue;
    int s = x, e = x;
    while (s > 0 && dark(s - 1)) --s;
    while (e < w - 1 && dark(e + 1)) ++e;
    x = e;  // skip the rest of this run
    if (s == 0 || e == w - 1) continue;
    if (means[s - 1] < cfg.flank_min_mean || means[e + 1] < cfg.flank_min_mean) continue;
    const double dist = std::fabs((s + e) / 2.0 - (w - 1) / 2.0);
    if (best_start < 0 || dist < best_dist) {
      best_start = s;
      best_end = e;
      best_dist = dist;
    }
  }
  if (best_start < 0) {
    v.sub_images.push_back(img);
    return v;
  }
  GrayImage left = img.columns(0, best_start);
  GrayImage right = img.columns(best_end + 1, w);
  left.image_id = img.image_id + "_L";
  right.image_id = img.image_id + "_R";
  v.status = CleaningStatus::dual_view;
  v.reason = "separator_cols_" + std::to_string(best_start) + "_" + std::to_string(best_end);
  v.sub_images = {std::move(left), std::move(right)};
  return v;
}

CleaningVerdict clean_image(const GrayImage& img, const CleaningConfig& cfg) {
  auto verdict = detect_invalid(img, cfg);
  if (verdict.status == CleaningStatus::invalid) return verdict;
  return split_dual_view(img, cfg);
}

// ---------------------------------------------------------------------------
// Preprocessing

std::vector<float> resize_bilinear(std::span<const float> src, int src_w, int src_h, int dst_w,
                                   int dst_h) {
  if (src_w < 1 || src_h < 1 || dst_w < 1 || dst_h < 1)
    throw Error("bad_geometry", "resize dimensions must be >= 1");
  const auto axis = [](int dst, int src_n, std::vector<int>& i0, std::vector<int>& i1,
                       std::vector<double>& frac) {
    i0.resize(dst);
    i1.resize(dst);
    frac.resize(dst);
    const double scale = static_cast<double>(src_n) / dst;
    for (int d = 0; d < dst; ++d) {
      double s = (d + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(src_n - 1));
      i0[d] = static_cast<int>(std::floor(s));
      i1[d] = std::min(i0[d] + 1, src_n - 1);
      frac[d] = s - i0[d];
    }
  };
  std::vector<int> x0, x1, y0, y1;
  std::vector<double> fx, fy;
  axis(dst_w, src_w, x0, x1, fx);
  axis(dst_h, src_h, y0, y1, fy);
  std::vector<float> out(static_cast<std::size_t>(dst_w) * dst_h);
  for (int y = 0; y < dst_h; ++y) {
    const float* r0 = src.data() + static_cast<std::size_t>(y0[y]) * src_w;
    const float* r1 = src.data() + static_cast<std::size_t>(y1[y]) * src_w;
    for (int x = 0; x < dst_w; ++x) {
      const double top = r0[x0[x]] + (r0[x1[x]] - r0[x0[x]]) * fx[x];
      const double bottom = r1[x0[x]] + (r1[x1[x]] - r1[x0[x]]) * fx[x];
      out[static_cast<std::size_t>(y) * dst_w + x] = static_cast<float>(top + (bottom - top) * fy[y]);
    }
  }
  return out;
}

std::pair<int, int> resized_dims(int width, int height, int side, ResizePolicy policy) {
  const int small = std::min(width, height);
  if (policy == ResizePolicy::upscale_only && small >= side) return {width, height};
  if (small == side) return {width, height};
  const auto scaled = [&](int edge) {
    return static_cast<int>(round_half_away(static_cast<double>(edge) * side / small));
  };
  return width <= height ? std::pair{side, std::max(side, scaled(height))}
                         : std::pair{std::max(side, scaled(width)), side};
}

NormalizedImage preprocess(const GrayImage& img, const PreprocessConfig& cfg) {
  if (cfg.side < 1) throw Error("bad_geometry", "crop side must be >= 1");
  if (img.empty()) throw Error("bad_geometry", "cannot preprocess an empty image");
  std::vector<float> plane(img.pixels().begin(), img.pixels().end());
  int w = img.width(), h = img.height();
  const auto [rw, rh] = resized_dims(w, h, cfg.side, cfg.resize);
  if (rw != w || rh != h) {
    plane = resize_bilinear(plane, w, h, rw, rh);
    w = rw;
    h = rh;
  }

  Rng rng(cfg.seed);
  int ox = (w - cfg.side) / 2, oy = (h - cfg.side) / 2;
  if (cfg.mode == CropMode::random_crop) {
    ox = static_cast<int>(rng.index(static_cast<std::uint64_t>(w - cfg.side) + 1));
    oy = static_cast<int>(rng.index(static_cast<std::uint64_t>(h - cfg.side) + 1));
  }
  NormalizedImage out;
  out.width = cfg.side;
  out.height = cfg.side;
  std::vector<float> crop(static_cast<std::size_t>(cfg.side) * cfg.side);
  for (int y = 0; y < cfg.side; ++y)
    std::copy_n(plane.begin() + static_cast<std::ptrdiff_t>(y + oy) * w + ox, cfg.side,
                crop.begin() + static_cast<std::ptrdiff_t>(y) * cfg.side);

  const auto& k = simd::active();
  float lo = 0, hi = 0;
  k.minmax_f32(crop.data(), crop.size(), &lo, &hi);
  out.values.assign(crop.size(), 0.0f);
  if (hi > lo) k.normalize_f32(crop.data(), crop.size(), lo, hi - lo, out.values.data());

  if (cfg.jitter.enabled) {
    const double brightness = rng.uniform(-cfg.jitter.max_brightness, cfg.jitter.max_brightness);
    const double contrast = 1.0 + rng.uniform(-cfg.jitter.max_contrast, cfg.jitter.max_contrast);
    double mean = 0;
    for (float v : out.values) mean += v;
    mean /= static_cast<double>(out.values.size());
    for (float& v : out.values)
      v = static_cast<float>(std::clamp((v - mean) * contrast + mean + brightness, 0.0, 1.0));
  }
  return out;
}

}  // namespace busdensity::imaging
