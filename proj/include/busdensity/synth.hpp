#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "busdensity/cohort.hpp"
#include "busdensity/imaging.hpp"

namespace busdensity::synth {

struct SynthConfig {
  int n_women = 200;
  /// Images per woman are uniform on [images_mean - images_spread, images_mean + images_spread], at least 1.
  int images_mean = 4;
  int images_spread = 2;
  std::array<double, kNumDensity> density_prior{0.034, 0.390, 0.447, 0.129};
  std::array<double, kNumDensity> class_intensity_means{70.0, 95.0, 120.0, 145.0};
  double noise_sd = 30.0;
  /// Per-woman brightness offset (sd), shared by all her images.
  double woman_offset_sd = 5.0;
  double age_mean = 53.4;
  double age_sd = 11.9;
  double age_min = 25.0;
  double age_max = 95.0;
  double intercept = -3.0;
  /// Log-odds for (standardized age, A, C, D); B is the reference class.
  std::array<double, 4> true_log_odds{0.25, -0.2, 0.2, 0.405465108108164};
  double dual_view_rate = 0.05;
  double invalid_rate = 0.03;
  /// Fraction of women generated with a record that fails an inclusion criterion.
  double ineligible_rate = 0.02;
  int width = 96;
  int height = 80;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class ImageKind { normal, invalid, dual_view };
std::string_view image_kind_name(ImageKind k) noexcept;

/// Speckle-textured image: class mean plus offset plus noise_sd-scaled texture,
/// rounded and clamped to [0, 255]. noise_sd = 0 yields a constant image.
imaging::GrayImage generate_image(Density cls, std::uint64_t seed, const SynthConfig& cfg = {},
                                  double offset = 0.0);

/// Two views side by side with a dark separator band in the middle.
imaging::GrayImage generate_dual_view(Density cls, std::uint64_t seed, const SynthConfig& cfg = {},
                                      double offset = 0.0);

/// Near-blank frame that the cleaning stage rejects.
imaging::GrayImage generate_invalid(std::uint64_t seed, const SynthConfig& cfg = {});

struct SynthImage {
  ImageKind kind = ImageKind::normal;
  imaging::GrayImage image;
};

struct TruthRow {
  std::string patient_id;
  Density density = Density::B;
  double age = 0.0;
  double offset = 0.0;
  double case_probability = 0.0;
  bool outcome = false;
  bool eligible = true;
  int n_images = 0;
  int n_dual_view = 0;
  int n_invalid = 0;
};

struct SynthCohort {
  cohort::Cohort cohort;
  /// Images in patient order, then image index.
  std::vector<SynthImage> images;
  std::vector<TruthRow> truth;
  /// patient_id -> tag -> value (machine, age_bin, cancer_status, bus_birads).
  std::map<std::string, std::map<std::string, std::string>> tags;
};

SynthCohort generate_cohort(const SynthConfig& cfg);

/// Writes manifest.csv, images/<patient>/<image>.png, truth.csv, tags.csv and
/// image_truth.csv under dir.
void write_cohort(const SynthCohort& c, const std::filesystem::path& dir);

std::string write_truth(const std::vector<TruthRow>& truth);
std::vector<TruthRow> read_truth(const std::filesystem::path& path);

}  // namespace busdensity::synth
