#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "busdensity/common.hpp"
#include "busdensity/evaluation.hpp"

namespace busdensity::risk {

/// Mean and sample standard deviation (n - 1 denominator) of ages.
struct AgeScaler {
  double mean = 0.0;
  double sd = 1.0;

  static AgeScaler fit(std::span<const double> ages);
  double apply(double age) const { return (age - mean) / sd; }
};

std::vector<double> standardize_age(std::span<const double> ages, AgeScaler* params = nullptr);

/// n independent categorical draws from dist.
std::vector<Density> simulate_density_draws(const DensityDistribution& dist, int n, std::uint64_t seed);

/// One modelling row. `density` holds class weights over (A, B, C, D): a
/// one-hot vector for observed or drawn classes, or a full distribution when
/// scoring by expectation.
struct RiskDesignRow {
  std::string patient_id;
  double age_std = 0.0;
  DensityDistribution density;
  bool outcome = false;
};

struct FitOptions {
  Density reference = Density::B;
  bool with_age = true;
  bool with_density = true;
  /// Max-norm of the mean log-likelihood gradient at convergence.
  double tolerance = 1e-8;
  int max_iterations = 100;
};

struct RiskModel {
  /// "intercept", then "age" and the non-reference density classes (A..D order)
  /// when enabled.
  std::vector<std::string> columns;
  std::vector<double> coefficients;
  /// Inverse observed information, row-major columns x columns.
  std::vector<double> covariance;
  FitOptions options;
  int iterations = 0;
  std::size_t n_rows = 0;

  double coefficient(const std::string& column) const;
  double standard_error(const std::string& column) const;
  double linear_predictor(const RiskDesignRow& row) const;
};

/// Newton-Raphson maximum likelihood. Throws "collinear_design" naming the
/// first column that adds no rank, and "quasi_separation" when any coefficient
/// exceeds 30 in magnitude.
RiskModel fit_risk_model(std::span<const RiskDesignRow> rows, const FitOptions& options = {});

struct OddsRatio {
  std::string covariate;
  double odds_ratio = 1.0;
  std::optional<double> lower;
  std::optional<double> upper;
  bool reference = false;
};

/// Rows A, B, C, D, Age (density rows omitted for age-only models). The
/// reference class is reported as 1.00 without an interval.
std::vector<OddsRatio> odds_ratios(const RiskModel& model, double z = 1.96);

enum class DensitySource { clinical, predicted, age_only };
std::string_view source_name(DensitySource s) noexcept;
std::optional<DensitySource> parse_source(std::string_view s) noexcept;

/// A woman in the matched case-control cohort.
struct RiskSubject {
  std::string patient_id;
  double age = 0.0;
  Density clinical = Density::B;
  /// Patient-level (mean-aggregated) predicted distribution.
  std::optional<DensityDistribution> predicted;
  bool outcome = false;
};

struct CvConfig {
  int folds = 3;
  int draws = 100;
  std::uint64_t seed = 0;
  DensitySource source = DensitySource::clinical;
  Density reference = Density::B;
};

struct CvResult {
  evaluation::DelongResult auc;
  /// Held-out linear predictor per subject (input order).
  std::vector<double> scores;
  std::vector<int> fold_of;
  std::size_t training_rows = 0;
};

/// Folds are stratified by outcome. Age scaling is fitted on the training
/// folds. Held-out women are scored with their clinical one-hot or, for the
/// predicted source, the expected one-hot (the distribution itself).
CvResult cv_risk_auroc(std::span<const RiskSubject> subjects, const CvConfig& cfg);

/// Single fit on all women for odds-ratio reporting; the predicted source
/// draws one density per woman.
RiskModel fit_reporting_model(std::span<const RiskSubject> subjects, DensitySource source, std::uint64_t seed,
                              Density reference = Density::B);

struct SourceResult {
  DensitySource source;
  std::vector<OddsRatio> odds;
  evaluation::DelongResult auc;
  /// Set when the source could not be modelled (e.g. quasi-separation); the
  /// numeric fields are then meaningless.
  std::string note;
};

struct RiskReport {
  std::size_t n_women = 0;
  std::size_t n_cases = 0;
  int folds = 3;
  int draws = 100;
  std::uint64_t seed = 0;
  std::vector<SourceResult> results;
};

std::string risk_report_json(const RiskReport& r);
/// Rows A, B, C, D, Age and one AUROC row per source; OR and CI columns per source.
std::string risk_report_csv(const RiskReport& r);

}  // namespace busdensity::risk
