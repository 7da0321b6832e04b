#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "busdensity/common.hpp"

namespace busdensity::evaluation {

// ---------------------------------------------------------------------------
// Aggregation

/// Component-wise mean of the per-image distributions.
DensityDistribution aggregate_mean(std::span<const DensityDistribution> preds);

/// Mean of the per-image argmax codes (A=0 ... D=3), rounded half away from
/// zero and clamped to [A, D].
Density aggregate_vote_round(std::span<const DensityDistribution> preds);

enum class AggregationMode { mean, vote_round };
std::string_view aggregation_name(AggregationMode m) noexcept;
std::optional<AggregationMode> parse_aggregation(std::string_view s) noexcept;

// ---------------------------------------------------------------------------
// Rank statistics

/// Mann-Whitney AUROC with ties counted one half. labels are 0/1.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Pools the 4N one-vs-rest (p_k, [truth == k]) pairs into one binary AUROC.
double micro_ovr_auroc(std::span<const DensityDistribution> preds, std::span<const Density> truth);
/// The pooled scores and labels used by micro_ovr_auroc.
void micro_pool(std::span<const DensityDistribution> preds, std::span<const Density> truth,
                std::vector<double>& scores, std::vector<std::uint8_t>& labels);

struct DelongResult {
  double auc = 0.0;
  double variance = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

/// Midrank DeLong estimate with a normal-approximation CI clamped to [0, 1].
DelongResult delong_ci(std::span<const double> scores, std::span<const std::uint8_t> labels,
                       double alpha = 0.05);

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};

/// One point per distinct score (descending), preceded by (inf, 0, 0).
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Kendall tau-b in O(n log n); throws when x or y is entirely tied.
double kendall_tau_b(std::span<const double> x, std::span<const double> y);

// ---------------------------------------------------------------------------
// Prediction sets and reports

struct PredictionRow {
  std::string image_id;
  std::string patient_id;
  DensityDistribution dist;
};

/// Predictions plus per-patient ground truth and optional per-patient subgroup
/// tags (tag name -> value).
struct PredictionSet {
  std::vector<PredictionRow> rows;
  std::map<std::string, Density> truth;
  std::map<std::string, std::map<std::string, std::string>> tags;

  void validate() const;
};

struct PatientPrediction {
  std::string patient_id;
  std::size_t n_images = 0;
  DensityDistribution dist;
  Density vote = Density::A;
};

/// Groups rows by patient (sorted by id) and aggregates each group.
std::vector<PatientPrediction> aggregate_patients(std::span<const PredictionRow> rows);

enum class Level { image, patient };
std::string_view level_name(Level l) noexcept;
std::optional<Level> parse_level(std::string_view s) noexcept;

/// AUROC with CI, or a reason the cell could not be estimated.
struct AucCell {
  std::optional<DelongResult> value;
  std::string note;
};

struct EvalBlock {
  std::string subgroup;  // "overall" or "tag=value"
  std::size_t n = 0;
  std::array<std::size_t, kNumDensity> class_counts{};
  std::array<AucCell, kNumDensity> per_class;
  AucCell micro;
  /// A/B versus C/D, scored by p_C + p_D.
  AucCell dense;
  std::optional<double> tau_b;
  std::string note;
};

struct EvalReport {
  Level level = Level::patient;
  std::vector<EvalBlock> blocks;
  /// ROC points for the micro-pooled overall curve.
  std::vector<RocPoint> micro_roc;
};

EvalReport evaluate(const PredictionSet& preds, Level level, const std::vector<std::string>& subgroup_tags = {});

std::string report_json(const EvalReport& r, const std::string& model_name);
/// One row per (model, level, subgroup): n, micro/dense/per-class AUC with CI, tau-b.
std::string report_csv(const EvalReport& r, const std::string& model_name);
std::string roc_csv(std::span<const RocPoint> points);

const std::vector<std::string>& prediction_header();
std::string write_predictions(std::span<const PredictionRow> rows);
std::vector<PredictionRow> read_predictions(const std::filesystem::path& path);
std::vector<PredictionRow> parse_predictions(std::string_view text);

std::string write_patient_predictions(std::span<const PatientPrediction> rows);

/// Tags CSV: patient_id,tag,value.
std::map<std::string, std::map<std::string, std::string>> read_tags(const std::filesystem::path& path);
std::string write_tags(const std::map<std::string, std::map<std::string, std::string>>& tags);

}  // namespace busdensity::evaluation
