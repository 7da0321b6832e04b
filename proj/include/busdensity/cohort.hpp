#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "busdensity/common.hpp"

namespace busdensity::cohort {

enum class Outcome { undetermined, case_, control };

std::string_view outcome_name(Outcome o) noexcept;

/// One woman: demographics, the matched mammogram/BUS exam pair, clinical
/// density and registry outcome.
struct PatientRecord {
  std::string patient_id;
  int birth_year = 0;
  Date mammogram_date{};
  Date bus_date{};
  Density clinical_density = Density::B;
  int bus_birads = 1;
  bool negative_screen = true;
  bool four_views = true;
  bool prior_cancer = false;
  std::optional<Date> diagnosis_date;
  std::string image_dir;

  Outcome outcome = Outcome::undetermined;
  /// Set by label_cases_controls when diagnosis precedes the BUS exam.
  bool inconsistent_dates = false;
  std::vector<std::string> image_ids;

  int age_at_bus() const { return year_of(bus_date) - birth_year; }
  int mammogram_year() const { return year_of(mammogram_date); }

  bool operator==(const PatientRecord&) const = default;
};

struct Rejection {
  std::size_t line = 0;
  std::string patient_id;
  std::string reason;
};

/// Ingested women keyed by patient_id (immutable after construction by
/// convention; operations return new cohorts).
struct Cohort {
  std::map<std::string, PatientRecord> records;
  std::filesystem::path provenance;
  std::vector<Rejection> rejections;

  std::size_t size() const { return records.size(); }
  const PatientRecord& at(const std::string& id) const;
};

/// Column order of the manifest CSV.
const std::vector<std::string>& manifest_header();

/// Parses a manifest. Rows with bad dates, unknown density codes or bad numeric
/// fields land in Cohort::rejections with a reason code; structural problems
/// (missing file, header mismatch, conflicting duplicate ids) throw.
Cohort ingest_cohort(const std::filesystem::path& manifest_path);
Cohort ingest_cohort_text(std::string_view csv_text, std::filesystem::path provenance = {});

std::string write_manifest(const Cohort& cohort);
std::string write_rejections(const Cohort& cohort);

/// Lists *.png / *.pgm under each patient's image_dir (resolved against root)
/// into image_ids, sorted by file name. Throws if an image id is claimed by
/// two patients.
Cohort attach_images(Cohort cohort, const std::filesystem::path& root);

// ---------------------------------------------------------------------------
// Inclusion criteria

struct ExclusionReport {
  /// Reason codes in evaluation order with their counts (zeros included).
  std::vector<std::pair<std::string, std::size_t>> counts;
  /// patient_id -> first failing reason.
  std::map<std::string, std::string> excluded;
  std::size_t input = 0;
  std::size_t retained = 0;
};

/// Criteria are evaluated in order and only the first failure is recorded:
///   no_negative_screen, bus_not_benign, bus_mammo_gap, missing_density,
///   missing_views, prior_history.
std::pair<Cohort, ExclusionReport> apply_inclusion_criteria(const Cohort& cohort,
                                                            int max_gap_days = 365);

std::string write_exclusions(const ExclusionReport& report);

// ---------------------------------------------------------------------------
// Outcomes

inline constexpr int kCaseMinDays = 183;
inline constexpr int kCaseMaxYears = 5;

/// case: bus + 183d <= diagnosis <= bus + 5y; control: no diagnosis up to
/// bus + 5y; undetermined otherwise (including diagnoses before the exam,
/// which also set inconsistent_dates).
Outcome classify_outcome(Date bus_date, std::optional<Date> diagnosis_date) noexcept;
Cohort label_cases_controls(const Cohort& cohort);

// ---------------------------------------------------------------------------
// Splitting

enum class Split { train, validation, test };

std::string_view split_name(Split s) noexcept;
std::optional<Split> parse_split(std::string_view s) noexcept;

struct SplitAssignment {
  std::map<std::string, Split> assignment;
  std::uint64_t seed = 0;
  std::pair<double, double> fractions{0.8, 0.2};
  std::vector<std::string> warnings;

  std::vector<std::string> members(Split s) const;
};

/// Splits women by density stratum. Within each stratum the train count is
/// round(train_fraction * n); strata with fewer than two women go wholly to
/// train with a warning. Ids in `reserved_test` are assigned to test and
/// excluded from stratification.
SplitAssignment stratified_split(const Cohort& cohort, std::pair<double, double> fractions,
                                 std::uint64_t seed,
                                 const std::vector<std::string>& reserved_test = {});

std::string write_splits(const SplitAssignment& s);
SplitAssignment read_splits(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Case-control matching

enum class MatchingKey { birth_year, mammogram_year };

std::string_view matching_key_name(MatchingKey k) noexcept;
std::optional<MatchingKey> parse_matching_key(std::string_view s) noexcept;

struct MatchedControl {
  std::string patient_id;
  int key_distance = 0;
};

struct MatchedSet {
  std::map<std::string, std::vector<MatchedControl>> pairs;
  MatchingKey key = MatchingKey::birth_year;
  int ratio = 5;
  /// case_id -> widest key distance that had to be used (0 = exact only).
  std::map<std::string, int> widening;
  std::vector<std::string> warnings;

  std::size_t control_count() const;
  /// Cases followed by their controls.
  std::vector<std::string> all_ids() const;
};

inline constexpr int kMaxWidening = 5;

/// For each case (in seeded random order) samples up to `ratio` unused controls
/// with an equal key, widening to |distance| = 1, 2, ... 5 while short.
MatchedSet match_case_control(const Cohort& cohort, int ratio, MatchingKey key,
                              std::uint64_t seed);

std::string write_matches(const MatchedSet& m);
MatchedSet read_matches(const std::filesystem::path& path);

}  // namespace busdensity::cohort
