#include "busdensity/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "busdensity/csv.hpp"
#include "busdensity/random.hpp"

namespace busdensity::cohort {

namespace fs = std::filesystem;

std::string_view outcome_name(Outcome o) noexcept {
  switch (o) {
    case Outcome::case_: return "case";
    case Outcome::control: return "control";
    default: return "undetermined";
  }
}

const PatientRecord& Cohort::at(const std::string& id) const {
  auto it = records.find(id);
  if (it == records.end()) throw Error("unknown_patient", "no patient '" + id + "' in cohort");
  return it->second;
}

const std::vector<std::string>& manifest_header() {
  static const std::vector<std::string> h{
      "patient_id",     "birth_year", "mammogram_date", "bus_date",     "clinical_density",
      "bus_birads",     "negative_screen", "four_views", "prior_cancer", "diagnosis_date",
      "image_dir"};
  return h;
}

namespace {

enum Col { kId, kBirth, kMammo, kBus, kDensity, kBirads, kNeg, kViews, kPrior, kDiag, kDir, kCols };

std::optional<bool> parse_flag(std::string_view s) {
  if (s == "0") return false;
  if (s == "1") return true;
  return std::nullopt;
}

std::optional<int> parse_small_int(std::string_view s) {
  try {
    return static_cast<int>(csv::to_long(s, ""));
  } catch (const Error&) {
    return std::nullopt;
  }
}

// Returns the rejection reason, or empty on success.
std::string parse_row(const std::vector<std::string>& f, PatientRecord& r) {
  if (f.size() != kCols) return "bad_row";
  if (f[kId].empty()) return "missing_id";
  r.patient_id = f[kId];
  auto birth = parse_small_int(f[kBirth]);
  if (!birth) return "bad_birth_year";
  r.birth_year = *birth;
  auto mammo = parse_iso_date(f[kMammo]);
  auto bus = parse_iso_date(f[kBus]);
  if (!mammo || !bus) return "bad_date";
  r.mammogram_date = *mammo;
  r.bus_date = *bus;
  if (f[kDensity].empty()) return "missing_density";
  auto density = parse_density(f[kDensity]);
  if (!density || f[kDensity][0] < 'A' || f[kDensity][0] > 'D') return "unknown_density";
  r.clinical_density = *density;
  auto birads = parse_small_int(f[kBirads]);
  if (!birads) return "bad_birads";
  r.bus_birads = *birads;
  auto neg = parse_flag(f[kNeg]);
  auto views = parse_flag(f[kViews]);
  auto prior = parse_flag(f[kPrior]);
  if (!neg || !views || !prior) return "bad_flag";
  r.negative_screen = *neg;
  r.four_views = *views;
  r.prior_cancer = *prior;
  if (!f[kDiag].empty()) {
    auto diag = parse_iso_date(f[kDiag]);
    if (!diag) return "bad_date";
    r.diagnosis_date = *diag;
  }
  r.image_dir = f[kDir];
  return {};
}

Cohort build(const csv::Table& t, fs::path provenance) {
  csv::require_header(t, manifest_header(), "cohort manifest");
  Cohort c;
  c.provenance = std::move(provenance);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    PatientRecord r;
    const std::string reason = parse_row(t.rows[i], r);
    if (!reason.empty()) {
      c.rejections.push_back({t.lines[i], t.rows[i].empty() ? "" : t.rows[i][0], reason});
      continue;
    }
    auto [it, inserted] = c.records.emplace(r.patient_id, r);
    if (!inserted && !(it->second == r))
      throw Error("duplicate_conflict",
                  "patient '" + r.patient_id + "' appears twice with different fields");
  }
  return c;
}

}  // namespace

Cohort ingest_cohort(const fs::path& manifest_path) {
  if (!fs::exists(manifest_path))
    throw Error("missing_file", "manifest not found: " + manifest_path.string());
  return build(csv::read(manifest_path), manifest_path);
}

Cohort ingest_cohort_text(std::string_view csv_text, fs::path provenance) {
  auto t = csv::parse(csv_text);
  return build(t, std::move(provenance));
}

std::string write_manifest(const Cohort& cohort) {
  csv::Writer w(manifest_header());
  for (const auto& [id, r] : cohort.records) {
    w.row({r.patient_id, std::to_string(r.birth_year), format_iso_date(r.mammogram_date),
           format_iso_date(r.bus_date), std::string(1, density_code(r.clinical_density)),
           std::to_string(r.bus_birads), r.negative_screen ? "1" : "0", r.four_views ? "1" : "0",
           r.prior_cancer ? "1" : "0",
           r.diagnosis_date ? format_iso_date(*r.diagnosis_date) : std::string{}, r.image_dir});
  }
  return w.str();
}

std::string write_rejections(const Cohort& cohort) {
  csv::Writer w({"line", "patient_id", "reason"});
  for (const auto& r : cohort.rejections) w.row({std::to_string(r.line), r.patient_id, r.reason});
  return w.str();
}

Cohort attach_images(Cohort cohort, const fs::path& root) {
  std::map<std::string, std::string> owner;
  for (auto& [id, r] : cohort.records) {
    r.image_ids.clear();
    const fs::path dir = root / r.image_dir;
    if (r.image_dir.empty() || !fs::is_directory(dir)) continue;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      const auto ext = entry.path().extension().string();
      if (ext != ".png" && ext != ".pgm") continue;
      r.image_ids.push_back(entry.path().stem().string());
    }
    std::sort(r.image_ids.begin(), r.image_ids.end());
    for (const auto& img : r.image_ids) {
      auto [it, inserted] = owner.emplace(img, id);
      if (!inserted)
        throw Error("ambiguous_image", "image '" + img + "' belongs to both '" + it->second +
                                           "' and '" + id + "'");
    }
  }
  return cohort;
}

// ---------------------------------------------------------------------------

std::pair<Cohort, ExclusionReport> apply_inclusion_criteria(const Cohort& cohort, int max_gap_days) {
  static const std::vector<std::string> kReasons{"no_negative_screen", "bus_not_benign",
                                                 "bus_mammo_gap",      "missing_density",
                                                 "missing_views",      "prior_history"};
  ExclusionReport report;
  std::map<std::string, std::size_t> tally;
  for (const auto& r : kReasons) tally[r] = 0;

  Cohort kept;
  kept.provenance = cohort.provenance;
  kept.rejections = cohort.rejections;
  for (const auto& [id, r] : cohort.records) {
    std::string reason;
    if (!r.negative_screen)
      reason = "no_negative_screen";
    else if (r.bus_birads < 1 || r.bus_birads > 3)
      reason = "bus_not_benign";
    else if (std::labs(days_between(r.mammogram_date, r.bus_date)) > max_gap_days)
      reason = "bus_mammo_gap";
    // Density presence is guaranteed at ingestion, so missing_density only
    // counts rows rejected upstream.
    else if (!r.four_views)
      reason = "missing_views";
    else if (r.prior_cancer)
      reason = "prior_history";

    if (reason.empty()) {
      kept.records.emplace(id, r);
    } else {
      ++tally[reason];
      report.excluded.emplace(id, reason);
    }
  }
  for (const auto& r : kReasons) report.counts.emplace_back(r, tally[r]);
  report.input = cohort.size();
  report.retained = kept.size();
  return {std::move(kept), std::move(report)};
}

std::string write_exclusions(const ExclusionReport& report) {
  csv::Writer w({"patient_id", "reason"});
  for (const auto& [id, reason] : report.excluded) w.row({id, reason});
  return w.str();
}

// ---------------------------------------------------------------------------

Outcome classify_outcome(Date bus_date, std::optional<Date> diagnosis_date) noexcept {
  if (!diagnosis_date) return Outcome::control;
  const Date diag = *diagnosis_date;
  if (diag < bus_date) return Outcome::undetermined;
  if (diag > add_years(bus_date, kCaseMaxYears)) return Outcome::control;
  if (days_between(bus_date, diag) >= kCaseMinDays) return Outcome::case_;
  return Outcome::undetermined;
}

Cohort label_cases_controls(const Cohort& cohort) {
  Cohort out = cohort;
  for (auto& [id, r] : out.records) {
    r.outcome = classify_outcome(r.bus_date, r.diagnosis_date);
    r.inconsistent_dates = r.diagnosis_date && *r.diagnosis_date < r.bus_date;
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view split_name(Split s) noexcept {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    default: return "test";
  }
}

std::optional<Split> parse_split(std::string_view s) noexcept {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  if (s == "test") return Split::test;
  return std::nullopt;
}

std::vector<std::string> SplitAssignment::members(Split s) const {
  std::vector<std::string> out;
  for (const auto& [id, split] : assignment)
    if (split == s) out.push_back(id);
  return out;
}

SplitAssignment stratified_split(const Cohort& cohort, std::pair<double, double> fractions,
                                 std::uint64_t seed, const std::vector<std::string>& reserved_test) {
  const auto [train_frac, val_frac] = fractions;
  if (train_frac < 0 || val_frac < 0 || std::fabs(train_frac + val_frac - 1.0) > 1e-9)
    throw Error("bad_fractions", "split fractions must be non-negative and sum to 1");
  if (cohort.records.empty()) throw Error("empty_cohort", "cannot split an empty cohort");

  SplitAssignment out;
  out.seed = seed;
  out.fractions = fractions;
  const std::set<std::string> reserved(reserved_test.begin(), reserved_test.end());

  std::array<std::vector<std::string>, kNumDensity> strata;
  for (const auto& [id, r] : cohort.records) {
    if (reserved.count(id)) {
      out.assignment[id] = Split::test;
      continue;
    }
    strata[index_of(r.clinical_density)].push_back(id);
  }

  Rng rng(seed);
  for (int k = 0; k < kNumDensity; ++k) {
    auto& ids = strata[k];
    if (ids.empty()) continue;
    if (ids.size() < 2) {
      out.warnings.push_back(std::string("density ") + density_code(density_from_index(k)) +
                             " stratum has fewer patients than splits; assigned to train");
      for (const auto& id : ids) out.assignment[id] = Split::train;
      continue;
    }
    rng.shuffle(std::span<std::string>(ids));
    const auto n_train = static_cast<std::size_t>(
        std::clamp<long>(round_half_away(train_frac * static_cast<double>(ids.size())), 0,
                         static_cast<long>(ids.size())));
    for (std::size_t i = 0; i < ids.size(); ++i)
      out.assignment[ids[i]] = i < n_train ? Split::train : Split::validation;
  }
  return out;
}

std::string write_splits(const SplitAssignment& s) {
  csv::Writer w({"patient_id", "split"});
  for (const auto& [id, split] : s.assignment) w.row({id, std::string(split_name(split))});
  return w.str();
}

SplitAssignment read_splits(const fs::path& path) {
  const auto t = csv::read(path);
  csv::require_header(t, {"patient_id", "split"}, "split file");
  SplitAssignment s;
  for (const auto& row : t.rows) {
    auto split = row.size() == 2 ? parse_split(row[1]) : std::nullopt;
    if (!split) throw Error("schema_mismatch", "bad split row in " + path.string());
    s.assignment[row[0]] = *split;
  }
  return s;
}

// ---------------------------------------------------------------------------

std::string_view matching_key_name(MatchingKey k) noexcept {
  return k == MatchingKey::birth_year ? "birth_year" : "mammogram_year";
}

std::optional<MatchingKey> parse_matching_key(std::string_view s) noexcept {
  if (s == "birth_year") return MatchingKey::birth_year;
  if (s == "mammogram_year") return MatchingKey::mammogram_year;
  return std::nullopt;
}

std::size_t MatchedSet::control_count() const {
  std::size_t n = 0;
  for (const auto& [c, controls] : pairs) n += controls.size();
  return n;
}

std::vector<std::string> MatchedSet::all_ids() const {
  std::vector<std::string> ids;
  for (const auto& [c, controls] : pairs) {
    ids.push_back(c);
    for (const auto& m : controls) ids.push_back(m.patient_id);
  }
  return ids;
}

namespace {

int key_of(const PatientRecord& r, MatchingKey key) {
  return key == MatchingKey::birth_year ? r.birth_year : r.mammogram_year();
}

}  // namespace

MatchedSet match_case_control(const Cohort& cohort, int ratio, MatchingKey key, std::uint64_t seed) {
  if (ratio < 1) throw Error("bad_ratio", "matching ratio must be >= 1");
  MatchedSet out;
  out.key = key;
  out.ratio = ratio;

  std::vector<std::string> cases;
  std::map<int, std::set<std::string>> pool;  // key value -> unused controls
  for (const auto& [id, r] : cohort.records) {
    if (r.outcome == Outcome::case_)
      cases.push_back(id);
    else if (r.outcome == Outcome::control)
      pool[key_of(r, key)].insert(id);
  }
  if (cases.empty()) {
    out.warnings.push_back("no cases in cohort; matched set is empty");
    return out;
  }

  Rng rng(seed);
  rng.shuffle(std::span<std::string>(cases));
  for (const auto& case_id : cases) {
    const int k = key_of(cohort.at(case_id), key);
    auto& chosen = out.pairs[case_id];
    int widest = 0;
    for (int w = 0; w <= kMaxWidening && static_cast<int>(chosen.size()) < ratio; ++w) {
      std::vector<std::string> ring;
      for (int v : w == 0 ? std::vector<int>{k} : std::vector<int>{k - w, k + w}) {
        auto it = pool.find(v);
        if (it != pool.end()) ring.insert(ring.end(), it->second.begin(), it->second.end());
      }
      if (ring.empty()) continue;
      const std::size_t need = static_cast<std::size_t>(ratio) - chosen.size();
      const std::size_t take = std::min(need, ring.size());
      // Partial Fisher-Yates: the first `take` slots become the sample.
      for (std::size_t i = 0; i < take; ++i) std::swap(ring[i], ring[i + rng.index(ring.size() - i)]);
      for (std::size_t i = 0; i < take; ++i) {
        const auto& control = cohort.at(ring[i]);
        const int cv = key_of(control, key);
        pool[cv].erase(ring[i]);
        chosen.push_back({ring[i], std::abs(cv - k)});
      }
      widest = w;
    }
    out.widening[case_id] = widest;
    if (widest > 0)
      out.warnings.push_back("case " + case_id + ": matching widened to +/-" + std::to_string(widest));
    if (static_cast<int>(chosen.size()) < ratio)
      out.warnings.push_back("case " + case_id + ": only " + std::to_string(chosen.size()) +
                             " controls available");
  }
  return out;
}

std::string write_matches(const MatchedSet& m) {
  csv::Writer w({"case_id", "control_id", "key_distance", "matching_key", "ratio"});
  const std::string key(matching_key_name(m.key));
  for (const auto& [case_id, controls] : m.pairs) {
    if (controls.empty()) w.row({case_id, "", "", key, std::to_string(m.ratio)});
    for (const auto& c : controls)
      w.row({case_id, c.patient_id, std::to_string(c.key_distance), key, std::to_string(m.ratio)});
  }
  return w.str();
}

MatchedSet read_matches(const fs::path& path) {
  const auto t = csv::read(path);
  csv::require_header(t, {"case_id", "control_id", "key_distance", "matching_key", "ratio"},
                      "match file");
  MatchedSet m;
  for (const auto& row : t.rows) {
    if (row.size() != 5) throw Error("schema_mismatch", "bad match row in " + path.string());
    auto key = parse_matching_key(row[3]);
    if (!key) throw Error("schema_mismatch", "unknown matching key '" + row[3] + "'");
    m.key = *key;
    m.ratio = static_cast<int>(csv::to_long(row[4], "ratio"));
    auto& controls = m.pairs[row[0]];
    if (row[1].empty()) continue;
    const int dist = static_cast<int>(csv::to_long(row[2], "key_distance"));
    controls.push_back({row[1], dist});
    m.widening[row[0]] = std::max(m.widening[row[0]], dist);
  }
  return m;
}

}  // namespace busdensity::cohort
