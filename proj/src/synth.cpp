#include "busdensity/synth.hpp"

#include <algorithm>
#include <cmath>

#include "busdensity/csv.hpp"
#include "busdensity/parallel.hpp"
#include "busdensity/random.hpp"

namespace busdensity::synth {

namespace fs = std::filesystem;

void SynthConfig::validate() const {
  if (n_women < 0) throw Error("bad_config", "n_women must be non-negative");
  if (images_mean < 1 || images_spread < 0) throw Error("bad_config", "images per woman must be positive");
  double sum = 0.0;
  for (double p : density_prior) {
    if (!(p >= 0.0)) throw Error("bad_config", "density prior entries must be non-negative");
    sum += p;
  }
  if (std::fabs(sum - 1.0) > 1e-6) throw Error("bad_config", "density prior must sum to 1");
  for (double r : {dual_view_rate, invalid_rate, ineligible_rate})
    if (!(r >= 0.0 && r <= 1.0)) throw Error("bad_config", "rates must lie in [0, 1]");
  if (dual_view_rate + invalid_rate > 1.0) throw Error("bad_config", "dual_view_rate + invalid_rate exceeds 1");
  if (!(noise_sd >= 0.0) || !(woman_offset_sd >= 0.0) || !(age_sd > 0.0) || !(age_min < age_max))
    throw Error("bad_config", "invalid noise or age parameters");
  if (width < 16 || height < 16) throw Error("bad_config", "synthetic images must be at least 16 x 16");
}

std::string_view image_kind_name(ImageKind k) noexcept {
  switch (k) {
    case ImageKind::invalid: return "invalid";
    case ImageKind::dual_view: return "dual_view";
    default: return "normal";
  }
}

namespace {

constexpr int kCell = 8;
constexpr int kSeparator = 8;

void render(std::uint8_t* out, int width, int height, int stride, double mean, double noise_sd, Rng& rng) {
  const int cw = (width + kCell - 1) / kCell, ch = (height + kCell - 1) / kCell;
  std::vector<double> blobs(static_cast<std::size_t>(cw * ch));
  for (double& b : blobs) b = rng.normal();
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double texture = 0.6 * blobs[static_cast<std::size_t>((y / kCell) * cw + x / kCell)] + 0.8 * rng.normal();
      const double v = std::round(mean + noise_sd * texture);
      out[static_cast<std::size_t>(y) * stride + x] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
}

}  // namespace

imaging::GrayImage generate_image(Density cls, std::uint64_t seed, const SynthConfig& cfg, double offset) {
  Rng rng(seed);
  std::vector<std::uint8_t> px(static_cast<std::size_t>(cfg.width) * cfg.height);
  render(px.data(), cfg.width, cfg.height, cfg.width, cfg.class_intensity_means[index_of(cls)] + offset,
         cfg.noise_sd, rng);
  return imaging::GrayImage(cfg.width, cfg.height, std::move(px));
}

imaging::GrayImage generate_dual_view(Density cls, std::uint64_t seed, const SynthConfig& cfg, double offset) {
  Rng rng(seed);
  const int w = 2 * cfg.width + kSeparator;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * cfg.height, 0);
  const double mean = cfg.class_intensity_means[index_of(cls)] + offset;
  render(px.data(), cfg.width, cfg.height, w, mean, cfg.noise_sd, rng);
  render(px.data() + cfg.width + kSeparator, cfg.width, cfg.height, w, mean, cfg.noise_sd, rng);
  // Keep the views' edge columns bright enough to flank the separator.
  for (int y = 0; y < cfg.height; ++y) {
    auto* row = px.data() + static_cast<std::size_t>(y) * w;
    row[cfg.width - 1] = std::max<std::uint8_t>(row[cfg.width - 1], 40);
    row[cfg.width + kSeparator] = std::max<std::uint8_t>(row[cfg.width + kSeparator], 40);
  }
  return imaging::GrayImage(w, cfg.height, std::move(px));
}

imaging::GrayImage generate_invalid(std::uint64_t seed, const SynthConfig& cfg) {
  Rng rng(seed);
  std::vector<std::uint8_t> px(static_cast<std::size_t>(cfg.width) * cfg.height);
  for (auto& p : px) p = static_cast<std::uint8_t>(rng.index(4));
  return imaging::GrayImage(cfg.width, cfg.height, std::move(px));
}

namespace {

struct Woman {
  cohort::PatientRecord record;
  TruthRow truth;
  std::vector<SynthImage> images;
  std::map<std::string, std::string> tags;
};

std::string patient_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "W%05d", i + 1);
  return buf;
}

std::string age_bin(int age) {
  if (age < 40) return "<40";
  if (age < 50) return "40-49";
  if (age < 60) return "50-59";
  if (age < 70) return "60-69";
  return "70+";
}

Woman generate_woman(const SynthConfig& cfg, int index) {
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(index)));
  Woman w;
  auto& r = w.record;
  auto& t = w.truth;
  r.patient_id = t.patient_id = patient_id(index);

  t.density = density_from_index(static_cast<int>(rng.categorical(cfg.density_prior)));
  do t.age = rng.normal(cfg.age_mean, cfg.age_sd);
  while (t.age < cfg.age_min || t.age > cfg.age_max);
  t.offset = cfg.woman_offset_sd * rng.normal();

  const double age_std = (t.age - cfg.age_mean) / cfg.age_sd;
  double eta = cfg.intercept + cfg.true_log_odds[0] * age_std;
  if (t.density == Density::A) eta += cfg.true_log_odds[1];
  if (t.density == Density::C) eta += cfg.true_log_odds[2];
  if (t.density == Density::D) eta += cfg.true_log_odds[3];
  t.case_probability = 1.0 / (1.0 + std::exp(-eta));
  t.outcome = rng.bernoulli(t.case_probability);

  const Date epoch{std::chrono::year{2012} / 1 / 1};
  r.bus_date = epoch + std::chrono::days{static_cast<long>(rng.index(2000))};
  r.mammogram_date = r.bus_date + std::chrono::days{static_cast<long>(rng.index(361)) - 180};
  r.birth_year = year_of(r.bus_date) - static_cast<int>(std::floor(t.age));
  r.clinical_density = t.density;
  r.bus_birads = 1 + static_cast<int>(rng.index(3));
  if (t.outcome) {
    r.diagnosis_date = r.bus_date + std::chrono::days{200 + static_cast<long>(rng.index(1500))};
  } else if (rng.bernoulli(0.05)) {
    r.diagnosis_date = add_years(r.bus_date, 6) + std::chrono::days{static_cast<long>(rng.index(365))};
  }

  if (rng.bernoulli(cfg.ineligible_rate)) {
    t.eligible = false;
    switch (rng.index(5)) {
      case 0: r.negative_screen = false; break;
      case 1: r.bus_birads = 4; break;
      case 2: r.mammogram_date = r.bus_date - std::chrono::days{400}; break;
      case 3: r.four_views = false; break;
      default: r.prior_cancer = true; break;
    }
  }
  r.image_dir = "images/" + r.patient_id;

  const int lo = std::max(1, cfg.images_mean - cfg.images_spread);
  const int hi = cfg.images_mean + cfg.images_spread;
  t.n_images = lo + static_cast<int>(rng.index(static_cast<std::uint64_t>(hi - lo + 1)));
  for (int k = 0; k < t.n_images; ++k) {
    const std::uint64_t seed = derive_seed(rng.next(), static_cast<std::uint64_t>(k));
    const double u = rng.uniform();
    SynthImage img;
    if (u < cfg.invalid_rate) {
      img.kind = ImageKind::invalid;
      img.image = generate_invalid(seed, cfg);
      ++t.n_invalid;
    } else if (u < cfg.invalid_rate + cfg.dual_view_rate) {
      img.kind = ImageKind::dual_view;
      img.image = generate_dual_view(t.density, seed, cfg, t.offset);
      ++t.n_dual_view;
    } else {
      img.image = generate_image(t.density, seed, cfg, t.offset);
    }
    char suffix[16];
    std::snprintf(suffix, sizeof suffix, "_%02d", k + 1);
    img.image.image_id = r.patient_id + suffix;
    img.image.patient_id = r.patient_id;
    r.image_ids.push_back(img.image.image_id);
    w.images.push_back(std::move(img));
  }

  static const std::array<std::string, 3> kMachines{"make_a", "make_b", "make_c"};
  w.tags["machine"] = kMachines[rng.index(kMachines.size())];
  w.tags["age_bin"] = age_bin(r.age_at_bus());
  w.tags["cancer_status"] = t.outcome ? "case" : "control";
  w.tags["bus_birads"] = std::to_string(r.bus_birads);
  return w;
}

}  // namespace

SynthCohort generate_cohort(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<Woman> women(static_cast<std::size_t>(cfg.n_women));
  parallel_for(women.size(), [&](std::size_t i) { women[i] = generate_woman(cfg, static_cast<int>(i)); });
  SynthCohort out;
  for (auto& w : women) {
    const std::string id = w.record.patient_id;
    out.tags[id] = std::move(w.tags);
    out.truth.push_back(std::move(w.truth));
    for (auto& img : w.images) out.images.push_back(std::move(img));
    out.cohort.records.emplace(id, std::move(w.record));
  }
  return out;
}

std::string write_truth(const std::vector<TruthRow>& truth) {
  csv::Writer w({"patient_id", "density", "age", "offset", "case_probability", "outcome", "eligible", "n_images",
                 "n_dual_view", "n_invalid"});
  for (const auto& t : truth)
    w.row({t.patient_id, std::string(1, density_code(t.density)), csv::fmt_double(t.age), csv::fmt_double(t.offset),
           csv::fmt_double(t.case_probability), t.outcome ? "1" : "0", t.eligible ? "1" : "0",
           std::to_string(t.n_images), std::to_string(t.n_dual_view), std::to_string(t.n_invalid)});
  return w.str();
}

std::vector<TruthRow> read_truth(const fs::path& path) {
  const auto t = csv::read(path);
  csv::require_header(t, {"patient_id", "density", "age", "offset", "case_probability", "outcome", "eligible",
                          "n_images", "n_dual_view", "n_invalid"},
                      "truth CSV");
  std::vector<TruthRow> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const std::string where = "truth line " + std::to_string(t.lines[i]);
    TruthRow r;
    r.patient_id = row[0];
    const auto d = parse_density(row[1]);
    if (!d) throw Error("bad_field", where + ": unknown density");
    r.density = *d;
    r.age = csv::to_double(row[2], where);
    r.offset = csv::to_double(row[3], where);
    r.case_probability = csv::to_double(row[4], where);
    r.outcome = row[5] == "1";
    r.eligible = row[6] == "1";
    r.n_images = static_cast<int>(csv::to_long(row[7], where));
    r.n_dual_view = static_cast<int>(csv::to_long(row[8], where));
    r.n_invalid = static_cast<int>(csv::to_long(row[9], where));
    out.push_back(r);
  }
  return out;
}

void write_cohort(const SynthCohort& c, const fs::path& dir) {
  fs::create_directories(dir);
  csv::write_text(dir / "manifest.csv", cohort::write_manifest(c.cohort));
  csv::write_text(dir / "truth.csv", write_truth(c.truth));
  csv::Writer tags({"patient_id", "tag", "value"});
  for (const auto& [pid, kv] : c.tags)
    for (const auto& [k, v] : kv) tags.row({pid, k, v});
  tags.save(dir / "tags.csv");

  csv::Writer image_truth({"image_id", "patient_id", "kind"});
  for (const auto& img : c.images)
    image_truth.row({img.image.image_id, img.image.patient_id, std::string(image_kind_name(img.kind))});
  image_truth.save(dir / "image_truth.csv");

  parallel_for(c.images.size(), [&](std::size_t i) {
    const auto& img = c.images[i].image;
    const auto& rec = c.cohort.records.at(img.patient_id);
    imaging::save_png(img, dir / rec.image_dir / (img.image_id + ".png"));
  });
}

}  // namespace busdensity::synth
