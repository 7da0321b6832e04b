#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "busdensity/classifiers.hpp"
#include "busdensity/cohort.hpp"
#include "busdensity/csv.hpp"
#include "busdensity/evaluation.hpp"
#include "busdensity/features.hpp"
#include "busdensity/imaging.hpp"
#include "busdensity/parallel.hpp"
#include "busdensity/risk.hpp"
#include "busdensity/simd.hpp"
#include "busdensity/synth.hpp"

namespace busdensity::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";

  // synth
  int n_women = 200;
  int images_mean = 4;
  int images_spread = 2;
  double noise_sd = 30.0;
  double dual_view_rate = 0.05;
  double invalid_rate = 0.03;
  double ineligible_rate = 0.02;
  double intercept = -3.0;

  // clean
  std::string manifest;
  std::string image_root;
  int max_gap_days = 365;
  double blank_fraction = 0.98;
  int min_side = 64;

  // featurize
  std::string images;
  bool normalize = false;

  // match / split
  std::string cohort;
  int ratio = 5;
  std::string key = "birth_year";
  std::string matches;
  std::vector<double> fractions{0.8, 0.2};
  bool no_reserve = false;

  // train / predict
  std::string features;
  std::string splits;
  std::string model = "logreg";
  std::string model_file;
  double C = 10.0;
  std::string penalty = "l1";
  int n_trees = 200;
  int max_depth = 0;
  int min_samples_leaf = 1;
  int hidden = 512;
  double learning_rate = 1e-4;
  int batch_size = 64;
  int patience = 25;
  int max_epochs = 200;

  // aggregate / evaluate / risk
  std::string predictions;
  std::string level = "both";
  std::string split = "test";
  std::vector<std::string> subgroups;
  std::string tags;
  std::string model_name;
  int folds = 3;
  int draws = 100;
  std::vector<std::string> sources{"clinical", "predicted", "age_only"};
};

/// Output directory plus the artifacts a stage wrote.
class Stage {
 public:
  Stage(std::string name, const Options& o, std::vector<std::string> args, std::ostream& log)
      : name_(std::move(name)), opts_(o), args_(std::move(args)), log_(log), dir_(o.out) {}

  const fs::path& dir() const { return dir_; }
  std::ostream& log() { return log_; }

  /// Resolves an input path: explicit value, else `fallback` inside the output directory.
  fs::path input(const std::string& value, const std::string& fallback) const {
    return value.empty() ? dir_ / fallback : fs::path(value);
  }

  void write(const std::string& file, std::string_view text) {
    csv::write_text(dir_ / file, text);
    outputs_.push_back(file);
  }
  void note_output(const std::string& file) { outputs_.push_back(file); }

  void finish() {
    std::string joined;
    for (const auto& a : args_) joined += a + '\n';
    json doc{{"stage", name_},
             {"version", std::string(kVersion)},
             {"seed", *opts_.seed},
             {"config_digest", hex64(fnv1a(joined.data(), joined.size()))},
             {"arguments", args_},
             {"outputs", outputs_}};
    csv::write_text(dir_ / ("run_" + name_ + ".json"), doc.dump(2) + "\n");
  }

 private:
  std::string name_;
  const Options& opts_;
  std::vector<std::string> args_;
  std::ostream& log_;
  fs::path dir_;
  std::vector<std::string> outputs_;
};

// ---------------------------------------------------------------------------

void stage_synth(const Options& o, Stage& st) {
  synth::SynthConfig cfg;
  cfg.n_women = o.n_women;
  cfg.images_mean = o.images_mean;
  cfg.images_spread = o.images_spread;
  cfg.noise_sd = o.noise_sd;
  cfg.dual_view_rate = o.dual_view_rate;
  cfg.invalid_rate = o.invalid_rate;
  cfg.ineligible_rate = o.ineligible_rate;
  cfg.intercept = o.intercept;
  cfg.seed = *o.seed;
  const auto c = synth::generate_cohort(cfg);
  synth::write_cohort(c, st.dir());
  for (const char* f : {"manifest.csv", "truth.csv", "tags.csv", "image_truth.csv", "images/"}) st.note_output(f);
  st.log() << "synth: " << c.cohort.size() << " women, " << c.images.size() << " images\n";
}

fs::path find_image(const fs::path& dir, const std::string& id) {
  for (const char* ext : {".png", ".pgm"}) {
    const fs::path p = dir / (id + ext);
    if (fs::exists(p)) return p;
  }
  throw Error("missing_file", "image " + id + " not found under " + dir.string());
}

void stage_clean(const Options& o, Stage& st) {
  const fs::path manifest = st.input(o.manifest, "manifest.csv");
  const fs::path root = o.image_root.empty() ? manifest.parent_path() : fs::path(o.image_root);
  auto ingested = cohort::attach_images(cohort::ingest_cohort(manifest), root);
  auto [kept, report] = cohort::apply_inclusion_criteria(ingested, o.max_gap_days);
  const auto labeled = cohort::label_cases_controls(kept);
  st.write("cohort.csv", cohort::write_manifest(labeled));
  st.write("rejections.csv", cohort::write_rejections(ingested));
  st.write("exclusions.csv", cohort::write_exclusions(report));

  csv::Writer outcomes({"patient_id", "outcome", "inconsistent_dates"});
  for (const auto& [id, r] : labeled.records)
    outcomes.row({id, std::string(cohort::outcome_name(r.outcome)), r.inconsistent_dates ? "1" : "0"});
  st.write("outcomes.csv", outcomes.str());

  struct Job {
    std::string patient_id;
    std::string image_id;
    fs::path path;
  };
  std::vector<Job> jobs;
  for (const auto& [id, r] : labeled.records)
    for (const auto& img : r.image_ids) jobs.push_back({id, img, find_image(root / r.image_dir, img)});

  imaging::CleaningConfig cfg;
  cfg.blank_fraction = o.blank_fraction;
  cfg.min_side = o.min_side;
  struct Result {
    std::string status, reason;
    std::vector<std::string> outputs;
  };
  std::vector<Result> results(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    const auto& job = jobs[i];
    imaging::GrayImage img;
    try {
      img = imaging::load_image(job.path);
    } catch (const Error& e) {
      results[i] = {"invalid", e.code(), {}};
      return;
    }
    img.image_id = job.image_id;
    img.patient_id = job.patient_id;
    auto verdict = imaging::clean_image(img, cfg);
    results[i].status = std::string(imaging::status_name(verdict.status));
    results[i].reason = verdict.reason;
    if (verdict.status == imaging::CleaningStatus::invalid) return;
    for (const auto& sub : verdict.sub_images) {
      const std::string rel = "clean/" + job.patient_id + "/" + sub.image_id + ".png";
      imaging::save_png(sub, st.dir() / rel);
      results[i].outputs.push_back(sub.image_id);
    }
  });

  csv::Writer log({"image_id", "status", "reason", "output_ids"});
  csv::Writer cleaned({"image_id", "patient_id", "path"});
  std::size_t n_valid = 0, n_invalid = 0, n_dual = 0;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& r = results[i];
    std::string ids;
    for (const auto& id : r.outputs) {
      ids += (ids.empty() ? "" : ";") + id;
      cleaned.row({id, jobs[i].patient_id, "clean/" + jobs[i].patient_id + "/" + id + ".png"});
    }
    log.row({jobs[i].image_id, r.status, r.reason, ids});
    (r.status == "invalid" ? n_invalid : r.status == "dual_view" ? n_dual : n_valid)++;
  }
  st.write("cleaning_log.csv", log.str());
  st.write("cleaned_images.csv", cleaned.str());
  st.note_output("clean/");
  st.log() << "clean: " << labeled.size() << " of " << report.input << " women retained; " << n_valid << " valid, "
           << n_dual << " dual-view, " << n_invalid << " invalid images\n";
}

void stage_featurize(const Options& o, Stage& st) {
  const fs::path list = st.input(o.images, "cleaned_images.csv");
  const auto t = csv::read(list);
  csv::require_header(t, {"image_id", "patient_id", "path"}, "cleaned image list");
  std::vector<features::FeatureRow> rows(t.rows.size());
  parallel_for(rows.size(), [&](std::size_t i) {
    const auto& r = t.rows[i];
    fs::path p(r[2]);
    if (p.is_relative()) p = list.parent_path() / p;
    const auto img = imaging::load_image(p);
    rows[i] = {r[0], r[1], features::gray_level_histogram(img, o.normalize)};
  });
  st.write("features.csv", features::write_features(rows));
  st.log() << "featurize: " << rows.size() << " images" << (o.normalize ? " (min-max normalized)" : "") << "\n";
}

cohort::Cohort load_labeled_cohort(const Options& o, const Stage& st) {
  return cohort::label_cases_controls(cohort::ingest_cohort(st.input(o.cohort, "cohort.csv")));
}

void stage_match(const Options& o, Stage& st) {
  const auto key = cohort::parse_matching_key(o.key);
  if (!key) throw Error("bad_config", "unknown matching key '" + o.key + "'");
  const auto c = load_labeled_cohort(o, st);
  const auto m = cohort::match_case_control(c, o.ratio, *key, *o.seed);
  st.write("matches.csv", cohort::write_matches(m));
  std::string warnings;
  for (const auto& w : m.warnings) warnings += w + "\n";
  st.write("match_warnings.txt", warnings);
  if (!m.warnings.empty()) st.log() << "match: " << m.warnings.size() << " warnings (see match_warnings.txt)\n";
  st.log() << "match: " << m.pairs.size() << " cases, " << m.control_count() << " controls\n";
}

void stage_split(const Options& o, Stage& st) {
  if (o.fractions.size() != 2) throw Error("bad_fractions", "--fractions takes two values (train validation)");
  const auto c = load_labeled_cohort(o, st);
  std::vector<std::string> reserved;
  const fs::path matches = st.input(o.matches, "matches.csv");
  if (!o.no_reserve && (fs::exists(matches) || !o.matches.empty()))
    reserved = cohort::read_matches(matches).all_ids();
  const auto s = cohort::stratified_split(c, {o.fractions[0], o.fractions[1]}, *o.seed, reserved);
  st.write("splits.csv", cohort::write_splits(s));
  for (const auto& w : s.warnings) st.log() << "warning: " << w << "\n";
  st.log() << "split: " << s.members(cohort::Split::train).size() << " train, "
           << s.members(cohort::Split::validation).size() << " validation, "
           << s.members(cohort::Split::test).size() << " test\n";
}

classifiers::Dataset dataset_for(const std::vector<features::FeatureRow>& rows, const cohort::Cohort& c,
                                 const cohort::SplitAssignment& s, cohort::Split which) {
  classifiers::Dataset d;
  for (const auto& r : rows) {
    const auto it = s.assignment.find(r.patient_id);
    if (it == s.assignment.end() || it->second != which) continue;
    const auto rec = c.records.find(r.patient_id);
    if (rec == c.records.end()) throw Error("schema_mismatch", "features reference unknown patient " + r.patient_id);
    d.X.push_back(r.features.bins);
    d.y.push_back(rec->second.clinical_density);
  }
  return d;
}

void stage_train(const Options& o, Stage& st) {
  const auto rows = features::read_features(st.input(o.features, "features.csv"));
  const auto c = load_labeled_cohort(o, st);
  const auto s = cohort::read_splits(st.input(o.splits, "splits.csv"));
  const auto train = dataset_for(rows, c, s, cohort::Split::train);
  if (train.size() == 0) throw Error("empty_input", "no training images");

  classifiers::Model model;
  if (o.model == "logreg") {
    classifiers::LogRegConfig cfg;
    cfg.C = o.C;
    const auto p = classifiers::parse_penalty(o.penalty);
    if (!p) throw Error("bad_config", "unknown penalty '" + o.penalty + "'");
    cfg.penalty = *p;
    auto m = classifiers::train_logreg(train, cfg);
    st.log() << "train: logreg " << m.iterations << " iterations" << (m.converged ? "" : " (not converged)") << "\n";
    model = std::move(m);
  } else if (o.model == "forest") {
    classifiers::ForestConfig cfg;
    cfg.n_trees = o.n_trees;
    if (o.max_depth > 0) cfg.max_depth = o.max_depth;
    cfg.min_samples_leaf = o.min_samples_leaf;
    cfg.seed = *o.seed;
    model = classifiers::train_forest(train, cfg);
    st.log() << "train: forest of " << cfg.n_trees << " trees\n";
  } else if (o.model == "mlp") {
    classifiers::MlpConfig cfg;
    cfg.hidden = o.hidden;
    cfg.learning_rate = o.learning_rate;
    cfg.batch_size = o.batch_size;
    cfg.patience = o.patience;
    cfg.max_epochs = o.max_epochs;
    cfg.seed = *o.seed;
    const auto val = dataset_for(rows, c, s, cohort::Split::validation);
    auto m = classifiers::train_mlp(train, val, cfg);
    st.log() << "train: mlp best epoch " << m.best_epoch << ", validation loss " << m.best_validation_loss << "\n";
    model = std::move(m);
  } else {
    throw Error("bad_config", "unknown model kind '" + o.model + "'");
  }
  const std::string file = o.model_file.empty() ? "model.json" : o.model_file;
  st.write(file, classifiers::serialize_model(model));
  st.log() << "train: " << train.size() << " training images\n";
}

void stage_predict(const Options& o, Stage& st) {
  const auto model = classifiers::load_model(st.input(o.model_file, "model.json"));
  const auto rows = features::read_features(st.input(o.features, "features.csv"));
  std::vector<evaluation::PredictionRow> preds(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) {
    preds[i] = {rows[i].image_id, rows[i].patient_id, classifiers::predict_proba(model, rows[i].features.bins)};
  });
  st.write("predictions.csv", evaluation::write_predictions(preds));
  st.log() << "predict: " << preds.size() << " images with a " << classifiers::model_kind(model) << " model\n";
}

void stage_aggregate(const Options& o, Stage& st) {
  const auto preds = evaluation::read_predictions(st.input(o.predictions, "predictions.csv"));
  if (preds.empty()) throw Error("empty_predictions", "prediction file has no rows");
  const auto patients = evaluation::aggregate_patients(preds);
  st.write("patient_predictions.csv", evaluation::write_patient_predictions(patients));
  st.log() << "aggregate: " << preds.size() << " images into " << patients.size() << " patients\n";
}

std::vector<evaluation::PredictionRow> predictions_in_split(const Options& o, const Stage& st) {
  auto preds = evaluation::read_predictions(st.input(o.predictions, "predictions.csv"));
  if (o.split == "all") return preds;
  const auto which = cohort::parse_split(o.split);
  if (!which) throw Error("bad_config", "unknown split '" + o.split + "'");
  const fs::path splits = st.input(o.splits, "splits.csv");
  if (!fs::exists(splits) && o.splits.empty()) return preds;
  const auto s = cohort::read_splits(splits);
  std::erase_if(preds, [&](const evaluation::PredictionRow& r) {
    const auto it = s.assignment.find(r.patient_id);
    return it == s.assignment.end() || it->second != *which;
  });
  return preds;
}

void stage_evaluate(const Options& o, Stage& st) {
  evaluation::PredictionSet set;
  set.rows = predictions_in_split(o, st);
  const auto c = cohort::ingest_cohort(st.input(o.cohort, "cohort.csv"));
  for (const auto& [id, r] : c.records) set.truth[id] = r.clinical_density;
  const fs::path tags = st.input(o.tags, "tags.csv");
  if (fs::exists(tags) || !o.tags.empty()) set.tags = evaluation::read_tags(tags);

  std::vector<evaluation::Level> levels;
  if (o.level == "both") {
    levels = {evaluation::Level::image, evaluation::Level::patient};
  } else {
    const auto l = evaluation::parse_level(o.level);
    if (!l) throw Error("bad_config", "unknown level '" + o.level + "'");
    levels = {*l};
  }
  const std::string name = o.model_name.empty() ? "model" : o.model_name;
  std::string table;
  for (auto level : levels) {
    const auto report = evaluation::evaluate(set, level, o.subgroups);
    const std::string suffix(evaluation::level_name(level));
    st.write("eval_" + suffix + ".json", evaluation::report_json(report, name));
    st.write("roc_" + suffix + ".csv", evaluation::roc_csv(report.micro_roc));
    const auto csv_text = evaluation::report_csv(report, name);
    table += table.empty() ? csv_text : csv_text.substr(csv_text.find('\n') + 1);
    const auto& overall = report.blocks.front();
    st.log() << "evaluate (" << suffix << "): n=" << overall.n;
    if (overall.micro.value) st.log() << " micro AUROC " << csv::fmt_fixed(overall.micro.value->auc, 3);
    if (overall.tau_b) st.log() << ", tau-b " << csv::fmt_fixed(*overall.tau_b, 3);
    st.log() << "\n";
  }
  st.write("eval.csv", table);
}

void stage_risk(const Options& o, Stage& st) {
  const auto c = load_labeled_cohort(o, st);
  const auto m = cohort::read_matches(st.input(o.matches, "matches.csv"));
  std::map<std::string, DensityDistribution> predicted;
  const fs::path pred_path = st.input(o.predictions, "predictions.csv");
  if (fs::exists(pred_path))
    for (const auto& p : evaluation::aggregate_patients(evaluation::read_predictions(pred_path)))
      predicted[p.patient_id] = p.dist;

  std::vector<risk::RiskSubject> subjects;
  for (const auto& id : m.all_ids()) {
    const auto it = c.records.find(id);
    if (it == c.records.end()) throw Error("schema_mismatch", "matched patient " + id + " is not in the cohort");
    const auto& r = it->second;
    if (r.outcome == cohort::Outcome::undetermined) continue;
    risk::RiskSubject s{id, static_cast<double>(r.age_at_bus()), r.clinical_density, std::nullopt,
                        r.outcome == cohort::Outcome::case_};
    if (const auto p = predicted.find(id); p != predicted.end()) s.predicted = p->second;
    subjects.push_back(std::move(s));
  }

  risk::RiskReport report;
  report.n_women = subjects.size();
  report.n_cases = static_cast<std::size_t>(std::count_if(subjects.begin(), subjects.end(), [](auto& s) { return s.outcome; }));
  report.folds = o.folds;
  report.draws = o.draws;
  report.seed = *o.seed;
  for (const auto& name : o.sources) {
    const auto source = risk::parse_source(name);
    if (!source) throw Error("bad_config", "unknown density source '" + name + "'");
    risk::CvConfig cfg;
    cfg.folds = o.folds;
    cfg.draws = o.draws;
    cfg.seed = *o.seed;
    cfg.source = *source;
    try {
      const auto cv = risk::cv_risk_auroc(subjects, cfg);
      const auto model = risk::fit_reporting_model(subjects, *source, derive_seed(*o.seed, 0x0add));
      report.results.push_back({*source, risk::odds_ratios(model), cv.auc, ""});
    } catch (const Error& e) {
      // Small matched sets can leave a density class without cases or controls.
      if (e.code() != "quasi_separation" && e.code() != "collinear_design" && e.code() != "degenerate_fold") throw;
      report.results.push_back({*source, {}, {}, "not estimable: " + std::string(e.what())});
      st.log() << "risk (" << name << "): not estimable (" << e.code() << ")\n";
      continue;
    }
    const auto& cv_auc = report.results.back().auc;
    st.log() << "risk (" << name << "): AUROC " << csv::fmt_fixed(cv_auc.auc, 3) << " ("
             << csv::fmt_fixed(cv_auc.lower, 3) << ", " << csv::fmt_fixed(cv_auc.upper, 3) << ")\n";
  }
  st.write("risk.json", risk::risk_report_json(report));
  st.write("risk.csv", risk::risk_report_csv(report));
}

std::string markdown_table(const csv::Table& t) {
  std::string md = "|";
  for (const auto& h : t.header) md += " " + h + " |";
  md += "\n|";
  for (std::size_t i = 0; i < t.header.size(); ++i) md += " --- |";
  md += "\n";
  for (const auto& row : t.rows) {
    md += "|";
    for (const auto& cell : row) md += " " + cell + " |";
    md += "\n";
  }
  return md;
}

void stage_report(const Options&, Stage& st) {
  std::string md = "# Density pipeline report\n\n";
  bool any = false;
  for (const auto& [file, title] : {std::pair{"eval.csv", "Density classification"},
                                    std::pair{"risk.csv", "Cancer risk models"},
                                    std::pair{"exclusions.csv", "Exclusions"}}) {
    const fs::path p = st.dir() / file;
    if (!fs::exists(p)) continue;
    md += std::string("## ") + title + "\n\n" + markdown_table(csv::read(p)) + "\n";
    any = true;
  }
  if (!any) throw Error("missing_file", "no eval.csv, risk.csv or exclusions.csv in " + st.dir().string());
  st.write("report.md", md);
  st.log() << "report: wrote report.md\n";
}

// ---------------------------------------------------------------------------

using StageFn = void (*)(const Options&, Stage&);

struct Command {
  const char* name;
  const char* help;
  StageFn fn;
};

const std::vector<Command>& commands() {
  static const std::vector<Command> c{
      {"synth", "Generate a synthetic cohort with images", stage_synth},
      {"clean", "Ingest the manifest, apply inclusion criteria and clean images", stage_clean},
      {"featurize", "Compute 16-bin gray-level histograms", stage_featurize},
      {"split", "Stratified train/validation split (matched set reserved as test)", stage_split},
      {"match", "Case-control matching", stage_match},
      {"train", "Train a density classifier", stage_train},
      {"predict", "Per-image density predictions", stage_predict},
      {"aggregate", "Aggregate per-image predictions to patients", stage_aggregate},
      {"evaluate", "AUROC, DeLong intervals and Kendall tau-b", stage_evaluate},
      {"risk", "Cancer risk models: cross-validated AUROC and odds ratios", stage_risk},
      {"report", "Summarize evaluation and risk outputs as Markdown", stage_report},
  };
  return c;
}

void add_options(CLI::App& sub, const std::string& name, Options& o) {
  sub.add_option("--config", o.config, "JSON config file");
  sub.add_option("--seed", o.seed, "Master seed (required)");
  sub.add_option("--out", o.out, "Output directory");
  if (name == "synth") {
    sub.add_option("--n-women", o.n_women);
    sub.add_option("--images-mean", o.images_mean);
    sub.add_option("--images-spread", o.images_spread);
    sub.add_option("--noise-sd", o.noise_sd);
    sub.add_option("--dual-view-rate", o.dual_view_rate);
    sub.add_option("--invalid-rate", o.invalid_rate);
    sub.add_option("--ineligible-rate", o.ineligible_rate);
    sub.add_option("--intercept", o.intercept);
  } else if (name == "clean") {
    sub.add_option("--manifest", o.manifest);
    sub.add_option("--image-root", o.image_root);
    sub.add_option("--max-gap-days", o.max_gap_days);
    sub.add_option("--blank-fraction", o.blank_fraction);
    sub.add_option("--min-side", o.min_side);
  } else if (name == "featurize") {
    sub.add_option("--images", o.images, "Cleaned image list CSV");
    sub.add_flag("--normalize", o.normalize, "Min-max normalize each image before binning");
  } else if (name == "match") {
    sub.add_option("--cohort", o.cohort);
    sub.add_option("--ratio", o.ratio);
    sub.add_option("--key", o.key, "birth_year or mammogram_year");
  } else if (name == "split") {
    sub.add_option("--cohort", o.cohort);
    sub.add_option("--matches", o.matches);
    sub.add_option("--fractions", o.fractions)->expected(2);
    sub.add_flag("--no-reserve", o.no_reserve, "Do not reserve the matched set as test");
  } else if (name == "train") {
    sub.add_option("--features", o.features);
    sub.add_option("--splits", o.splits);
    sub.add_option("--cohort", o.cohort);
    sub.add_option("--model", o.model, "logreg, forest or mlp");
    sub.add_option("--model-file", o.model_file);
    sub.add_option("--C", o.C);
    sub.add_option("--penalty", o.penalty);
    sub.add_option("--n-trees", o.n_trees);
    sub.add_option("--max-depth", o.max_depth, "0 = unlimited");
    sub.add_option("--min-samples-leaf", o.min_samples_leaf);
    sub.add_option("--hidden", o.hidden);
    sub.add_option("--learning-rate", o.learning_rate);
    sub.add_option("--batch-size", o.batch_size);
    sub.add_option("--patience", o.patience);
    sub.add_option("--max-epochs", o.max_epochs);
  } else if (name == "predict") {
    sub.add_option("--model-file", o.model_file);
    sub.add_option("--features", o.features);
  } else if (name == "aggregate") {
    sub.add_option("--predictions", o.predictions);
  } else if (name == "evaluate") {
    sub.add_option("--predictions", o.predictions);
    sub.add_option("--cohort", o.cohort);
    sub.add_option("--splits", o.splits);
    sub.add_option("--split", o.split, "train, validation, test or all");
    sub.add_option("--level", o.level, "image, patient or both");
    sub.add_option("--subgroups", o.subgroups);
    sub.add_option("--tags", o.tags);
    sub.add_option("--model-name", o.model_name);
  } else if (name == "risk") {
    sub.add_option("--cohort", o.cohort);
    sub.add_option("--matches", o.matches);
    sub.add_option("--predictions", o.predictions);
    sub.add_option("--folds", o.folds);
    sub.add_option("--draws", o.draws);
    sub.add_option("--sources", o.sources);
  }
}

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key.rfind("--", 0) == 0 ? key : "--" + key;
}

bool has_long_option(const CLI::App& sub, const std::string& flag) {
  for (const auto* opt : sub.get_options())
    for (const auto& l : opt->get_lnames())
      if ("--" + l == flag) return true;
  return false;
}

void append_value(std::vector<std::string>& args, const std::string& flag, const json& v) {
  if (v.is_boolean()) {
    args.push_back(flag + "=" + (v.get<bool>() ? "true" : "false"));
  } else if (v.is_array()) {
    args.push_back(flag);
    for (const auto& e : v) args.push_back(e.is_string() ? e.get<std::string>() : e.dump());
  } else {
    args.push_back(flag);
    args.push_back(v.is_string() ? v.get<std::string>() : v.dump());
  }
}

/// Arguments from the config file for options not given on the command line.
/// Top-level keys apply to every subcommand that has the option; keys inside an
/// object named after the subcommand must all be valid for it.
std::vector<std::string> config_args(const fs::path& path, const CLI::App& sub, const std::vector<std::string>& given) {
  json doc;
  try {
    doc = json::parse(csv::read_text(path));
  } catch (const json::exception& e) {
    throw Error("bad_config", "config file is not valid JSON: " + std::string(e.what()));
  }
  if (!doc.is_object()) throw Error("bad_config", "config file must hold a JSON object");
  const auto present = [&](const std::string& flag) {
    return std::any_of(given.begin(), given.end(),
                       [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
  };
  std::vector<std::string> out;
  std::set<std::string> seen;
  const auto apply = [&](const std::string& key, const json& v, bool strict) {
    const std::string flag = flag_name(key);
    if (flag == "--config") return;
    if (!has_long_option(sub, flag)) {
      if (strict) throw Error("bad_config", "unknown config key '" + key + "' for " + sub.get_name());
      return;
    }
    if (present(flag) || seen.count(flag)) return;
    seen.insert(flag);
    append_value(out, flag, v);
  };
  if (const auto it = doc.find(sub.get_name()); it != doc.end() && it->is_object())
    for (const auto& [k, v] : it->items()) apply(k, v, true);
  for (const auto& [k, v] : doc.items()) {
    if (v.is_object()) continue;
    apply(k, v, false);
  }
  return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Breast density pipeline: histogram features, classifiers, evaluation and risk models", "busdensity"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  std::map<std::string, CLI::App*> subs;
  for (const auto& c : commands()) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_options(*sub, c.name, o);
    subs[c.name] = sub;
  }

  std::vector<std::string> effective = args;
  try {
    const auto cmd = std::find_if(args.begin(), args.end(), [](const std::string& a) { return !a.empty() && a[0] != '-'; });
    if (cmd != args.end() && subs.count(*cmd)) {
      const auto cfg = std::find(args.begin(), args.end(), "--config");
      std::string config_path;
      if (cfg != args.end() && cfg + 1 != args.end()) config_path = *(cfg + 1);
      for (const auto& a : args)
        if (a.rfind("--config=", 0) == 0) config_path = a.substr(9);
      if (!config_path.empty()) {
        const auto extra = config_args(config_path, *subs[*cmd], args);
        effective.insert(effective.end(), extra.begin(), extra.end());
      }
    }
    std::vector<std::string> reversed(effective.rbegin(), effective.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    for (const auto* sub : app.get_subcommands()) out << sub->help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::validation ? 1 : 2;
  }

  const auto* active = app.get_subcommands().front();
  const auto cmd = std::find_if(commands().begin(), commands().end(),
                                [&](const Command& c) { return active->get_name() == c.name; });
  try {
    if (!o.seed) throw Error("missing_seed", "--seed is required (flag or config)");
    Stage st(cmd->name, o, effective, out);
    fs::create_directories(st.dir());
    cmd->fn(o, st);
    st.finish();
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::validation ? 1 : 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace busdensity::cli
