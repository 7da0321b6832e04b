#include "busdensity/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include <boost/math/distributions/normal.hpp>
#include <json.hpp>

#include "busdensity/csv.hpp"
#include "busdensity/parallel.hpp"

namespace busdensity::evaluation {

DensityDistribution aggregate_mean(std::span<const DensityDistribution> preds) {
  if (preds.empty()) throw Error("empty_input", "cannot aggregate zero images");
  DensityDistribution out;
  for (const auto& d : preds)
    for (int k = 0; k < kNumDensity; ++k) out.p[k] += d.p[k];
  for (double& v : out.p) v /= static_cast<double>(preds.size());
  return out;
}

Density aggregate_vote_round(std::span<const DensityDistribution> preds) {
  if (preds.empty()) throw Error("empty_input", "cannot aggregate zero images");
  long sum = 0;
  for (const auto& d : preds) sum += index_of(d.argmax());
  const long code = round_half_away(static_cast<double>(sum) / static_cast<double>(preds.size()));
  return density_from_index(static_cast<int>(std::clamp(code, 0L, 3L)));
}

std::string_view aggregation_name(AggregationMode m) noexcept {
  return m == AggregationMode::mean ? "mean" : "vote_round";
}

std::optional<AggregationMode> parse_aggregation(std::string_view s) noexcept {
  if (s == "mean") return AggregationMode::mean;
  if (s == "vote_round" || s == "vote") return AggregationMode::vote_round;
  return std::nullopt;
}

namespace {

void check_binary_input(std::span<const double> scores, std::span<const std::uint8_t> labels,
                        std::size_t& n_pos, std::size_t& n_neg) {
  if (scores.size() != labels.size()) throw Error("shape_mismatch", "scores and labels differ in length");
  n_pos = n_neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw Error("non_finite", "scores must be finite");
    if (labels[i] > 1) throw Error("bad_label", "labels must be 0 or 1");
    (labels[i] ? n_pos : n_neg)++;
  }
  if (n_pos == 0 || n_neg == 0) throw Error("degenerate_labels", "degenerate labels: both classes are required");
}

/// 1-based midranks of `values` (ties share the average rank).
std::vector<double> midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double auc_from_ranks(std::span<const double> ranks, std::span<const std::uint8_t> labels, std::size_t n_pos,
                      std::size_t n_neg) {
  double r = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i)
    if (labels[i]) r += ranks[i];
  const double np = static_cast<double>(n_pos);
  return (r - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

double sample_variance(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / (n - 1.0);
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  std::size_t n_pos = 0, n_neg = 0;
  check_binary_input(scores, labels, n_pos, n_neg);
  return auc_from_ranks(midranks(scores), labels, n_pos, n_neg);
}

void micro_pool(std::span<const DensityDistribution> preds, std::span<const Density> truth,
                std::vector<double>& scores, std::vector<std::uint8_t>& labels) {
  if (preds.size() != truth.size()) throw Error("shape_mismatch", "predictions and truth differ in length");
  scores.clear();
  labels.clear();
  scores.reserve(preds.size() * kNumDensity);
  labels.reserve(preds.size() * kNumDensity);
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (int k = 0; k < kNumDensity; ++k) {
      scores.push_back(preds[i].p[k]);
      labels.push_back(index_of(truth[i]) == k ? 1 : 0);
    }
}

double micro_ovr_auroc(std::span<const DensityDistribution> preds, std::span<const Density> truth) {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  micro_pool(preds, truth, scores, labels);
  std::set<Density> present(truth.begin(), truth.end());
  if (present.size() < 2) throw Error("degenerate_labels", "degenerate labels: fewer than 2 density classes");
  return auroc(scores, labels);
}

DelongResult delong_ci(std::span<const double> scores, std::span<const std::uint8_t> labels, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("bad_config", "alpha must lie in (0, 1)");
  std::size_t n_pos = 0, n_neg = 0;
  check_binary_input(scores, labels, n_pos, n_neg);
  if (n_pos < 2 || n_neg < 2)
    throw Error("insufficient_classes", "DeLong needs at least 2 positives and 2 negatives");

  std::vector<double> pos, neg;
  pos.reserve(n_pos);
  neg.reserve(n_neg);
  for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] ? pos : neg).push_back(scores[i]);
  const auto tz = midranks(scores);
  const auto tx = midranks(pos);
  const auto ty = midranks(neg);

  std::vector<double> v10, v01;
  v10.reserve(n_pos);
  v01.reserve(n_neg);
  std::size_t ip = 0, in = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i])
      v10.push_back((tz[i] - tx[ip++]) / static_cast<double>(n_neg));
    else
      v01.push_back(1.0 - (tz[i] - ty[in++]) / static_cast<double>(n_pos));
  }

  DelongResult r;
  r.auc = auc_from_ranks(tz, labels, n_pos, n_neg);
  r.variance = sample_variance(v10) / static_cast<double>(n_pos) + sample_variance(v01) / static_cast<double>(n_neg);
  if (r.variance < 0.0) r.variance = 0.0;
  const double z = boost::math::quantile(boost::math::normal(), 1.0 - alpha / 2.0);
  const double half = z * std::sqrt(r.variance);
  r.lower = std::clamp(r.auc - half, 0.0, 1.0);
  r.upper = std::clamp(r.auc + half, 0.0, 1.0);
  return r;
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  std::size_t n_pos = 0, n_neg = 0;
  check_binary_input(scores, labels, n_pos, n_neg);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> out{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) (labels[order[i++]] ? tp : fp)++;
    out.push_back({s, static_cast<double>(fp) / static_cast<double>(n_neg),
                   static_cast<double>(tp) / static_cast<double>(n_pos)});
  }
  return out;
}

double kendall_tau_b(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("shape_mismatch", "x and y differ in length");
  const std::size_t n = x.size();
  if (n < 2) throw Error("undefined_tau", "tau-b needs at least 2 observations");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw Error("non_finite", "tau-b inputs must be finite");

  std::vector<std::pair<double, double>> pts(n);
  for (std::size_t i = 0; i < n; ++i) pts[i] = {x[i], y[i]};
  std::sort(pts.begin(), pts.end());

  const auto tie_pairs = [](std::size_t t) { return static_cast<std::int64_t>(t) * (static_cast<std::int64_t>(t) - 1) / 2; };
  std::int64_t n1 = 0, n3 = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && pts[j].first == pts[i].first) ++j;
    n1 += tie_pairs(j - i);
    for (std::size_t a = i; a < j;) {
      std::size_t b = a;
      while (b < j && pts[b].second == pts[a].second) ++b;
      n3 += tie_pairs(b - a);
      a = b;
    }
    i = j;
  }

  // Bottom-up merge sort of y counting strict inversions.
  std::vector<double> ys(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = pts[i].second;
  std::int64_t swaps = 0;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo < n; lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, n), hi = std::min(lo + 2 * width, n);
      std::size_t a = lo, b = mid, o = lo;
      while (a < mid && b < hi) {
        if (ys[b] < ys[a]) {
          swaps += static_cast<std::int64_t>(mid - a);
          buf[o++] = ys[b++];
        } else {
          buf[o++] = ys[a++];
        }
      }
      while (a < mid) buf[o++] = ys[a++];
      while (b < hi) buf[o++] = ys[b++];
    }
    ys.swap(buf);
  }

  std::int64_t n2 = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && ys[j] == ys[i]) ++j;
    n2 += tie_pairs(j - i);
    i = j;
  }
  const std::int64_t n0 = tie_pairs(n);
  if (n0 == n1 || n0 == n2) throw Error("undefined_tau", "tau-b undefined: all values tied in x or y");
  const std::int64_t s = n0 - n1 - n2 + n3 - 2 * swaps;
  return static_cast<double>(s) / std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
}

// ---------------------------------------------------------------------------

void PredictionSet::validate() const {
  if (rows.empty()) throw Error("empty_predictions", "prediction set is empty");
  for (const auto& r : rows) {
    if (!truth.count(r.patient_id))
      throw Error("missing_truth", "no ground-truth density for patient " + r.patient_id);
    if (!r.dist.on_simplex(1e-6)) throw Error("bad_prediction", "prediction for " + r.image_id + " is off the simplex");
  }
}

std::vector<PatientPrediction> aggregate_patients(std::span<const PredictionRow> rows) {
  std::map<std::string, std::vector<DensityDistribution>> groups;
  for (const auto& r : rows) groups[r.patient_id].push_back(r.dist);
  std::vector<PatientPrediction> out;
  out.reserve(groups.size());
  for (const auto& [pid, dists] : groups)
    out.push_back({pid, dists.size(), aggregate_mean(dists), aggregate_vote_round(dists)});
  return out;
}

std::string_view level_name(Level l) noexcept { return l == Level::image ? "image" : "patient"; }

std::optional<Level> parse_level(std::string_view s) noexcept {
  if (s == "image") return Level::image;
  if (s == "patient") return Level::patient;
  return std::nullopt;
}

namespace {

struct Instance {
  std::string patient_id;
  DensityDistribution dist;
  Density truth;
  Density predicted;
};

AucCell auc_cell(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t neg = labels.size() - pos;
  if (pos < 2 || neg < 2) return {std::nullopt, "not estimable: fewer than 2 positives or negatives"};
  return {delong_ci(scores, labels), ""};
}

EvalBlock evaluate_block(const std::string& name, std::span<const Instance> inst) {
  EvalBlock b;
  b.subgroup = name;
  b.n = inst.size();
  for (const auto& i : inst) ++b.class_counts[index_of(i.truth)];
  const auto present = std::count_if(b.class_counts.begin(), b.class_counts.end(), [](auto c) { return c > 0; });
  if (present < 2) {
    b.note = "not estimable: fewer than 2 density classes";
    for (auto& c : b.per_class) c.note = b.note;
    b.micro.note = b.dense.note = b.note;
    return b;
  }

  std::vector<double> scores(inst.size());
  std::vector<std::uint8_t> labels(inst.size());
  for (int k = 0; k < kNumDensity; ++k) {
    for (std::size_t i = 0; i < inst.size(); ++i) {
      scores[i] = inst[i].dist.p[k];
      labels[i] = index_of(inst[i].truth) == k;
    }
    b.per_class[k] = auc_cell(scores, labels);
  }
  for (std::size_t i = 0; i < inst.size(); ++i) {
    scores[i] = inst[i].dist[Density::C] + inst[i].dist[Density::D];
    labels[i] = index_of(inst[i].truth) >= index_of(Density::C);
  }
  b.dense = auc_cell(scores, labels);

  std::vector<DensityDistribution> dists;
  std::vector<Density> truth;
  for (const auto& i : inst) {
    dists.push_back(i.dist);
    truth.push_back(i.truth);
  }
  std::vector<double> pooled;
  std::vector<std::uint8_t> pooled_labels;
  micro_pool(dists, truth, pooled, pooled_labels);
  b.micro = auc_cell(pooled, pooled_labels);

  std::vector<double> tx, ty;
  for (const auto& i : inst) {
    tx.push_back(index_of(i.truth));
    ty.push_back(index_of(i.predicted));
  }
  try {
    b.tau_b = kendall_tau_b(tx, ty);
  } catch (const Error& e) {
    if (e.code() != "undefined_tau") throw;
    b.note = "tau-b undefined: predicted densities all tied";
  }
  return b;
}

}  // namespace

EvalReport evaluate(const PredictionSet& preds, Level level, const std::vector<std::string>& subgroup_tags) {
  preds.validate();
  std::vector<Instance> instances;
  if (level == Level::image) {
    for (const auto& r : preds.rows)
      instances.push_back({r.patient_id, r.dist, preds.truth.at(r.patient_id), r.dist.argmax()});
  } else {
    for (const auto& p : aggregate_patients(preds.rows))
      instances.push_back({p.patient_id, p.dist, preds.truth.at(p.patient_id), p.vote});
  }

  std::set<Density> present;
  for (const auto& i : instances) present.insert(i.truth);
  if (present.size() < 2) throw Error("degenerate_labels", "degenerate labels: predictions cover fewer than 2 classes");

  std::vector<std::pair<std::string, std::vector<Instance>>> groups{{"overall", instances}};
  for (const auto& tag : subgroup_tags) {
    std::map<std::string, std::vector<Instance>> by_value;
    for (const auto& i : instances) {
      const auto it = preds.tags.find(i.patient_id);
      if (it == preds.tags.end()) continue;
      const auto v = it->second.find(tag);
      if (v != it->second.end()) by_value[v->second].push_back(i);
    }
    for (auto& [value, members] : by_value) groups.emplace_back(tag + "=" + value, std::move(members));
  }

  EvalReport report;
  report.level = level;
  report.blocks.resize(groups.size());
  parallel_for(groups.size(), [&](std::size_t g) { report.blocks[g] = evaluate_block(groups[g].first, groups[g].second); });

  std::vector<DensityDistribution> dists;
  std::vector<Density> truth;
  for (const auto& i : instances) {
    dists.push_back(i.dist);
    truth.push_back(i.truth);
  }
  std::vector<double> pooled;
  std::vector<std::uint8_t> labels;
  micro_pool(dists, truth, pooled, labels);
  report.micro_roc = roc_curve(pooled, labels);
  return report;
}

namespace {

nlohmann::json cell_json(const AucCell& c) {
  if (!c.value) return {{"auc", nullptr}, {"note", c.note}};
  return {{"auc", c.value->auc}, {"lower", c.value->lower}, {"upper", c.value->upper}, {"variance", c.value->variance}};
}

}  // namespace

std::string report_json(const EvalReport& r, const std::string& model_name) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : r.blocks) {
    nlohmann::json per_class;
    nlohmann::json counts;
    for (int k = 0; k < kNumDensity; ++k) {
      const std::string code(1, density_code(density_from_index(k)));
      per_class[code] = cell_json(b.per_class[k]);
      counts[code] = b.class_counts[k];
    }
    blocks.push_back({{"subgroup", b.subgroup},
                      {"n", b.n},
                      {"class_counts", counts},
                      {"micro", cell_json(b.micro)},
                      {"dense_vs_nondense", cell_json(b.dense)},
                      {"per_class", per_class},
                      {"kendall_tau_b", b.tau_b ? nlohmann::json(*b.tau_b) : nlohmann::json(nullptr)},
                      {"note", b.note}});
  }
  nlohmann::json doc{{"model", model_name}, {"level", std::string(level_name(r.level))}, {"blocks", blocks}};
  return doc.dump(2) + "\n";
}

std::string report_csv(const EvalReport& r, const std::string& model_name) {
  std::vector<std::string> header{"model", "level", "subgroup", "n"};
  const auto add_cols = [&](const std::string& prefix) {
    for (const char* s : {"_auc", "_lower", "_upper"}) header.push_back(prefix + s);
  };
  add_cols("micro");
  add_cols("dense");
  for (Density d : kAllDensities) add_cols(std::string(1, density_code(d)));
  header.push_back("tau_b");
  header.push_back("note");
  csv::Writer w(header);
  for (const auto& b : r.blocks) {
    std::vector<std::string> row{model_name, std::string(level_name(r.level)), b.subgroup, std::to_string(b.n)};
    const auto add_cell = [&](const AucCell& c) {
      if (!c.value) {
        row.insert(row.end(), {"NA", "NA", "NA"});
        return;
      }
      row.push_back(csv::fmt_fixed(c.value->auc, 6));
      row.push_back(csv::fmt_fixed(c.value->lower, 6));
      row.push_back(csv::fmt_fixed(c.value->upper, 6));
    };
    add_cell(b.micro);
    add_cell(b.dense);
    for (const auto& c : b.per_class) add_cell(c);
    row.push_back(b.tau_b ? csv::fmt_fixed(*b.tau_b, 6) : "NA");
    row.push_back(b.note);
    w.row(row);
  }
  return w.str();
}

std::string roc_csv(std::span<const RocPoint> points) {
  csv::Writer w({"threshold", "fpr", "tpr"});
  for (const auto& p : points)
    w.row({std::isinf(p.threshold) ? "inf" : csv::fmt_double(p.threshold), csv::fmt_double(p.fpr),
           csv::fmt_double(p.tpr)});
  return w.str();
}

const std::vector<std::string>& prediction_header() {
  static const std::vector<std::string> h{"image_id", "patient_id", "pA", "pB", "pC", "pD"};
  return h;
}

std::string write_predictions(std::span<const PredictionRow> rows) {
  csv::Writer w(prediction_header());
  for (const auto& r : rows)
    w.row({r.image_id, r.patient_id, csv::fmt_double(r.dist.p[0]), csv::fmt_double(r.dist.p[1]),
           csv::fmt_double(r.dist.p[2]), csv::fmt_double(r.dist.p[3])});
  return w.str();
}

namespace {

std::vector<PredictionRow> predictions_from(const csv::Table& t) {
  csv::require_header(t, prediction_header(), "prediction CSV");
  std::vector<PredictionRow> out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const std::string where = "prediction line " + std::to_string(t.lines[i]);
    PredictionRow r;
    r.image_id = row[0];
    r.patient_id = row[1];
    if (r.image_id.empty() || r.patient_id.empty()) throw Error("bad_field", where + ": empty id");
    for (int k = 0; k < kNumDensity; ++k) r.dist.p[k] = csv::to_double(row[2 + k], where);
    if (!r.dist.on_simplex(1e-6)) throw Error("bad_prediction", where + ": probabilities are not on the simplex");
    if (!seen.insert(r.image_id).second) throw Error("duplicate_image", where + ": duplicate image " + r.image_id);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

std::vector<PredictionRow> read_predictions(const std::filesystem::path& path) {
  return predictions_from(csv::read(path));
}

std::vector<PredictionRow> parse_predictions(std::string_view text) { return predictions_from(csv::parse(text)); }

std::string write_patient_predictions(std::span<const PatientPrediction> rows) {
  csv::Writer w({"patient_id", "n_images", "pA", "pB", "pC", "pD", "vote"});
  for (const auto& r : rows)
    w.row({r.patient_id, std::to_string(r.n_images), csv::fmt_double(r.dist.p[0]), csv::fmt_double(r.dist.p[1]),
           csv::fmt_double(r.dist.p[2]), csv::fmt_double(r.dist.p[3]), std::string(1, density_code(r.vote))});
  return w.str();
}

std::map<std::string, std::map<std::string, std::string>> read_tags(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  csv::require_header(t, {"patient_id", "tag", "value"}, "tags CSV");
  std::map<std::string, std::map<std::string, std::string>> out;
  for (const auto& row : t.rows) out[row[0]][row[1]] = row[2];
  return out;
}

std::string write_tags(const std::map<std::string, std::map<std::string, std::string>>& tags) {
  csv::Writer w({"patient_id", "tag", "value"});
  for (const auto& [pid, kv] : tags)
    for (const auto& [k, v] : kv) w.row({pid, k, v});
  return w.str();
}

}  // namespace busdensity::evaluation
