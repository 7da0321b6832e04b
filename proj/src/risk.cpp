#include "busdensity/risk.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>
#include <json.hpp>

#include "busdensity/csv.hpp"
#include "busdensity/parallel.hpp"
#include "busdensity/random.hpp"

namespace busdensity::risk {

AgeScaler AgeScaler::fit(std::span<const double> ages) {
  if (ages.size() < 2) throw Error("zero_variance", "age standardization needs at least 2 ages");
  const double n = static_cast<double>(ages.size());
  AgeScaler s;
  s.mean = std::accumulate(ages.begin(), ages.end(), 0.0) / n;
  double ss = 0.0;
  for (double a : ages) ss += (a - s.mean) * (a - s.mean);
  s.sd = std::sqrt(ss / (n - 1.0));
  if (!(s.sd > 0.0) || !std::isfinite(s.sd)) throw Error("zero_variance", "ages have zero variance");
  return s;
}

std::vector<double> standardize_age(std::span<const double> ages, AgeScaler* params) {
  const AgeScaler s = AgeScaler::fit(ages);
  if (params) *params = s;
  std::vector<double> out(ages.size());
  std::transform(ages.begin(), ages.end(), out.begin(), [&](double a) { return s.apply(a); });
  return out;
}

std::vector<Density> simulate_density_draws(const DensityDistribution& dist, int n, std::uint64_t seed) {
  if (!dist.on_simplex(1e-6)) throw Error("bad_prediction", "density distribution is off the simplex");
  Rng rng(seed);
  std::vector<Density> out(static_cast<std::size_t>(std::max(n, 0)));
  for (auto& d : out) d = density_from_index(static_cast<int>(rng.categorical(dist.p)));
  return out;
}

namespace {

std::vector<int> density_columns(const FitOptions& o) {
  std::vector<int> cols;
  if (!o.with_density) return cols;
  for (int k = 0; k < kNumDensity; ++k)
    if (k != index_of(o.reference)) cols.push_back(k);
  return cols;
}

std::vector<std::string> column_names(const FitOptions& o) {
  std::vector<std::string> names{"intercept"};
  if (o.with_age) names.push_back("age");
  for (int k : density_columns(o)) names.emplace_back(1, density_code(density_from_index(k)));
  return names;
}

void design_row(const RiskDesignRow& row, const FitOptions& o, const std::vector<int>& dcols, double* out) {
  std::size_t j = 0;
  out[j++] = 1.0;
  if (o.with_age) out[j++] = row.age_std;
  for (int k : dcols) out[j++] = row.density.p[k];
}

std::size_t column_index(const RiskModel& m, const std::string& column) {
  const auto it = std::find(m.columns.begin(), m.columns.end(), column);
  if (it == m.columns.end()) throw Error("unknown_column", "model has no column '" + column + "'");
  return static_cast<std::size_t>(it - m.columns.begin());
}

}  // namespace

double RiskModel::coefficient(const std::string& column) const { return coefficients[column_index(*this, column)]; }

double RiskModel::standard_error(const std::string& column) const {
  const std::size_t j = column_index(*this, column);
  return std::sqrt(std::max(0.0, covariance[j * columns.size() + j]));
}

double RiskModel::linear_predictor(const RiskDesignRow& row) const {
  std::vector<double> x(columns.size());
  design_row(row, options, density_columns(options), x.data());
  double eta = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) eta += coefficients[j] * x[j];
  return eta;
}

RiskModel fit_risk_model(std::span<const RiskDesignRow> rows, const FitOptions& options) {
  if (rows.empty()) throw Error("empty_input", "risk model needs at least one row");
  const auto dcols = density_columns(options);
  const auto names = column_names(options);
  const auto p = static_cast<Eigen::Index>(names.size());
  const auto n = static_cast<Eigen::Index>(rows.size());

  Eigen::MatrixXd X(n, p);
  Eigen::VectorXd y(n);
  std::vector<double> buf(names.size());
  std::size_t positives = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    if (!std::isfinite(r.age_std)) throw Error("non_finite", "non-finite standardized age");
    design_row(r, options, dcols, buf.data());
    for (Eigen::Index j = 0; j < p; ++j) X(i, j) = buf[static_cast<std::size_t>(j)];
    y(i) = r.outcome ? 1.0 : 0.0;
    positives += r.outcome;
  }
  if (positives == 0 || positives == rows.size())
    throw Error("single_outcome", "risk model needs both cases and controls");

  for (Eigen::Index j = 1; j <= p; ++j) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X.leftCols(j));
    qr.setThreshold(1e-10);
    if (qr.rank() < j)
      throw Error("collinear_design", "design matrix is rank deficient at column '" +
                                          names[static_cast<std::size_t>(j - 1)] + "'");
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  RiskModel model;
  model.columns = names;
  model.options = options;
  model.n_rows = rows.size();

  bool converged = false;
  Eigen::MatrixXd info(p, p);
  for (int it = 0; it < options.max_iterations; ++it) {
    const Eigen::VectorXd eta = X * beta;
    const Eigen::VectorXd mu = eta.unaryExpr([](double e) { return 1.0 / (1.0 + std::exp(-e)); });
    const Eigen::VectorXd w = mu.array() * (1.0 - mu.array());
    const Eigen::VectorXd grad = X.transpose() * (y - mu) * inv_n;
    info = X.transpose() * w.asDiagonal() * X;
    const Eigen::VectorXd step = (info * inv_n).ldlt().solve(grad);
    model.iterations = it;
    // Under separation the gradient vanishes while Newton steps stay large.
    if (grad.lpNorm<Eigen::Infinity>() < options.tolerance && step.lpNorm<Eigen::Infinity>() < 1e-6) {
      converged = true;
      break;
    }
    beta += step;
    if (beta.lpNorm<Eigen::Infinity>() > 30.0 || !beta.allFinite())
      throw Error("quasi_separation", "coefficient magnitude exceeded 30; outcomes are (quasi-)separated");
  }
  if (!converged)
    throw Error("not_converged", "Newton-Raphson did not converge in " + std::to_string(options.max_iterations) +
                                     " iterations", ErrorKind::runtime);

  Eigen::MatrixXd cov = info.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  cov = 0.5 * (cov + cov.transpose());
  model.coefficients.assign(beta.data(), beta.data() + p);
  model.covariance.resize(static_cast<std::size_t>(p * p));
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = 0; b < p; ++b) model.covariance[static_cast<std::size_t>(a * p + b)] = cov(a, b);
  return model;
}

std::vector<OddsRatio> odds_ratios(const RiskModel& model, double z) {
  std::vector<OddsRatio> out;
  const auto add = [&](const std::string& label, const std::string& column) {
    const double b = model.coefficient(column);
    const double se = model.standard_error(column);
    out.push_back({label, std::exp(b), std::exp(b - z * se), std::exp(b + z * se), false});
  };
  if (model.options.with_density) {
    for (Density d : kAllDensities) {
      const std::string code(1, density_code(d));
      if (d == model.options.reference)
        out.push_back({code, 1.0, std::nullopt, std::nullopt, true});
      else
        add(code, code);
    }
  }
  if (model.options.with_age) add("Age", "age");
  return out;
}

std::string_view source_name(DensitySource s) noexcept {
  switch (s) {
    case DensitySource::clinical: return "clinical";
    case DensitySource::predicted: return "predicted";
    default: return "age_only";
  }
}

std::optional<DensitySource> parse_source(std::string_view s) noexcept {
  if (s == "clinical") return DensitySource::clinical;
  if (s == "predicted") return DensitySource::predicted;
  if (s == "age_only" || s == "age") return DensitySource::age_only;
  return std::nullopt;
}

namespace {

void check_subjects(std::span<const RiskSubject> subjects, DensitySource source) {
  if (subjects.empty()) throw Error("empty_input", "no women to model");
  for (const auto& s : subjects) {
    if (!std::isfinite(s.age)) throw Error("non_finite", "non-finite age for " + s.patient_id);
    if (source == DensitySource::predicted && !s.predicted)
      throw Error("missing_prediction", "no predicted density for " + s.patient_id);
  }
}

DensityDistribution observed_density(const RiskSubject& s, DensitySource source) {
  if (source == DensitySource::predicted) return *s.predicted;
  return DensityDistribution::one_hot(s.clinical);
}

}  // namespace

CvResult cv_risk_auroc(std::span<const RiskSubject> subjects, const CvConfig& cfg) {
  check_subjects(subjects, cfg.source);
  if (cfg.folds < 2) throw Error("bad_config", "cross-validation needs at least 2 folds");
  if (cfg.draws < 1) throw Error("bad_config", "draws must be positive");
  const std::size_t n = subjects.size();

  std::vector<std::size_t> cases, controls;
  for (std::size_t i = 0; i < n; ++i) (subjects[i].outcome ? cases : controls).push_back(i);
  Rng fold_rng(derive_seed(cfg.seed, 0));
  fold_rng.shuffle(std::span<std::size_t>(cases));
  fold_rng.shuffle(std::span<std::size_t>(controls));
  CvResult result;
  result.fold_of.assign(n, -1);
  std::size_t counter = 0;
  for (const auto* group : {&cases, &controls})
    for (std::size_t i : *group) result.fold_of[i] = static_cast<int>(counter++ % static_cast<std::size_t>(cfg.folds));

  for (int f = 0; f < cfg.folds; ++f) {
    std::array<std::size_t, 2> held{}, train{};
    for (std::size_t i = 0; i < n; ++i) ++(result.fold_of[i] == f ? held : train)[subjects[i].outcome];
    if (held[0] == 0 || held[1] == 0 || train[0] == 0 || train[1] == 0)
      throw Error("degenerate_fold", "fold " + std::to_string(f) + " has a single outcome class");
  }

  FitOptions opts;
  opts.reference = cfg.reference;
  opts.with_density = cfg.source != DensitySource::age_only;
  result.scores.assign(n, 0.0);
  std::vector<std::size_t> rows_per_fold(static_cast<std::size_t>(cfg.folds), 0);

  parallel_for(static_cast<std::size_t>(cfg.folds), [&](std::size_t fold) {
    const int f = static_cast<int>(fold);
    std::vector<double> train_ages;
    for (std::size_t i = 0; i < n; ++i)
      if (result.fold_of[i] != f) train_ages.push_back(subjects[i].age);
    const AgeScaler scaler = AgeScaler::fit(train_ages);

    const std::uint64_t fold_seed = derive_seed(cfg.seed, fold + 1);
    std::vector<RiskDesignRow> rows;
    for (std::size_t i = 0; i < n; ++i) {
      if (result.fold_of[i] == f) continue;
      const auto& s = subjects[i];
      const double age = scaler.apply(s.age);
      if (cfg.source == DensitySource::predicted) {
        for (Density d : simulate_density_draws(*s.predicted, cfg.draws, derive_seed(fold_seed, i)))
          rows.push_back({s.patient_id, age, DensityDistribution::one_hot(d), s.outcome});
      } else {
        rows.push_back({s.patient_id, age, DensityDistribution::one_hot(s.clinical), s.outcome});
      }
    }
    rows_per_fold[fold] = rows.size();
    const RiskModel model = fit_risk_model(rows, opts);
    for (std::size_t i = 0; i < n; ++i) {
      if (result.fold_of[i] != f) continue;
      const auto& s = subjects[i];
      result.scores[i] =
          model.linear_predictor({s.patient_id, scaler.apply(s.age), observed_density(s, cfg.source), s.outcome});
    }
  });

  result.training_rows = std::accumulate(rows_per_fold.begin(), rows_per_fold.end(), std::size_t{0});
  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = subjects[i].outcome;
  result.auc = evaluation::delong_ci(result.scores, labels);
  return result;
}

RiskModel fit_reporting_model(std::span<const RiskSubject> subjects, DensitySource source, std::uint64_t seed,
                              Density reference) {
  check_subjects(subjects, source);
  std::vector<double> ages;
  for (const auto& s : subjects) ages.push_back(s.age);
  const AgeScaler scaler = AgeScaler::fit(ages);
  std::vector<RiskDesignRow> rows;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto& s = subjects[i];
    Density d = s.clinical;
    if (source == DensitySource::predicted) d = simulate_density_draws(*s.predicted, 1, derive_seed(seed, i)).front();
    rows.push_back({s.patient_id, scaler.apply(s.age), DensityDistribution::one_hot(d), s.outcome});
  }
  FitOptions opts;
  opts.reference = reference;
  opts.with_density = source != DensitySource::age_only;
  return fit_risk_model(rows, opts);
}

std::string risk_report_json(const RiskReport& r) {
  nlohmann::json results = nlohmann::json::array();
  for (const auto& s : r.results) {
    nlohmann::json odds = nlohmann::json::array();
    for (const auto& o : s.odds) {
      odds.push_back({{"covariate", o.covariate},
                      {"odds_ratio", o.odds_ratio},
                      {"lower", o.lower ? nlohmann::json(*o.lower) : nlohmann::json(nullptr)},
                      {"upper", o.upper ? nlohmann::json(*o.upper) : nlohmann::json(nullptr)},
                      {"reference", o.reference}});
    }
    nlohmann::json entry{{"source", std::string(source_name(s.source))}, {"odds_ratios", odds}};
    if (s.note.empty())
      entry["auroc"] = {{"auc", s.auc.auc}, {"lower", s.auc.lower}, {"upper", s.auc.upper}};
    else
      entry["auroc"] = nullptr;
    entry["note"] = s.note;
    results.push_back(entry);
  }
  nlohmann::json doc{{"n_women", r.n_women}, {"n_cases", r.n_cases}, {"folds", r.folds},
                     {"draws", r.draws},     {"seed", r.seed},       {"results", results}};
  return doc.dump(2) + "\n";
}

std::string risk_report_csv(const RiskReport& r) {
  std::vector<std::string> header{"row"};
  for (const auto& s : r.results)
    for (const char* col : {"_or", "_lower", "_upper"}) header.push_back(std::string(source_name(s.source)) + col);
  csv::Writer w(header);
  for (const std::string label : {"A", "B", "C", "D", "Age"}) {
    std::vector<std::string> row{label};
    for (const auto& s : r.results) {
      const auto it = std::find_if(s.odds.begin(), s.odds.end(), [&](const OddsRatio& o) { return o.covariate == label; });
      if (it == s.odds.end()) {
        row.insert(row.end(), {"NA", "NA", "NA"});
        continue;
      }
      row.push_back(csv::fmt_fixed(it->odds_ratio, 4));
      row.push_back(it->lower ? csv::fmt_fixed(*it->lower, 4) : "NA");
      row.push_back(it->upper ? csv::fmt_fixed(*it->upper, 4) : "NA");
    }
    w.row(row);
  }
  std::vector<std::string> auc_row{"AUROC"};
  for (const auto& s : r.results) {
    if (!s.note.empty()) {
      auc_row.insert(auc_row.end(), {"NA", "NA", "NA"});
      continue;
    }
    auc_row.push_back(csv::fmt_fixed(s.auc.auc, 4));
    auc_row.push_back(csv::fmt_fixed(s.auc.lower, 4));
    auc_row.push_back(csv::fmt_fixed(s.auc.upper, 4));
  }
  w.row(auc_row);
  return w.str();
}

}  // namespace busdensity::risk
