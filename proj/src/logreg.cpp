#include <algorithm>
#include <cmath>

#include "busdensity/classifiers.hpp"
#include "busdensity/simd.hpp"

namespace busdensity::classifiers {

std::string_view penalty_name(Penalty p) noexcept {
  switch (p) {
    case Penalty::l1: return "l1";
    case Penalty::l2: return "l2";
    default: return "none";
  }
}

std::optional<Penalty> parse_penalty(std::string_view s) noexcept {
  if (s == "l1") return Penalty::l1;
  if (s == "l2") return Penalty::l2;
  if (s == "none") return Penalty::none;
  return std::nullopt;
}

LogRegParams pack(const LogRegModel& m) {
  LogRegParams p{};
  for (int k = 0; k < kNumDensity; ++k) {
    std::copy(m.weights[k].begin(), m.weights[k].end(), p.begin() + k * kNumBins);
    p[kNumDensity * kNumBins + k] = m.bias[k];
  }
  return p;
}

void unpack(const LogRegParams& p, LogRegModel& m) {
  for (int k = 0; k < kNumDensity; ++k) {
    std::copy_n(p.begin() + k * kNumBins, kNumBins, m.weights[k].begin());
    m.bias[k] = p[kNumDensity * kNumBins + k];
  }
}

namespace {

constexpr std::size_t kWeightCount = kNumDensity * kNumBins;

double penalty_scale(const LogRegConfig& cfg, std::size_t n) {
  return 1.0 / (cfg.C * static_cast<double>(n));
}

double l1_term(const LogRegParams& p, const LogRegConfig& cfg, std::size_t n) {
  if (cfg.penalty != Penalty::l1) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < kWeightCount; ++i) s += std::fabs(p[i]);
  return s * penalty_scale(cfg, n);
}

// Soft-thresholds the weights (not the biases) by `threshold`.
void soft_threshold(LogRegParams& p, double threshold) {
  for (std::size_t i = 0; i < kWeightCount; ++i) {
    const double v = p[i];
    p[i] = v > threshold ? v - threshold : (v < -threshold ? v + threshold : 0.0);
  }
}

}  // namespace

double logreg_smooth_loss(const LogRegParams& params, const Dataset& data, const LogRegConfig& cfg,
                          LogRegParams* grad) {
  const auto& k = simd::active();
  const std::size_t n = data.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  if (grad) grad->fill(0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = data.X[i].data();
    std::array<double, kNumDensity> z{};
    for (int c = 0; c < kNumDensity; ++c)
      z[c] = params[kWeightCount + c] + k.dot_f64(params.data() + c * kNumBins, x, kNumBins);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    const int label = index_of(data.y[i]);
    loss += lse - z[label];
    if (grad) {
      for (int c = 0; c < kNumDensity; ++c) {
        const double r = (std::exp(z[c] - lse) - (c == label ? 1.0 : 0.0)) * inv_n;
        k.axpy_f64(r, x, grad->data() + c * kNumBins, kNumBins);
        (*grad)[kWeightCount + c] += r;
      }
    }
  }
  loss *= inv_n;
  if (cfg.penalty == Penalty::l2) {
    const double s = penalty_scale(cfg, n);
    double sq = 0.0;
    for (std::size_t i = 0; i < kWeightCount; ++i) {
      sq += params[i] * params[i];
      if (grad) (*grad)[i] += s * params[i];
    }
    loss += 0.5 * s * sq;
  }
  return loss;
}

double logreg_objective(const LogRegParams& params, const Dataset& data, const LogRegConfig& cfg) {
  return logreg_smooth_loss(params, data, cfg) + l1_term(params, cfg, data.size());
}

LogRegModel train_logreg(const Dataset& data, const LogRegConfig& cfg, std::vector<double>* trace) {
  data.validate();
  if (!(cfg.C > 0)) throw Error("bad_config", "C must be positive");
  const std::size_t n = data.size();
  const double l1 = cfg.penalty == Penalty::l1 ? penalty_scale(cfg, n) : 0.0;

  // Proximal step from `from` with gradient g and step 1/L.
  const auto prox_step = [&](const LogRegParams& from, const LogRegParams& g, double L) {
    LogRegParams out;
    for (std::size_t i = 0; i < kLogRegParams; ++i) out[i] = from[i] - g[i] / L;
    if (l1 > 0) soft_threshold(out, l1 / L);
    return out;
  };
  const auto max_abs_diff = [](const LogRegParams& a, const LogRegParams& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < kLogRegParams; ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
  };

  LogRegParams x{};
  LogRegParams y = x;
  double objective_x = logreg_objective(x, data, cfg);
  double t = 1.0;
  double L = 0.05;

  LogRegModel model;
  model.config = cfg;
  model.training_digest = data.digest();
  if (trace) trace->clear();

  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    LogRegParams g;
    const double fy = logreg_smooth_loss(y, data, cfg, &g);
    LogRegParams z;
    double fz = 0.0;
    for (;;) {
      z = prox_step(y, g, L);
      fz = logreg_smooth_loss(z, data, cfg);
      double lin = 0.0, sq = 0.0;
      for (std::size_t i = 0; i < kLogRegParams; ++i) {
        const double d = z[i] - y[i];
        lin += g[i] * d;
        sq += d * d;
      }
      if (fz <= fy + lin + 0.5 * L * sq + 1e-15 * std::fabs(fy)) break;
      L *= 2.0;
    }
    const double objective_z = fz + l1_term(z, cfg, n);
    const double mapping_at_y = L * max_abs_diff(y, z);

    const LogRegParams x_prev = x;
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    if (objective_z <= objective_x) {
      x = z;
      objective_x = objective_z;
      for (std::size_t i = 0; i < kLogRegParams; ++i)
        y[i] = x[i] + ((t - 1.0) / t_next) * (x[i] - x_prev[i]);
      t = t_next;
    } else {
      // Momentum overshot: keep x and restart acceleration from it.
      y = x;
      t = 1.0;
    }
    if (trace) trace->push_back(objective_x);
    model.iterations = iter;

    if (mapping_at_y < cfg.tolerance) {
      LogRegParams gx;
      logreg_smooth_loss(x, data, cfg, &gx);
      if (L * max_abs_diff(x, prox_step(x, gx, L)) < cfg.tolerance) {
        model.converged = true;
        break;
      }
    }
  }
  unpack(x, model);
  return model;
}

DensityDistribution predict_proba(const LogRegModel& m, const FeatureVector& x) {
  const auto& k = simd::active();
  std::array<double, kNumDensity> z{};
  for (int c = 0; c < kNumDensity; ++c) z[c] = m.bias[c] + k.dot_f64(m.weights[c].data(), x.data(), kNumBins);
  return softmax(z);
}

}  // namespace busdensity::classifiers
