#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "busdensity/classifiers.hpp"
#include "busdensity/random.hpp"
#include "busdensity/simd.hpp"

namespace busdensity::classifiers {

MlpModel MlpModel::zeros(int hidden) {
  MlpModel m;
  m.hidden = hidden;
  const auto h = static_cast<std::size_t>(hidden);
  m.w1.assign(kNumBins * h, 0.0);
  m.b1.assign(h, 0.0);
  m.w2.assign(kNumDensity * h, 0.0);
  m.b2.assign(kNumDensity, 0.0);
  return m;
}

MlpModel init_mlp(const MlpConfig& cfg) {
  if (cfg.hidden < 1) throw Error("bad_config", "hidden layer width must be positive");
  MlpModel m = MlpModel::zeros(cfg.hidden);
  m.config = cfg;
  Rng rng(cfg.seed);
  const double bound1 = std::sqrt(6.0 / (kNumBins + cfg.hidden));
  const double bound2 = std::sqrt(6.0 / (cfg.hidden + kNumDensity));
  for (double& w : m.w1) w = rng.uniform(-bound1, bound1);
  for (double& w : m.w2) w = rng.uniform(-bound2, bound2);
  return m;
}

double mlp_loss(const MlpModel& model, std::span<const FeatureVector> X, std::span<const Density> y, double alpha,
                MlpModel* grad) {
  if (X.size() != y.size()) throw Error("shape_mismatch", "feature and label counts differ");
  if (X.empty()) throw Error("empty_input", "loss over zero rows");
  const auto& k = simd::active();
  const auto H = static_cast<std::size_t>(model.hidden);
  const double inv_n = 1.0 / static_cast<double>(X.size());
  if (grad) *grad = MlpModel::zeros(model.hidden);

  std::vector<double> h(H), dh(H);
  double loss = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    const FeatureVector& x = X[i];
    std::copy(model.b1.begin(), model.b1.end(), h.begin());
    for (int j = 0; j < kNumBins; ++j) k.axpy_f64(x[j], model.w1.data() + j * H, h.data(), H);
    k.relu_f64(h.data(), H);

    std::array<double, kNumDensity> z;
    for (int c = 0; c < kNumDensity; ++c) z[c] = model.b2[c] + k.dot_f64(model.w2.data() + c * H, h.data(), H);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    const int label = index_of(y[i]);
    loss += lse - z[label];
    if (!grad) continue;

    std::fill(dh.begin(), dh.end(), 0.0);
    for (int c = 0; c < kNumDensity; ++c) {
      const double dz = (std::exp(z[c] - lse) - (c == label ? 1.0 : 0.0)) * inv_n;
      grad->b2[c] += dz;
      k.axpy_f64(dz, h.data(), grad->w2.data() + c * H, H);
      k.axpy_f64(dz, model.w2.data() + c * H, dh.data(), H);
    }
    k.relu_backward_f64(h.data(), dh.data(), H);
    k.axpy_f64(1.0, dh.data(), grad->b1.data(), H);
    for (int j = 0; j < kNumBins; ++j) k.axpy_f64(x[j], dh.data(), grad->w1.data() + j * H, H);
  }
  loss *= inv_n;

  if (alpha > 0) {
    const double s = alpha * inv_n;
    double sq = k.dot_f64(model.w1.data(), model.w1.data(), model.w1.size()) +
                k.dot_f64(model.w2.data(), model.w2.data(), model.w2.size());
    loss += 0.5 * s * sq;
    if (grad) {
      k.axpy_f64(s, model.w1.data(), grad->w1.data(), model.w1.size());
      k.axpy_f64(s, model.w2.data(), grad->w2.data(), model.w2.size());
    }
  }
  return loss;
}

namespace {

struct AdamState {
  MlpModel m, v;
  long step = 0;
};

void adam_update(MlpModel& model, const MlpModel& grad, AdamState& st, const MlpConfig& cfg) {
  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  const double lr = cfg.learning_rate * std::sqrt(c2) / c1;
  const std::array<std::vector<double>*, 4> params{&model.w1, &model.b1, &model.w2, &model.b2};
  const std::array<const std::vector<double>*, 4> grads{&grad.w1, &grad.b1, &grad.w2, &grad.b2};
  const std::array<std::vector<double>*, 4> ms{&st.m.w1, &st.m.b1, &st.m.w2, &st.m.b2};
  const std::array<std::vector<double>*, 4> vs{&st.v.w1, &st.v.b1, &st.v.w2, &st.v.b2};
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = *params[t];
    const auto& g = *grads[t];
    auto& m = *ms[t];
    auto& v = *vs[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      p[i] -= lr * m[i] / (std::sqrt(v[i]) + cfg.epsilon);
    }
  }
}

}  // namespace

MlpModel train_mlp(const Dataset& train, const Dataset& validation, const MlpConfig& cfg) {
  train.validate();
  if (validation.size() == 0) throw Error("empty_validation", "MLP training needs a non-empty validation set");
  if (validation.X.size() != validation.y.size()) throw Error("shape_mismatch", "validation shapes differ");
  if (cfg.batch_size < 1 || cfg.patience < 1 || cfg.max_epochs < 1 || !(cfg.learning_rate > 0))
    throw Error("bad_config", "invalid MLP hyperparameters");

  MlpModel model = init_mlp(cfg);
  model.training_digest = train.digest();
  AdamState adam{MlpModel::zeros(cfg.hidden), MlpModel::zeros(cfg.hidden)};
  Rng rng(derive_seed(cfg.seed, 1));

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<FeatureVector> bx;
  std::vector<Density> by;
  MlpModel grad;

  MlpModel best = model;
  double best_loss = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int stale = 0;
  std::vector<double> train_curve, val_curve;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      bx.clear();
      by.clear();
      for (std::size_t i = start; i < end; ++i) {
        bx.push_back(train.X[order[i]]);
        by.push_back(train.y[order[i]]);
      }
      epoch_loss += mlp_loss(model, bx, by, cfg.alpha, &grad) * static_cast<double>(end - start);
      adam_update(model, grad, adam, cfg);
    }
    train_curve.push_back(epoch_loss / static_cast<double>(order.size()));
    const double val_loss = mlp_loss(model, validation.X, validation.y, 0.0);
    val_curve.push_back(val_loss);
    if (val_loss < best_loss) {
      best_loss = val_loss;
      best_epoch = epoch;
      best = model;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  best.config = cfg;
  best.best_epoch = best_epoch;
  best.best_validation_loss = best_loss;
  best.training_curve = std::move(train_curve);
  best.validation_curve = std::move(val_curve);
  best.training_digest = train.digest();
  return best;
}

DensityDistribution predict_proba(const MlpModel& m, const FeatureVector& x) {
  if (m.hidden < 1 || m.w1.empty()) throw Error("untrained_model", "MLP has no parameters");
  const auto& k = simd::active();
  const auto H = static_cast<std::size_t>(m.hidden);
  std::vector<double> h(m.b1);
  for (int j = 0; j < kNumBins; ++j) k.axpy_f64(x[j], m.w1.data() + j * H, h.data(), H);
  k.relu_f64(h.data(), H);
  std::array<double, kNumDensity> z;
  for (int c = 0; c < kNumDensity; ++c) z[c] = m.b2[c] + k.dot_f64(m.w2.data() + c * H, h.data(), H);
  return softmax(z);
}

}  // namespace busdensity::classifiers
