#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "busdensity/classifiers.hpp"
#include "busdensity/random.hpp"
#include "busdensity/simd.hpp"
#include "support.hpp"

using namespace busdensity;
using namespace busdensity::classifiers;

namespace {

/// Four Gaussian clusters, one per class, centred on different bins.
Dataset clusters(std::uint64_t seed, int per_class, double spread = 0.05) {
  Rng r(seed);
  Dataset d;
  for (int i = 0; i < per_class; ++i)
    for (int k = 0; k < kNumDensity; ++k) {
      FeatureVector x{};
      for (auto& v : x) v = std::fabs(r.normal(0.0, spread));
      x[4 * k] += 1.0;
      d.X.push_back(x);
      d.y.push_back(density_from_index(k));
    }
  return d;
}

Dataset random_batch(Rng& r, std::size_t n) {
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    FeatureVector x{};
    for (auto& v : x) v = r.uniform();
    d.X.push_back(x);
    d.y.push_back(density_from_index(static_cast<int>(r.index(4))));
  }
  return d;
}

double accuracy(const Model& m, const Dataset& d) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < d.size(); ++i) hit += predict_proba(m, d.X[i]).argmax() == d.y[i];
  return static_cast<double>(hit) / static_cast<double>(d.size());
}

std::vector<FeatureVector> probes(std::uint64_t seed, int n) {
  Rng r(seed);
  std::vector<FeatureVector> out(n);
  for (auto& x : out)
    for (auto& v : x) v = r.uniform(0.0, 1.2);
  return out;
}

std::vector<double> mlp_params(MlpModel m) {
  std::vector<double> out;
  m.for_each_parameter([&](double& p) { out.push_back(p); });
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Datasets

TEST_CASE("datasets need two classes and finite features") {
  Dataset d;
  d.X = {FeatureVector{}, FeatureVector{}};
  d.y = {Density::A, Density::A};
  CHECK_THROWS_WITH_AS(d.validate(), doctest::Contains("single_class"), Error);
  d.y[1] = Density::C;
  CHECK_NOTHROW(d.validate());
  d.X[0][3] = std::nan("");
  CHECK_THROWS_WITH_AS(d.validate(), doctest::Contains("non_finite"), Error);
  CHECK_THROWS_AS(train_logreg(d), Error);
  CHECK_THROWS_AS(train_forest(d), Error);
}

TEST_CASE("dataset digest tracks content") {
  auto d = clusters(1, 5);
  const auto digest = d.digest();
  CHECK(digest == clusters(1, 5).digest());
  d.y[0] = Density::D;
  CHECK(d.digest() != digest);
}

// ---------------------------------------------------------------------------
// Logistic regression

TEST_CASE("zero-weight logistic model predicts uniform") {
  LogRegModel m;
  const auto p = predict_proba(m, probes(1, 1)[0]);
  for (double v : p.p) CHECK(v == 0.25);
}

TEST_CASE("softmax is stable for large logits") {
  const auto p = softmax({1000.0, 999.0, -1000.0, 0.0});
  CHECK(p.on_simplex());
  CHECK(p.p[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
}

TEST_CASE("logistic gradient matches central differences") {
  Rng r(31);
  for (Penalty pen : {Penalty::none, Penalty::l2, Penalty::l1}) {
    for (int batch = 0; batch < 10; ++batch) {
      const auto data = random_batch(r, 8);
      LogRegConfig cfg;
      cfg.penalty = pen;
      cfg.C = 0.5;
      LogRegParams params;
      for (auto& p : params) p = r.normal(0.0, 0.5);
      LogRegParams grad{};
      logreg_smooth_loss(params, data, cfg, &grad);
      std::vector<double> analytic(grad.begin(), grad.end()), numeric;
      auto f = [&](const LogRegParams& p) { return logreg_smooth_loss(p, data, cfg); };
      for (std::size_t i = 0; i < params.size(); ++i) numeric.push_back(oracle::central_difference(f, params, i, 1e-5));
      CHECK(oracle::relative_error(analytic, numeric) < 1e-5);
    }
  }
}

TEST_CASE("logistic regression separates clusters") {
  const auto d = clusters(2, 30);
  const auto m = train_logreg(d);
  CHECK(accuracy(m, d) == 1.0);
  CHECK(m.training_digest == d.digest());
  for (const auto& x : probes(3, 50)) CHECK(predict_proba(m, x).on_simplex(1e-9));
}

TEST_CASE("objective is non-increasing per iteration") {
  for (Penalty pen : {Penalty::l1, Penalty::l2, Penalty::none}) {
    LogRegConfig cfg;
    cfg.penalty = pen;
    cfg.C = 1.0;
    cfg.max_iterations = 300;
    std::vector<double> trace;
    Rng r(7);
    train_logreg(random_batch(r, 120), cfg, &trace);
    REQUIRE(trace.size() > 1);
    for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1] + 1e-15);
  }
}

TEST_CASE("strong L2 shrinks weights and predicts class priors") {
  Rng r(9);
  auto d = random_batch(r, 200);
  const auto counts = d.class_counts();
  LogRegConfig cfg;
  cfg.penalty = Penalty::l2;
  cfg.C = 1e-7;
  const auto m = train_logreg(d, cfg);
  for (const auto& w : m.weights)
    for (double v : w) CHECK(std::fabs(v) < 1e-4);
  for (const auto& x : probes(4, 20)) {
    const auto p = predict_proba(m, x);
    for (int k = 0; k < kNumDensity; ++k) CHECK(p.p[k] == doctest::Approx(counts[k] / 200.0).epsilon(1e-3));
  }
}

TEST_CASE("L1 produces exact zeros") {
  Rng r(10);
  auto d = random_batch(r, 100);
  LogRegConfig cfg;
  cfg.C = 0.05;
  const auto m = train_logreg(d, cfg);
  int zeros = 0;
  for (const auto& w : m.weights)
    for (double v : w) zeros += v == 0.0;
  CHECK(zeros > 0);
}

TEST_CASE("relabelling classes permutes logistic predictions") {
  const auto d = clusters(11, 20, 0.3);
  const std::array<int, 4> perm{2, 0, 3, 1};
  Dataset permuted = d;
  for (auto& y : permuted.y) y = density_from_index(perm[index_of(y)]);
  LogRegConfig cfg;
  cfg.C = 1.0;
  cfg.tolerance = 1e-10;
  const auto a = train_logreg(d, cfg);
  const auto b = train_logreg(permuted, cfg);
  for (const auto& x : probes(5, 30)) {
    const auto pa = predict_proba(a, x);
    const auto pb = predict_proba(b, x);
    for (int k = 0; k < kNumDensity; ++k) CHECK(pb.p[perm[k]] == doctest::Approx(pa.p[k]).epsilon(1e-6));
  }
}

TEST_CASE("logistic config is validated") {
  LogRegConfig cfg;
  cfg.C = 0;
  CHECK_THROWS_AS(train_logreg(clusters(1, 3), cfg), Error);
  CHECK(parse_penalty("l2") == Penalty::l2);
  CHECK_FALSE(parse_penalty("elasticnet"));
}

// ---------------------------------------------------------------------------
// Random forest

TEST_CASE("single stub tree predicts its leaf frequencies") {
  ForestModel m;
  DecisionTree t;
  TreeNode leaf;
  leaf.counts = {3, 1, 0, 0};
  t.nodes.push_back(leaf);
  m.trees.push_back(t);
  const auto p = predict_proba(m, FeatureVector{});
  CHECK(p.p == std::array<double, 4>{0.75, 0.25, 0.0, 0.0});
  CHECK_THROWS_AS(predict_proba(ForestModel{}, FeatureVector{}), Error);
}

TEST_CASE("unlimited trees memorise distinct rows") {
  Rng r(12);
  const auto d = random_batch(r, 80);
  ForestConfig cfg;
  cfg.n_trees = 50;
  cfg.seed = 3;
  const auto m = train_forest(d, cfg);
  CHECK(accuracy(m, d) == 1.0);
}

TEST_CASE("min_samples_leaf = n gives single-leaf trees at the class priors") {
  Rng r(13);
  const auto d = random_batch(r, 40);
  const auto counts = d.class_counts();
  ForestConfig cfg;
  cfg.n_trees = 10;
  cfg.min_samples_leaf = 40;
  cfg.bootstrap = false;
  const auto m = train_forest(d, cfg);
  for (const auto& t : m.trees) CHECK(t.nodes.size() == 1);
  const auto p = predict_proba(m, probes(1, 1)[0]);
  for (int k = 0; k < kNumDensity; ++k) CHECK(p.p[k] == doctest::Approx(counts[k] / 40.0));

  cfg.bootstrap = true;
  for (const auto& t : train_forest(d, cfg).trees) CHECK(t.nodes.size() == 1);
}

TEST_CASE("forest output is the mean of per-tree leaf frequencies") {
  const auto d = clusters(14, 15, 0.4);
  ForestConfig cfg;
  cfg.n_trees = 25;
  cfg.max_depth = 3;
  cfg.seed = 8;
  const auto m = train_forest(d, cfg);
  for (const auto& x : probes(6, 40)) {
    std::array<double, 4> mean{};
    for (const auto& t : m.trees) {
      const auto& leaf = t.leaf_for(x);
      const double total = leaf.counts[0] + leaf.counts[1] + leaf.counts[2] + leaf.counts[3];
      for (int k = 0; k < 4; ++k) mean[k] += leaf.counts[k] / total / m.trees.size();
    }
    const auto p = predict_proba(m, x);
    for (int k = 0; k < 4; ++k) CHECK(p.p[k] == doctest::Approx(mean[k]).epsilon(1e-12));
    CHECK(p.on_simplex(1e-9));
  }
  for (const auto& t : m.trees) CHECK(t.depth() <= 3);
}

TEST_CASE("leaves hold at least min_samples_leaf samples") {
  Rng r(15);
  const auto d = random_batch(r, 150);
  ForestConfig cfg;
  cfg.n_trees = 20;
  cfg.min_samples_leaf = 5;
  const auto m = train_forest(d, cfg);
  for (const auto& t : m.trees)
    for (const auto& n : t.nodes)
      if (n.is_leaf()) CHECK(n.counts[0] + n.counts[1] + n.counts[2] + n.counts[3] >= 5);
}

TEST_CASE("forest training is deterministic and thread-count independent") {
  Rng r(16);
  const auto d = random_batch(r, 100);
  ForestConfig cfg;
  cfg.n_trees = 30;
  cfg.seed = 99;
  setenv("BUSDENSITY_THREADS", "1", 1);
  const auto a = train_forest(d, cfg);
  setenv("BUSDENSITY_THREADS", "4", 1);
  const auto b = train_forest(d, cfg);
  unsetenv("BUSDENSITY_THREADS");
  CHECK(serialize_model(a) == serialize_model(b));
  for (const auto& x : probes(7, 50)) CHECK(predict_proba(a, x) == predict_proba(b, x));
  cfg.seed = 100;
  CHECK(serialize_model(train_forest(d, cfg)) != serialize_model(a));
}

TEST_CASE("relabelling classes permutes forest predictions") {
  Rng r(17);
  const auto d = random_batch(r, 90);
  const std::array<int, 4> perm{3, 2, 1, 0};
  Dataset permuted = d;
  for (auto& y : permuted.y) y = density_from_index(perm[index_of(y)]);
  ForestConfig cfg;
  cfg.n_trees = 20;
  cfg.seed = 4;
  const auto a = train_forest(d, cfg);
  const auto b = train_forest(permuted, cfg);
  for (const auto& x : probes(8, 30)) {
    const auto pa = predict_proba(a, x);
    const auto pb = predict_proba(b, x);
    for (int k = 0; k < kNumDensity; ++k) CHECK(pb.p[perm[k]] == doctest::Approx(pa.p[k]).epsilon(1e-12));
  }
}

TEST_CASE("forest config is validated") {
  ForestConfig cfg;
  cfg.n_trees = 0;
  CHECK_THROWS_AS(train_forest(clusters(1, 3), cfg), Error);
  cfg = {};
  cfg.max_features = 17;
  CHECK_THROWS_AS(train_forest(clusters(1, 3), cfg), Error);
}

// ---------------------------------------------------------------------------
// MLP

TEST_CASE("mlp gradient matches central differences") {
  Rng r(41);
  for (int batch = 0; batch < 10; ++batch) {
    const auto data = random_batch(r, 4);
    MlpConfig cfg;
    cfg.hidden = 8;
    cfg.seed = static_cast<std::uint64_t>(batch);
    auto model = init_mlp(cfg);
    model.for_each_parameter([&](double& p) { p += r.normal(0.0, 0.1); });
    MlpModel grad = MlpModel::zeros(cfg.hidden);
    const double alpha = 0.3;
    mlp_loss(model, data.X, data.y, alpha, &grad);
    const auto analytic = mlp_params(grad);

    auto flat = mlp_params(model);
    auto f = [&](const std::vector<double>& p) {
      MlpModel m = model;
      std::size_t i = 0;
      m.for_each_parameter([&](double& v) { v = p[i++]; });
      return mlp_loss(m, data.X, data.y, alpha);
    };
    std::vector<double> numeric;
    for (std::size_t i = 0; i < flat.size(); ++i) numeric.push_back(oracle::central_difference(f, flat, i, 1e-5));
    CHECK(oracle::relative_error(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("mlp outputs lie on the simplex") {
  MlpConfig cfg;
  cfg.hidden = 32;
  cfg.seed = 5;
  const auto m = init_mlp(cfg);
  Rng r(2);
  for (int i = 0; i < 1000; ++i) {
    FeatureVector x{};
    for (auto& v : x) v = r.normal(0.0, 3.0);
    const auto p = predict_proba(m, x);
    CHECK(std::fabs(p.p[0] + p.p[1] + p.p[2] + p.p[3] - 1.0) < 1e-9);
    CHECK(p.on_simplex(1e-9));
  }
}

TEST_CASE("mlp learns a separable toy set before the epoch cap") {
  const auto train = clusters(21, 40);
  const auto val = clusters(22, 10);
  MlpConfig cfg;
  cfg.hidden = 32;
  cfg.learning_rate = 0.01;
  cfg.max_epochs = 200;
  cfg.seed = 1;
  const auto m = train_mlp(train, val, cfg);
  CHECK(accuracy(m, val) == 1.0);
  CHECK(m.best_epoch < cfg.max_epochs);
  CHECK(m.validation_curve.size() == m.training_curve.size());
}

TEST_CASE("mlp early stopping returns the best snapshot") {
  Rng r(23);
  const auto train = random_batch(r, 60);
  const auto val = random_batch(r, 30);
  MlpConfig cfg;
  cfg.hidden = 16;
  cfg.learning_rate = 0.05;
  cfg.patience = 5;
  cfg.max_epochs = 500;
  const auto m = train_mlp(train, val, cfg);
  REQUIRE(!m.validation_curve.empty());
  const auto best = std::min_element(m.validation_curve.begin(), m.validation_curve.end());
  CHECK(m.best_epoch == best - m.validation_curve.begin());
  CHECK(m.best_validation_loss == *best);
  CHECK(static_cast<int>(m.validation_curve.size()) <= m.best_epoch + 1 + cfg.patience);
  CHECK(static_cast<int>(m.validation_curve.size()) < cfg.max_epochs);
}

TEST_CASE("mlp training is reproducible from its seed") {
  const auto train = clusters(24, 10, 0.3);
  const auto val = clusters(25, 3, 0.3);
  MlpConfig cfg;
  cfg.hidden = 16;
  cfg.max_epochs = 20;
  cfg.seed = 77;
  const auto a = train_mlp(train, val, cfg);
  const auto b = train_mlp(train, val, cfg);
  CHECK(a.training_curve == b.training_curve);
  CHECK(a.validation_curve == b.validation_curve);
  CHECK(a.w1 == b.w1);
}

TEST_CASE("mlp needs a validation set") {
  CHECK_THROWS_WITH_AS(train_mlp(clusters(1, 3), Dataset{}), doctest::Contains("empty_validation"), Error);
}

TEST_CASE("scalar and avx2 mlp training agree to rounding") {
  const auto train = clusters(26, 10, 0.3);
  const auto val = clusters(27, 3, 0.3);
  MlpConfig cfg;
  cfg.hidden = 24;
  cfg.max_epochs = 10;
  const auto original = simd::active().isa;
  simd::set_active(simd::Isa::scalar);
  const auto s = train_mlp(train, val, cfg);
  if (simd::set_active(simd::Isa::avx2)) {
    const auto v = train_mlp(train, val, cfg);
    REQUIRE(v.validation_curve.size() == s.validation_curve.size());
    for (std::size_t i = 0; i < s.validation_curve.size(); ++i)
      CHECK(v.validation_curve[i] == doctest::Approx(s.validation_curve[i]).epsilon(1e-9));
  }
  simd::set_active(original);
}

// ---------------------------------------------------------------------------
// Persistence

TEST_CASE("save and load preserve predictions exactly") {
  testutil::TempDir dir("models");
  const auto d = clusters(30, 12, 0.3);
  ForestConfig fc;
  fc.n_trees = 15;
  MlpConfig mc;
  mc.hidden = 12;
  mc.max_epochs = 15;
  const std::vector<Model> models{train_logreg(d), train_forest(d, fc), train_mlp(d, clusters(31, 3, 0.3), mc)};
  for (const auto& m : models) {
    CAPTURE(model_kind(m));
    const auto path = dir / (std::string(model_kind(m)) + ".json");
    save_model(m, path);
    const auto back = load_model(path);
    CHECK(model_kind(back) == model_kind(m));
    for (const auto& x : probes(9, 100)) CHECK(predict_proba(back, x) == predict_proba(m, x));
    CHECK(serialize_model(back) == serialize_model(m));
  }
}

TEST_CASE("model files record kind, hyperparameters, seed and digest") {
  const auto d = clusters(32, 5);
  ForestConfig fc;
  fc.n_trees = 3;
  fc.seed = 1234;
  const auto text = serialize_model(train_forest(d, fc));
  CHECK(text.find("\"kind\": \"forest\"") != std::string::npos);
  CHECK(text.find("\"seed\": 1234") != std::string::npos);
  CHECK(text.find("\"n_trees\": 3") != std::string::npos);
  CHECK(text.find(d.digest()) != std::string::npos);
}

TEST_CASE("corrupted model files are rejected") {
  testutil::TempDir dir("models_bad");
  const auto text = serialize_model(train_logreg(clusters(33, 5)));
  std::ofstream(dir / "cut.json") << text.substr(0, text.size() / 2);
  CHECK_THROWS_WITH_AS(load_model(dir / "cut.json"), doctest::Contains("bad_model_file"), Error);
  CHECK_THROWS_WITH_AS(deserialize_model("{\"format\": \"other\"}"), doctest::Contains("bad_model_file"), Error);
  std::string wrong_len = text;
  wrong_len.replace(wrong_len.find("\"bias\": ["), 9, "\"bias\": [1,");
  CHECK_THROWS_WITH_AS(deserialize_model(wrong_len), doctest::Contains("bad_model_file"), Error);
}

TEST_CASE("format version and model kind are enforced") {
  testutil::TempDir dir("models_kind");
  auto text = serialize_model(train_forest(clusters(34, 5), ForestConfig{3}));
  std::ofstream(dir / "forest.json") << text;
  CHECK_THROWS_WITH_AS(load_model_as<LogRegModel>(dir / "forest.json"), doctest::Contains("kind_mismatch"), Error);
  CHECK_NOTHROW(load_model_as<ForestModel>(dir / "forest.json"));
  text.replace(text.find("\"version\": 1"), 12, "\"version\": 9");
  CHECK_THROWS_WITH_AS(deserialize_model(text), doctest::Contains("version_mismatch"), Error);
}

TEST_CASE("digest mismatch warns but still loads") {
  testutil::TempDir dir("models_digest");
  const auto d = clusters(35, 5);
  save_model(train_logreg(d), dir / "m.json");
  std::vector<std::string> warnings;
  load_model(dir / "m.json", d.digest(), &warnings);
  CHECK(warnings.empty());
  load_model(dir / "m.json", "0000000000000000", &warnings);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("digest_mismatch") == 0);
}
