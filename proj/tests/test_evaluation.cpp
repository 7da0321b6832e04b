#include <doctest.h>

#include <fstream>
#include <limits>

#include "busdensity/evaluation.hpp"
#include "busdensity/random.hpp"
#include "support.hpp"

using namespace busdensity;
using namespace busdensity::evaluation;

namespace {

DensityDistribution dist(double a, double b, double c, double d) { return {{a, b, c, d}}; }

DensityDistribution random_dist(Rng& r) {
  // Flat Dirichlet via normalised exponentials.
  std::array<double, 4> e{};
  double s = 0;
  for (auto& v : e) s += v = -std::log(1.0 - r.uniform());
  for (auto& v : e) v /= s;
  return {e};
}

std::vector<DensityDistribution> repeat(const std::vector<DensityDistribution>& v, int times) {
  std::vector<DensityDistribution> out;
  for (int t = 0; t < times; ++t) out.insert(out.end(), v.begin(), v.end());
  return out;
}

/// Scores with heavy ties (few distinct values) half the time.
void random_binary(Rng& r, std::size_t n, std::vector<double>& s, std::vector<std::uint8_t>& y) {
  s.resize(n);
  y.resize(n);
  const bool tied = r.bernoulli(0.5);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = r.bernoulli(0.4);
    s[i] = tied ? static_cast<double>(r.index(5)) + y[i] * 0.5 * r.index(2) : r.normal() + y[i];
  }
  y[0] = 1;
  y[1] = 1;
  y[2] = 0;
  y[3] = 0;
}

PredictionSet one_image_per_patient(const std::vector<DensityDistribution>& d, const std::vector<Density>& truth) {
  PredictionSet s;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::string pid = "P" + std::to_string(10000 + i);
    s.rows.push_back({pid + "_01", pid, d[i]});
    s.truth[pid] = truth[i];
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Aggregation

TEST_CASE("mean aggregation") {
  CHECK(aggregate_mean(std::vector{dist(1, 0, 0, 0), dist(0, 1, 0, 0)}) == dist(0.5, 0.5, 0, 0));
  CHECK(aggregate_mean(std::vector{dist(0.1, 0.2, 0.3, 0.4)}) == dist(0.1, 0.2, 0.3, 0.4));
  const auto m = aggregate_mean(std::vector(3, dist(0.1, 0.2, 0.3, 0.4)));
  for (int k = 0; k < 4; ++k) CHECK(m.p[k] == doctest::Approx(0.1 * (k + 1)).epsilon(1e-15));
  CHECK_THROWS_AS(aggregate_mean(std::vector<DensityDistribution>{}), Error);
}

TEST_CASE("vote aggregation rounds halves away from zero") {
  const auto A = DensityDistribution::one_hot(Density::A);
  const auto B = DensityDistribution::one_hot(Density::B);
  const auto C = DensityDistribution::one_hot(Density::C);
  const auto D = DensityDistribution::one_hot(Density::D);
  CHECK(aggregate_vote_round(std::vector{A, D}) == Density::C);
  CHECK(aggregate_vote_round(std::vector{B, B, B}) == Density::B);
  CHECK(aggregate_vote_round(std::vector{A, B, C, D}) == Density::C);
  CHECK(aggregate_vote_round(std::vector{A, A, B}) == Density::A);
  // Argmax ties go to the lower class.
  CHECK(aggregate_vote_round(std::vector{dist(0, 0.5, 0.5, 0)}) == Density::B);
  CHECK_THROWS_AS(aggregate_vote_round(std::vector<DensityDistribution>{}), Error);
}

TEST_CASE("vote is invariant to duplicating every image") {
  Rng r(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<DensityDistribution> v(1 + r.index(6));
    for (auto& d : v) d = random_dist(r);
    const auto once = aggregate_vote_round(v);
    for (int t = 2; t <= 4; ++t) CHECK(aggregate_vote_round(repeat(v, t)) == once);
    const auto m = aggregate_mean(v);
    CHECK(m.on_simplex(1e-12));
  }
}

TEST_CASE("patient aggregation groups rows by patient") {
  std::vector<PredictionRow> rows{{"b1", "PB", dist(0, 1, 0, 0)},
                                  {"a1", "PA", dist(1, 0, 0, 0)},
                                  {"b2", "PB", dist(0, 0, 0, 1)}};
  const auto p = aggregate_patients(rows);
  REQUIRE(p.size() == 2);
  CHECK(p[0].patient_id == "PA");
  CHECK(p[1].patient_id == "PB");
  CHECK(p[1].n_images == 2);
  CHECK(p[1].dist == dist(0, 0.5, 0, 0.5));
  CHECK(p[1].vote == Density::C);
}

// ---------------------------------------------------------------------------
// AUROC

TEST_CASE("auroc examples") {
  CHECK(auroc(std::vector{0.9, 0.1}, std::vector<std::uint8_t>{1, 0}) == 1.0);
  CHECK(auroc(std::vector(6, 0.3), std::vector<std::uint8_t>{1, 0, 1, 0, 0, 1}) == 0.5);
  CHECK(auroc(std::vector{0.2, 0.4, 0.4, 0.8}, std::vector<std::uint8_t>{0, 1, 0, 1}) == 0.875);
  CHECK_THROWS_WITH_AS(auroc(std::vector{0.1, 0.2}, std::vector<std::uint8_t>{1, 1}),
                       doctest::Contains("degenerate_labels"), Error);
  CHECK_THROWS_AS(auroc(std::vector{0.1, std::nan("")}, std::vector<std::uint8_t>{1, 0}), Error);
}

TEST_CASE("auroc equals pair enumeration, complements, and ignores monotone transforms") {
  Rng r(2);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> s;
    std::vector<std::uint8_t> y;
    random_binary(r, 4 + r.index(200), s, y);
    const double a = auroc(s, y);
    CHECK(a == doctest::Approx(oracle::brute_auc(s, y)).epsilon(1e-13));
    std::vector<std::uint8_t> flipped(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) flipped[i] = 1 - y[i];
    CHECK(auroc(s, flipped) == doctest::Approx(1.0 - a).epsilon(1e-13));
    std::vector<double> t(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) t[i] = std::exp(s[i]) + s[i] * s[i] * s[i];
    CHECK(auroc(t, y) == a);
    CHECK(delong_ci(t, y).auc == delong_ci(s, y).auc);
  }
}

TEST_CASE("micro averaging pools one-vs-rest pairs") {
  std::vector<DensityDistribution> onehot;
  std::vector<Density> truth;
  for (int k = 0; k < 4; ++k) {
    onehot.push_back(DensityDistribution::one_hot(density_from_index(k)));
    truth.push_back(density_from_index(k));
  }
  CHECK(micro_ovr_auroc(onehot, truth) == 1.0);
  CHECK(micro_ovr_auroc(std::vector(4, DensityDistribution::uniform()), truth) == 0.5);
  CHECK_THROWS_AS(micro_ovr_auroc(std::vector(2, DensityDistribution::uniform()),
                                  std::vector{Density::B, Density::B}),
                  Error);

  // Six hand-written instances against pooled pair enumeration.
  const std::vector<DensityDistribution> hand{dist(0.7, 0.1, 0.1, 0.1), dist(0.2, 0.5, 0.2, 0.1),
                                              dist(0.1, 0.2, 0.3, 0.4), dist(0.25, 0.25, 0.25, 0.25),
                                              dist(0.0, 0.1, 0.6, 0.3),  dist(0.4, 0.4, 0.1, 0.1)};
  const std::vector<Density> hand_truth{Density::A, Density::B, Density::D, Density::C, Density::C, Density::B};
  std::vector<double> s;
  std::vector<std::uint8_t> y;
  for (std::size_t i = 0; i < hand.size(); ++i)
    for (int k = 0; k < 4; ++k) {
      s.push_back(hand[i].p[k]);
      y.push_back(index_of(hand_truth[i]) == k);
    }
  CHECK(micro_ovr_auroc(hand, hand_truth) == oracle::brute_auc(s, y));
}

TEST_CASE("delong on perfect separation") {
  std::vector<double> s;
  std::vector<std::uint8_t> y;
  for (int i = 0; i < 100; ++i) {
    s.push_back(1.0 + i);
    y.push_back(1);
    s.push_back(-1.0 - i);
    y.push_back(0);
  }
  const auto d = delong_ci(s, y);
  CHECK(d.auc == 1.0);
  CHECK(d.variance == 0.0);
  CHECK(d.lower == 1.0);
  CHECK(d.upper == 1.0);
}

TEST_CASE("delong matches the pairwise structural components") {
  Rng r(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s;
    std::vector<std::uint8_t> y;
    random_binary(r, 4 + r.index(300), s, y);
    const auto fast = delong_ci(s, y);
    const auto slow = oracle::brute_delong(s, y);
    CHECK(std::fabs(fast.auc - slow.auc) <= 1e-12);
    CHECK(std::fabs(fast.variance - slow.variance) <= 1e-12);
    CHECK(fast.lower <= fast.auc);
    CHECK(fast.auc <= fast.upper);
    CHECK(fast.lower >= 0.0);
    CHECK(fast.upper <= 1.0);
    const double half = 1.959963984540054 * std::sqrt(slow.variance);
    CHECK(fast.lower == doctest::Approx(std::max(0.0, slow.auc - half)).epsilon(1e-9));
  }
}

TEST_CASE("delong needs two of each class") {
  CHECK_THROWS_WITH_AS(delong_ci(std::vector{0.1, 0.2, 0.3}, std::vector<std::uint8_t>{1, 0, 0}),
                       doctest::Contains("insufficient_classes"), Error);
}

TEST_CASE("roc curve runs from the origin to (1, 1)") {
  Rng r(4);
  std::vector<double> s;
  std::vector<std::uint8_t> y;
  random_binary(r, 150, s, y);
  const auto roc = roc_curve(s, y);
  REQUIRE(roc.size() >= 2);
  CHECK(std::isinf(roc.front().threshold));
  CHECK(roc.front().fpr == 0.0);
  CHECK(roc.front().tpr == 0.0);
  CHECK(roc.back().fpr == 1.0);
  CHECK(roc.back().tpr == 1.0);
  double area = 0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    CHECK(roc[i].fpr >= roc[i - 1].fpr);
    CHECK(roc[i].tpr >= roc[i - 1].tpr);
    CHECK(roc[i].threshold < roc[i - 1].threshold);
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2;
  }
  // Trapezoids through the tied steps reproduce the Mann-Whitney AUROC.
  CHECK(area == doctest::Approx(auroc(s, y)).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// Kendall tau-b

TEST_CASE("kendall tau-b examples") {
  CHECK(kendall_tau_b(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 2, 3, 4}) == 1.0);
  CHECK(kendall_tau_b(std::vector<double>{1, 2, 3, 4}, std::vector<double>{4, 3, 2, 1}) == -1.0);
  const std::vector<double> x{1, 1, 2, 3}, y{1, 2, 2, 3};
  CHECK(kendall_tau_b(x, y) == doctest::Approx(oracle::brute_tau_b(x, y)).epsilon(1e-15));
  // 4 concordant, 0 discordant, one pair tied in x and another tied in y: 4 / sqrt(5 * 5).
  CHECK(kendall_tau_b(x, y) == doctest::Approx(0.8));
  CHECK_THROWS_WITH_AS(kendall_tau_b(std::vector<double>{2, 2, 2}, std::vector<double>{1, 2, 3}),
                       doctest::Contains("undefined_tau"), Error);
}

TEST_CASE("kendall tau-b matches pair enumeration on tied ordinal data") {
  Rng r(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + r.index(300);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(r.index(4));
      y[i] = r.bernoulli(0.6) ? x[i] : static_cast<double>(r.index(4));
    }
    x[0] = 0;
    x[1] = 3;
    y[0] = 1;
    y[1] = 2;
    CHECK(std::fabs(kendall_tau_b(x, y) - oracle::brute_tau_b(x, y)) <= 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Reports

TEST_CASE("perfect predictions score 1 everywhere") {
  std::vector<DensityDistribution> d;
  std::vector<Density> t;
  for (int i = 0; i < 40; ++i) {
    t.push_back(density_from_index(i % 4));
    d.push_back(DensityDistribution::one_hot(t.back()));
  }
  auto set = one_image_per_patient(d, t);
  for (auto level : {Level::image, Level::patient}) {
    const auto rep = evaluate(set, level);
    REQUIRE(rep.blocks.size() == 1);
    const auto& b = rep.blocks[0];
    CHECK(b.micro.value->auc == 1.0);
    CHECK(b.dense.value->auc == 1.0);
    for (const auto& c : b.per_class) CHECK(c.value->auc == 1.0);
    CHECK(*b.tau_b == 1.0);
  }
}

TEST_CASE("shuffled labels give a chance-level micro auroc") {
  Rng r(6);
  const std::vector<double> prior{0.034, 0.390, 0.447, 0.129};
  std::vector<DensityDistribution> d(2000);
  std::vector<Density> t(2000);
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = random_dist(r);
    t[i] = density_from_index(static_cast<int>(r.categorical(prior)));
  }
  const auto rep = evaluate(one_image_per_patient(d, t), Level::patient);
  const double micro = rep.blocks[0].micro.value->auc;
  CHECK(micro > 0.47);
  CHECK(micro < 0.53);
}

TEST_CASE("single-class predictions are degenerate") {
  auto set = one_image_per_patient({DensityDistribution::uniform(), DensityDistribution::uniform()},
                                   {Density::B, Density::B});
  CHECK_THROWS_WITH_AS(evaluate(set, Level::patient), doctest::Contains("degenerate labels"), Error);
  CHECK_THROWS_WITH_AS(evaluate(PredictionSet{}, Level::patient), doctest::Contains("empty_predictions"), Error);
}

TEST_CASE("subgroups, not-estimable cells and CI sanity") {
  Rng r(7);
  std::vector<DensityDistribution> d;
  std::vector<Density> t;
  for (int i = 0; i < 120; ++i) {
    t.push_back(density_from_index(1 + static_cast<int>(r.index(3))));
    auto p = random_dist(r);
    p.p[index_of(t.back())] += 1.0;
    for (auto& v : p.p) v /= 2.0;
    d.push_back(p);
  }
  auto set = one_image_per_patient(d, t);
  std::size_t i = 0;
  for (const auto& [pid, truth] : set.truth) {
    set.tags[pid]["machine"] = i % 2 ? "M1" : "M2";
    // Only class-B women carry the "solo" tag value, so that subgroup has one class.
    if (truth == Density::B) set.tags[pid]["site"] = "solo";
    ++i;
  }
  const auto rep = evaluate(set, Level::patient, {"machine", "site"});
  REQUIRE(rep.blocks.size() == 4);
  CHECK(rep.blocks[0].subgroup == "overall");
  CHECK(rep.blocks[1].subgroup == "machine=M1");
  CHECK(rep.blocks[2].subgroup == "machine=M2");
  CHECK(rep.blocks[3].subgroup == "site=solo");
  CHECK(rep.blocks[1].n + rep.blocks[2].n == 120);
  CHECK_FALSE(rep.blocks[3].micro.value);
  CHECK(rep.blocks[3].note.find("not estimable") != std::string::npos);
  // No class-A women anywhere: that cell has no positives.
  CHECK_FALSE(rep.blocks[0].per_class[0].value);
  CHECK_FALSE(rep.blocks[0].per_class[0].note.empty());
  for (std::size_t b = 0; b < 3; ++b)
    for (const AucCell* c : {&rep.blocks[b].micro, &rep.blocks[b].dense, &rep.blocks[b].per_class[1]}) {
      REQUIRE(c->value);
      CHECK(c->value->lower <= c->value->auc);
      CHECK(c->value->auc <= c->value->upper);
      CHECK(c->value->lower >= 0.0);
      CHECK(c->value->upper <= 1.0);
    }
  const auto csv_text = report_csv(rep, "m");
  CHECK(csv_text.find("m,patient,site=solo,") != std::string::npos);
  CHECK(report_json(rep, "m").find("\"subgroup\": \"machine=M1\"") != std::string::npos);
}

TEST_CASE("image and patient levels count different units") {
  PredictionSet s;
  for (int p = 0; p < 8; ++p) {
    const std::string pid = "P" + std::to_string(p);
    s.truth[pid] = density_from_index(p % 4);
    for (int i = 0; i < 3; ++i)
      s.rows.push_back({pid + "_" + std::to_string(i), pid, DensityDistribution::one_hot(density_from_index((p + i) % 4))});
  }
  CHECK(evaluate(s, Level::image).blocks[0].n == 24);
  CHECK(evaluate(s, Level::patient).blocks[0].n == 8);
}

TEST_CASE("prediction validation") {
  PredictionSet s = one_image_per_patient({DensityDistribution::uniform()}, {Density::A});
  s.truth.clear();
  CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("missing_truth"), Error);
  s = one_image_per_patient({dist(0.5, 0.5, 0.5, 0)}, {Density::A});
  CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("bad_prediction"), Error);
}

TEST_CASE("prediction csv round trip and schema errors") {
  Rng r(8);
  std::vector<PredictionRow> rows;
  for (int i = 0; i < 20; ++i) rows.push_back({"I" + std::to_string(i), "P" + std::to_string(i / 4), random_dist(r)});
  const auto back = parse_predictions(write_predictions(rows));
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].image_id == rows[i].image_id);
    CHECK(back[i].dist == rows[i].dist);
  }
  CHECK_THROWS_WITH_AS(parse_predictions("image_id,patient_id,pA,pB,pC,pD\nI1,P1,1,0,0,0\nI1,P1,1,0,0,0\n"),
                       doctest::Contains("duplicate_image"), Error);
  CHECK_THROWS_WITH_AS(parse_predictions("image_id,patient_id,pA,pB,pC,pD\nI1,P1,0.6,0.6,0,0\n"),
                       doctest::Contains("bad_prediction"), Error);
  CHECK_THROWS_AS(parse_predictions("image,patient,a,b,c,d\n"), Error);
}

TEST_CASE("tags csv round trip") {
  std::map<std::string, std::map<std::string, std::string>> tags{{"P1", {{"machine", "M1"}, {"age_bin", "40-49"}}},
                                                                  {"P2", {{"machine", "M2"}}}};
  testutil::TempDir dir("tags");
  std::ofstream(dir / "tags.csv") << write_tags(tags);
  CHECK(read_tags(dir / "tags.csv") == tags);
}
