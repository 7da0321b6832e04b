#include <doctest.h>

#include <fstream>
#include <numeric>

#include "busdensity/features.hpp"
#include "busdensity/random.hpp"
#include "support.hpp"

using namespace busdensity;
using namespace busdensity::features;
using imaging::GrayImage;

namespace {

GrayImage random_image(Rng& r, int w, int h, int lo = 0, int hi = 255) {
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h);
  for (auto& p : px) p = static_cast<std::uint8_t>(lo + r.index(static_cast<std::uint64_t>(hi - lo + 1)));
  return GrayImage(w, h, std::move(px));
}

std::vector<std::uint8_t> pixels_of(const GrayImage& img) { return {img.pixels().begin(), img.pixels().end()}; }

}  // namespace

TEST_CASE("all-zero image fills bin 0") {
  const auto f = gray_level_histogram(GrayImage(8, 8, 0), false);
  CHECK(f.bins[0] == 1.0);
  for (int k = 1; k < kNumBins; ++k) CHECK(f.bins[k] == 0.0);
}

TEST_CASE("half black, half white") {
  std::vector<std::uint8_t> px(100, 0);
  std::fill(px.begin() + 50, px.end(), 255);
  const auto f = gray_level_histogram(GrayImage(10, 10, px), false);
  CHECK(f.bins[0] == 0.5);
  CHECK(f.bins[15] == 0.5);
  CHECK(std::accumulate(f.bins.begin() + 1, f.bins.end() - 1, 0.0) == 0.0);
}

TEST_CASE("four-pixel hand binning") {
  const auto f = gray_level_histogram(GrayImage(2, 2, {10, 20, 200, 250}), false);
  CHECK(f.bins[0] == 0.25);
  CHECK(f.bins[1] == 0.25);
  CHECK(f.bins[12] == 0.25);
  CHECK(f.bins[15] == 0.25);
  CHECK(f.total == 4);
  CHECK_FALSE(f.normalized_input);
}

TEST_CASE("bin boundaries are closed integer ranges") {
  for (int v = 0; v < 256; ++v) {
    const auto f = gray_level_histogram(GrayImage(1, 1, static_cast<std::uint8_t>(v)), false);
    CHECK(f.bins[v / 16] == 1.0);
  }
}

TEST_CASE("normalised constant image maps to bin 0") {
  const auto f = gray_level_histogram(GrayImage(5, 5, 180), true);
  CHECK(f.bins[0] == 1.0);
  CHECK(f.normalized_input);
}

TEST_CASE("min-max rescale rounds halves away from zero") {
  // range 2: (p - lo) * 255 / 2 = 127.5 rounds to 128.
  const auto out = minmax_rescale(std::vector<std::uint8_t>{10, 11, 12});
  CHECK(out == std::vector<std::uint8_t>{0, 128, 255});
}

TEST_CASE("histogram matches hand binning on random images") {
  Rng r(123);
  for (int trial = 0; trial < 200; ++trial) {
    const auto img = random_image(r, 1 + static_cast<int>(r.index(20)), 1 + static_cast<int>(r.index(20)),
                                  static_cast<int>(r.index(100)), 155 + static_cast<int>(r.index(101)));
    for (bool normalize : {false, true}) {
      const auto f = gray_level_histogram(img, normalize);
      const auto expect = oracle::hand_histogram(pixels_of(img), normalize);
      for (int k = 0; k < kNumBins; ++k) CHECK(f.bins[k] == expect[k]);
      std::uint64_t total = 0;
      for (auto c : f.counts) total += c;
      CHECK(total == img.size());
    }
  }
}

TEST_CASE("permutation invariance") {
  Rng r(5);
  const auto img = random_image(r, 17, 13);
  auto px = pixels_of(img);
  r.shuffle(std::span<std::uint8_t>(px));
  const GrayImage shuffled(17, 13, px);
  for (bool normalize : {false, true})
    CHECK(gray_level_histogram(img, normalize).counts == gray_level_histogram(shuffled, normalize).counts);
}

TEST_CASE("normalised histograms are invariant to affine intensity maps") {
  Rng r(77);
  for (int trial = 0; trial < 100; ++trial) {
    const auto img = random_image(r, 12, 12, 20, 120);
    const int a = 1 + static_cast<int>(r.index(2));
    const int b = static_cast<int>(r.index(11));
    auto px = pixels_of(img);
    for (auto& p : px) p = static_cast<std::uint8_t>(a * p + b);
    const auto base = gray_level_histogram(img, true);
    const auto mapped = gray_level_histogram(GrayImage(12, 12, px), true);
    // Integer affine maps with a > 0 commute exactly with min-max rescaling.
    CHECK(base.counts == mapped.counts);
  }
}

TEST_CASE("bins sum to one exactly in counts") {
  Rng r(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto img = random_image(r, 1 + static_cast<int>(r.index(9)), 1 + static_cast<int>(r.index(9)));
    const auto f = gray_level_histogram(img, trial % 2 == 0);
    std::uint64_t total = 0;
    for (auto c : f.counts) total += c;
    CHECK(total == f.total);
    CHECK(std::accumulate(f.bins.begin(), f.bins.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("empty images are rejected") {
  CHECK_THROWS_AS(gray_level_histogram(GrayImage{}, false), Error);
}

TEST_CASE("feature csv round-trip is exact") {
  Rng r(2);
  std::vector<FeatureRow> rows;
  for (int i = 0; i < 10; ++i)
    rows.push_back({"img" + std::to_string(i), "P" + std::to_string(i / 3),
                    gray_level_histogram(random_image(r, 7, 9), i % 2 == 1)});
  testutil::TempDir dir("features");
  std::ofstream(dir / "f.csv") << write_features(rows);
  const auto back = read_features(dir / "f.csv");
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].image_id == rows[i].image_id);
    CHECK(back[i].patient_id == rows[i].patient_id);
    CHECK(back[i].features.bins == rows[i].features.bins);
    CHECK(back[i].features.normalized_input == rows[i].features.normalized_input);
  }
}

TEST_CASE("feature files with the wrong header are schema errors") {
  testutil::TempDir dir("features_bad");
  std::ofstream(dir / "f.csv") << "image_id,patient_id\nx,y\n";
  CHECK_THROWS_AS(read_features(dir / "f.csv"), Error);
}
