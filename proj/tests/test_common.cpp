#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <set>

#include "busdensity/common.hpp"
#include "busdensity/csv.hpp"
#include "busdensity/parallel.hpp"
#include "busdensity/random.hpp"
#include "support.hpp"

using namespace busdensity;

TEST_CASE("iso dates round-trip and reject malformed text") {
  const auto d = parse_iso_date("2016-02-29");
  REQUIRE(d);
  CHECK(format_iso_date(*d) == "2016-02-29");
  CHECK_FALSE(parse_iso_date("2015-02-29"));
  CHECK_FALSE(parse_iso_date("2015-13-01"));
  CHECK_FALSE(parse_iso_date("2015/01/01"));
  CHECK_FALSE(parse_iso_date("2015-1-01"));
  CHECK_FALSE(parse_iso_date(""));
}

TEST_CASE("add_years clamps leap days") {
  CHECK(format_iso_date(add_years(*parse_iso_date("2016-02-29"), 1)) == "2017-02-28");
  CHECK(format_iso_date(add_years(*parse_iso_date("2016-02-29"), 4)) == "2020-02-29");
  CHECK(format_iso_date(add_years(*parse_iso_date("2013-07-15"), 5)) == "2018-07-15");
  CHECK(days_between(*parse_iso_date("2020-01-01"), *parse_iso_date("2021-01-01")) == 366);
}

TEST_CASE("round_half_away_from_zero") {
  CHECK(round_half_away(1.5) == 2);
  CHECK(round_half_away(2.5) == 3);
  CHECK(round_half_away(-1.5) == -2);
  CHECK(round_half_away(1.49) == 1);
}

TEST_CASE("density helpers") {
  CHECK(density_code(Density::C) == 'C');
  CHECK(parse_density("d") == Density::D);
  CHECK_FALSE(parse_density("E"));
  CHECK_FALSE(parse_density("AB"));
  DensityDistribution tie{{0.4, 0.4, 0.1, 0.1}};
  CHECK(tie.argmax() == Density::A);
  CHECK(tie.on_simplex());
  CHECK_FALSE(DensityDistribution{{0.5, 0.6, 0.0, 0.0}}.on_simplex());
  CHECK_FALSE(DensityDistribution{{1.2, -0.2, 0.0, 0.0}}.on_simplex());
}

TEST_CASE("derived seeds are distinct across streams") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 1000; ++s) seen.insert(derive_seed(42, s));
  CHECK(seen.size() == 1000);
  CHECK(derive_seed(1, 2) != derive_seed(2, 1));
}

TEST_CASE("rng is reproducible and its draws are in range") {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng r(3);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    CHECK(r.index(7) < 7);
  }
}

TEST_CASE("rng normal has unit moments") {
  Rng r(11);
  double sum = 0.0, sumsq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sum += z;
    sumsq += z * z;
  }
  CHECK(std::fabs(sum / n) < 0.01);
  CHECK(std::fabs(sumsq / n - 1.0) < 0.02);
}

TEST_CASE("categorical skips zero weights") {
  Rng r(5);
  const std::vector<double> w{0.0, 2.0, 0.0, 1.0};
  std::array<int, 4> counts{};
  for (int i = 0; i < 30000; ++i) ++counts[r.categorical(w)];
  CHECK(counts[0] == 0);
  CHECK(counts[2] == 0);
  CHECK(std::fabs(counts[1] / 30000.0 - 2.0 / 3.0) < 0.02);
}

TEST_CASE("csv parse handles quotes and embedded commas") {
  const auto t = csv::parse("a,b,c\n1,\"x,y\",\"he said \"\"hi\"\"\"\n\n2,,3\n");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][1] == "x,y");
  CHECK(t.rows[0][2] == "he said \"hi\"");
  CHECK(t.rows[1][1].empty());
  CHECK(t.column("c") == 2);
  CHECK_THROWS_AS(t.column("zz"), Error);
  CHECK(csv::split_line(csv::escape("q\"r,s")) == std::vector<std::string>{"q\"r,s"});
}

TEST_CASE("csv header checks name the mismatch") {
  const auto t = csv::parse("a,b\n1,2\n");
  CHECK_NOTHROW(csv::require_header(t, {"a", "b"}, "t"));
  try {
    csv::require_header(t, {"a", "c"}, "t");
    FAIL("expected header_mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == "header_mismatch");
  }
}

TEST_CASE("fmt_double round-trips exactly") {
  Rng r(9);
  for (int i = 0; i < 1000; ++i) {
    const double v = r.normal() * std::pow(10.0, r.uniform(-8, 8));
    CHECK(csv::to_double(csv::fmt_double(v), "v") == v);
  }
  CHECK(csv::fmt_fixed(0.5, 3) == "0.500");
  CHECK(csv::fmt_fixed(std::nan(""), 3) == "NA");
}

TEST_CASE("parallel_for output is independent of thread count") {
  std::vector<double> one(1000), many(1000);
  setenv("BUSDENSITY_THREADS", "1", 1);
  parallel_for(one.size(), [&](std::size_t i) { one[i] = std::sin(static_cast<double>(i)); });
  setenv("BUSDENSITY_THREADS", "4", 1);
  CHECK(worker_threads() == 4);
  parallel_for(many.size(), [&](std::size_t i) { many[i] = std::sin(static_cast<double>(i)); });
  CHECK(one == many);
  unsetenv("BUSDENSITY_THREADS");
}

TEST_CASE("parallel_for rethrows worker failures") {
  setenv("BUSDENSITY_THREADS", "3", 1);
  std::atomic<int> ran{0};
  CHECK_THROWS_AS(parallel_for(30,
                               [&](std::size_t i) {
                                 ++ran;
                                 if (i == 17) throw Error("boom", "worker failure");
                               }),
                  Error);
  CHECK(ran > 0);
  unsetenv("BUSDENSITY_THREADS");
}

TEST_CASE("error carries code and kind") {
  Error e("quasi_separation", "detail", ErrorKind::runtime);
  CHECK(e.code() == "quasi_separation");
  CHECK(e.kind() == ErrorKind::runtime);
  CHECK(std::string(e.what()) == "quasi_separation: detail");
}
