#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "geoproto/metrics.hpp"
#include "support/test_util.hpp"

using namespace geoproto;
using geoproto::testing::rand_mask;

TEST_CASE("dsc hand values") {
  BinaryMask a(4, 4), b(4, 4);
  for (int i = 0; i < 4; ++i) a.set(0, i, true);
  // identical nonempty masks
  CHECK(dsc(a, a) == 1.0);

  // disjoint nonempty masks
  for (int i = 0; i < 4; ++i) b.set(3, i, true);
  CHECK(dsc(a, b) == 0.0);

  // |P| = |G| = 4, overlap 2 -> 0.5
  BinaryMask c(4, 4);
  c.set(0, 0, true);
  c.set(0, 1, true);
  c.set(3, 0, true);
  c.set(3, 1, true);
  CHECK(dsc(a, c) == Catch::Approx(0.5));

  // empty vs empty agrees perfectly; empty vs nonempty does not
  BinaryMask e1(4, 4), e2(4, 4);
  CHECK(dsc(e1, e2) == 1.0);
  CHECK(dsc(e1, a) == 0.0);

  CHECK_THROWS_AS(dsc(a, BinaryMask(3, 3)), ShapeError);
}

TEST_CASE("dsc symmetry") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    auto a = rand_mask(8, 8, 0.4, rng);
    auto b = rand_mask(8, 8, 0.4, rng);
    CHECK(dsc(a, b) == dsc(b, a));
  }
}

TEST_CASE("bhattacharyya hand values and bounds") {
  CHECK(bhattacharyya({1.0, 0.0}, {0.0, 1.0}) == 0.0);
  CHECK(bhattacharyya({0.9, 0.1}, {0.1, 0.9}) == Catch::Approx(0.6).margin(1e-12));
  CHECK(bhattacharyya({0.25, 0.75}, {0.25, 0.75}) == Catch::Approx(1.0).margin(1e-12));

  // symmetry and the Cauchy-Schwarz bound, with equality only at p = q
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int t = 0; t < 30; ++t) {
    std::vector<double> p(6), q(6);
    double sp = 0, sq = 0;
    for (int i = 0; i < 6; ++i) {
      p[static_cast<size_t>(i)] = u(rng);
      q[static_cast<size_t>(i)] = u(rng);
      sp += p[static_cast<size_t>(i)];
      sq += q[static_cast<size_t>(i)];
    }
    for (int i = 0; i < 6; ++i) {
      p[static_cast<size_t>(i)] /= sp;
      q[static_cast<size_t>(i)] /= sq;
    }
    double ab = bhattacharyya(p, q);
    CHECK(ab == Catch::Approx(bhattacharyya(q, p)).margin(1e-12));
    CHECK(ab <= 1.0);
    CHECK(bhattacharyya(p, p) == Catch::Approx(1.0).margin(1e-12));
  }

  CHECK_THROWS_AS(bhattacharyya({0.5, 0.4}, {0.5, 0.5}), ContractError);
  CHECK_THROWS_AS(bhattacharyya({0.5, 0.5}, {0.5}), ContractError);
}

TEST_CASE("aggregate basics") {
  EvalRecord r1{1, 0.4, 1.0, 0.9, "ellipse", "target"};
  EvalRecord r2{2, 0.6, 2.0, 0.7, "annulus", "target"};
  auto stats = aggregate({r1, r2});

  auto find = [&](const std::string& group, const std::string& metric) -> const GroupStats& {
    for (const auto& s : stats)
      if (s.group == group && s.metric == metric) return s;
    FAIL("missing group " + group + "/" + metric);
    return stats.front();
  };
  CHECK(find("all", "dsc").mean == Catch::Approx(0.5));
  CHECK(find("all", "dsc").median == Catch::Approx(0.5));
  CHECK(find("all", "dsc").n == 2);
  CHECK(find("family:ellipse", "dsc").mean == Catch::Approx(0.4));
  CHECK(find("family:ellipse", "dsc").stddev == 0.0);
  CHECK(find("domain:target", "bin_mae").mean == Catch::Approx(1.5));

  // single record: mean == median == value, std == 0
  auto one = aggregate({r1});
  CHECK(find("all", "dsc").n == 2);  // previous stats untouched
  for (const auto& s : one)
    if (s.group == "all" && s.metric == "dsc") {
      CHECK(s.mean == Catch::Approx(0.4));
      CHECK(s.median == Catch::Approx(0.4));
      CHECK(s.stddev == 0.0);
    }

  CHECK_THROWS_AS(aggregate({}), ContractError);
}

TEST_CASE("aggregate is permutation invariant") {
  std::vector<EvalRecord> records;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 12; ++i)
    records.push_back(EvalRecord{static_cast<std::uint64_t>(i), u(rng), u(rng) * 3, u(rng),
                                 i % 2 ? "ellipse" : "blob", i % 3 ? "target" : "source"});
  auto a = aggregate(records);
  std::shuffle(records.begin(), records.end(), rng);
  auto b = aggregate(records);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].group == b[i].group);
    CHECK(a[i].metric == b[i].metric);
    CHECK(a[i].mean == Catch::Approx(b[i].mean).margin(1e-12));
    CHECK(a[i].median == Catch::Approx(b[i].median).margin(1e-12));
  }
}

TEST_CASE("paired deltas match on seeds only") {
  std::vector<EvalRecord> a = {{1, 0.5, 0, 0, "e", "t"}, {2, 0.7, 0, 0, "e", "t"},
                               {9, 0.9, 0, 0, "e", "t"}};
  std::vector<EvalRecord> b = {{1, 0.4, 0, 0, "e", "t"}, {2, 0.5, 0, 0, "e", "t"},
                               {7, 0.1, 0, 0, "e", "t"}};
  auto [delta, n] = paired_dsc_delta(a, b);
  CHECK(n == 2);
  CHECK(delta == Catch::Approx(0.15));

  // identical predictions pair to zero
  auto [zero, nz] = paired_dsc_delta(a, a);
  CHECK(nz == 3);
  CHECK(zero == 0.0);
}
