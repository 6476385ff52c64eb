#include <cmath>
#include <limits>

#include "combo/error.hpp"
#include "combo/model_params.hpp"
#include "combo/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace combo;

namespace {

std::vector<double> random_values(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  for (auto& x : v) x = (rng.uniform() - 0.5) * std::pow(10.0, static_cast<double>(rng.below(12)) - 6);
  return v;
}

}  // namespace

TEST_SUITE("model-params") {
  TEST_CASE("model params reject empty and non-finite values") {
    CHECK_THROWS_AS(ModelParams({}), Error);
    CHECK_THROWS_AS(ModelParams({1.0, std::numeric_limits<double>::quiet_NaN()}), Error);
    CHECK_THROWS_AS(ModelParams({std::numeric_limits<double>::infinity()}), Error);
    const ModelParams z = ModelParams::zeros(3);
    CHECK(z.dim() == 3);
    CHECK(z[2] == 0.0);
  }

  TEST_CASE("make_scheme examples") {
    const auto one = make_scheme(10, 1);
    REQUIRE(one.num_segments() == 1);
    CHECK(one.range(0) == SegmentRange{0, 10});

    const auto unit = make_scheme(10, 10);
    for (std::size_t l = 0; l < 10; ++l) CHECK(unit.range(l) == SegmentRange{l, l + 1});

    const auto three = make_scheme(10, 3);
    CHECK(three.range(0) == SegmentRange{0, 4});
    CHECK(three.range(1) == SegmentRange{4, 7});
    CHECK(three.range(2) == SegmentRange{7, 10});
  }

  TEST_CASE("make_scheme rejects S = 0 and S > dim") {
    auto code_of = [](auto fn) {
      try {
        fn();
      } catch (const Error& e) {
        return e.code();
      }
      return Errc::invalid_argument;
    };
    CHECK(code_of([] { make_scheme(10, 0); }) == Errc::invalid_scheme);
    CHECK(code_of([] { make_scheme(10, 11); }) == Errc::invalid_scheme);
  }

  TEST_CASE("split examples") {
    const auto a = split(ModelParams({1, 2, 3, 4}), make_scheme(4, 2));
    REQUIRE(a.size() == 2);
    CHECK(a[0].values == std::vector<double>{1, 2});
    CHECK(a[1].values == std::vector<double>{3, 4});

    const auto b = split(ModelParams({5, 6, 7}), make_scheme(3, 2));
    CHECK(b[0].values == std::vector<double>{5, 6});
    CHECK(b[1].values == std::vector<double>{7});

    const ModelParams m({0.5, -1, 3});
    const auto c = split(m, make_scheme(3, 1));
    REQUIRE(c.size() == 1);
    CHECK(c[0].values == std::vector<double>(m.values().begin(), m.values().end()));

    CHECK_THROWS_AS(split(m, make_scheme(4, 2)), Error);
  }

  TEST_CASE("rebuild examples") {
    const auto scheme = make_scheme(4, 2);
    CHECK(rebuild(split(ModelParams({1, 2, 3, 4}), scheme), scheme) == ModelParams({1, 2, 3, 4}));

    const std::vector<Segment> mixed{{0, {9, 9}, worker_id(0)}, {1, {8, 8}, worker_id(1)}};
    CHECK(rebuild(mixed, scheme) == ModelParams({9, 9, 8, 8}));

    const std::vector<Segment> reversed{mixed[1], mixed[0]};
    CHECK(rebuild(reversed, scheme) == ModelParams({9, 9, 8, 8}));
  }

  TEST_CASE("rebuild rejects missing, duplicate and mis-sized segments") {
    const auto scheme = make_scheme(4, 2);
    auto code_of = [&](std::vector<Segment> segs) {
      try {
        rebuild(segs, scheme);
      } catch (const Error& e) {
        return e.code();
      }
      FAIL("rebuild accepted a bad segment set");
      return Errc::invalid_argument;
    };
    CHECK(code_of({{0, {1, 2}, {}}}) == Errc::missing_segment);
    CHECK(code_of({{0, {1, 2}, {}}, {0, {1, 2}, {}}}) == Errc::duplicate_segment);
    CHECK(code_of({{0, {1, 2}, {}}, {1, {3}, {}}}) == Errc::segment_length);
    CHECK(code_of({{0, {1, 2}, {}}, {2, {3, 4}, {}}}) == Errc::invalid_argument);
  }

  TEST_CASE("property: split/rebuild round trip is bit exact") {
    Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
      const std::size_t dim = 1 + rng.below(1000);
      const std::size_t s = 1 + rng.below(dim);
      const ModelParams m(random_values(rng, dim));
      const auto scheme = make_scheme(dim, s);
      auto segs = split(m, scheme);
      rng.shuffle(std::span<Segment>(segs));
      REQUIRE(rebuild(segs, scheme) == m);
    }
  }

  TEST_CASE("property: schemes partition [0, dim) with lengths differing by at most one") {
    Rng rng(12);
    for (int trial = 0; trial < 500; ++trial) {
      const std::size_t dim = 1 + rng.below(1000);
      const std::size_t s = 1 + rng.below(dim);
      const auto scheme = make_scheme(dim, s);
      const auto want = oracle::equal_split(dim, s);
      REQUIRE(scheme.num_segments() == s);
      std::vector<int> hits(dim, 0);
      std::size_t lo = dim, hi = 0;
      for (std::size_t l = 0; l < s; ++l) {
        const auto& r = scheme.range(l);
        CHECK(r.begin == want[l].first);
        CHECK(r.end == want[l].second);
        lo = std::min(lo, r.size());
        hi = std::max(hi, r.size());
        for (std::size_t i = r.begin; i < r.end; ++i) {
          ++hits[i];
          REQUIRE(scheme.segment_of(i) == l);
        }
      }
      CHECK(hi - lo <= 1);
      for (int h : hits) REQUIRE(h == 1);
      CHECK(make_scheme(dim, s) == scheme);
    }
  }
}
