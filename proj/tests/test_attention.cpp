#include <doctest.h>

#include <cmath>

#include "hetpure/attention.hpp"
#include "hetpure/rng.hpp"

using namespace hetpure;

namespace {

PooledMap map_of(int h, int w, std::vector<double> v) {
  PooledMap m;
  m.height = h;
  m.width = w;
  m.values = std::move(v);
  return m;
}

AttentionMap att_of(int h, int w, std::vector<double> v) {
  AttentionMap m;
  m.height = h;
  m.width = w;
  m.values = std::move(v);
  return m;
}

}  // namespace

TEST_CASE("channel_pool closed forms") {
  Tensor a(2, 1, 2);
  // channel 0: [1, -2]; channel 1: [2, 2]
  a.at(0, 0, 0) = 1.0;
  a.at(0, 0, 1) = -2.0;
  a.at(1, 0, 0) = 2.0;
  a.at(1, 0, 1) = 2.0;

  SUBCASE("sum_p p=2 hand values") {
    PooledMap g = channel_pool(a, PoolMode::SumP, 2);
    CHECK(g.values[0] == doctest::Approx(std::sqrt(5.0)).epsilon(1e-12));
    CHECK(g.values[1] == doctest::Approx(std::sqrt(8.0)).epsilon(1e-12));
  }
  SUBCASE("max_p p=2 hand values") {
    PooledMap g = channel_pool(a, PoolMode::MaxP, 2);
    CHECK(g.values[0] == doctest::Approx(4.0));
    CHECK(g.values[1] == doctest::Approx(4.0));
  }
  SUBCASE("sum equals sum_p at p=1") {
    PooledMap s = channel_pool(a, PoolMode::Sum, 1);
    PooledMap s1 = channel_pool(a, PoolMode::SumP, 1);
    for (std::size_t i = 0; i < s.values.size(); ++i)
      CHECK(s.values[i] == doctest::Approx(s1.values[i]).epsilon(1e-12));
    CHECK(s.values[0] == doctest::Approx(3.0));
  }
  SUBCASE("single channel returns absolute values") {
    Tensor one(1, 1, 2);
    one.at(0, 0, 0) = -1.5;
    one.at(0, 0, 1) = 0.25;
    for (int p : {1, 2, 3}) {
      PooledMap g = channel_pool(one, PoolMode::SumP, p);
      CHECK(g.values[0] == doctest::Approx(1.5).epsilon(1e-12));
      CHECK(g.values[1] == doctest::Approx(0.25).epsilon(1e-12));
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(channel_pool(a, PoolMode::SumP, 0), std::invalid_argument);
  }
}

TEST_CASE("pooling is invariant to channel permutation") {
  Rng rng(31);
  Tensor a(4, 3, 3);
  rng.fill_normal(a);
  Tensor perm(4, 3, 3);
  int order[4] = {2, 0, 3, 1};
  for (int c = 0; c < 4; ++c)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) perm.at(c, y, x) = a.at(order[c], y, x);
  for (auto mode : {PoolMode::Sum, PoolMode::SumP, PoolMode::MaxP}) {
    PooledMap g1 = channel_pool(a, mode, 3);
    PooledMap g2 = channel_pool(perm, mode, 3);
    for (std::size_t i = 0; i < g1.values.size(); ++i)
      CHECK(g1.values[i] == doctest::Approx(g2.values[i]).epsilon(1e-12));
  }
}

TEST_CASE("attention_map softmax properties") {
  SUBCASE("constant map gives uniform attention") {
    PooledMap g = map_of(2, 2, {3.3, 3.3, 3.3, 3.3});
    AttentionMap m = attention_map(g, 4, 4);
    for (double v : m.values) CHECK(v == doctest::Approx(1.0 / 16).epsilon(1e-12));
  }
  SUBCASE("1x1 source upsamples to uniform") {
    PooledMap g = map_of(1, 1, {7.0});
    AttentionMap m = attention_map(g, 4, 4);
    for (double v : m.values) CHECK(v == doctest::Approx(1.0 / 16).epsilon(1e-12));
  }
  SUBCASE("identity-size softmax hand values") {
    PooledMap g = map_of(2, 2, {0.0, 1.0, 1.0, 0.0});
    AttentionMap m = attention_map(g, 2, 2);
    double e = std::exp(1.0);
    CHECK(m.values[0] == doctest::Approx(1.0 / (2 + 2 * e)).epsilon(1e-12));
    CHECK(m.values[1] == doctest::Approx(e / (2 + 2 * e)).epsilon(1e-12));
    CHECK(m.values[0] == doctest::Approx(0.13447071068499755).epsilon(1e-10));
    CHECK(m.values[1] == doctest::Approx(0.36552928931500245).epsilon(1e-10));
  }
  SUBCASE("sums to one with positive entries on random maps") {
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
      PooledMap g = map_of(3, 5, {});
      g.values.resize(15);
      for (double& v : g.values) v = rng.uniform(0.0, 9.0);
      AttentionMap m = attention_map(g, 16, 16);
      double sum = 0.0;
      for (double v : m.values) {
        CHECK(v > 0.0);
        sum += v;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  SUBCASE("corner-aligned upsample keeps corner ordering") {
    PooledMap g = map_of(2, 2, {0.0, 1.0, 2.0, 5.0});
    AttentionMap m = attention_map(g, 8, 8);
    // largest source corner stays the largest output corner
    CHECK(m.values[63] > m.values[0]);
    CHECK(m.values[63] > m.values[7]);
    CHECK(m.values[63] > m.values[56]);
  }
  SUBCASE("non-finite input rejected") {
    PooledMap g = map_of(1, 2, {1.0, HUGE_VAL});
    CHECK_THROWS_AS(attention_map(g, 2, 2), std::invalid_argument);
  }
}

TEST_CASE("build_mask thresholding and union") {
  SUBCASE("normalised threshold hand case") {
    // map normalising to [0, 0.5, 1, 0.25]
    AttentionMap m = att_of(1, 4, {0.1, 0.2, 0.3, 0.15});
    AttentionMask mask = build_mask({m}, 0.8);
    CHECK(mask.bits == std::vector<std::uint8_t>{0, 0, 1, 0});
  }
  SUBCASE("union of two maps") {
    AttentionMap a = att_of(1, 4, {1.0, 0.0, 0.0, 0.0});
    AttentionMap b = att_of(1, 4, {0.0, 0.0, 1.0, 0.0});
    AttentionMask mask = build_mask({a, b}, 0.5);
    CHECK(mask.bits == std::vector<std::uint8_t>{1, 0, 1, 0});
  }
  SUBCASE("constant map contributes nothing") {
    AttentionMap c = att_of(1, 4, {0.25, 0.25, 0.25, 0.25});
    AttentionMask mask = build_mask({c}, 0.0);
    CHECK(mask.area() == 0);
    // tau = 0 keeps every strictly-positive normalised pixel; the minimum
    // normalises to exactly 0 and stays out under the strict inequality
    AttentionMap v = att_of(1, 4, {0.1, 0.2, 0.3, 0.15});
    AttentionMask m0 = build_mask({v}, 0.0);
    CHECK(m0.bits == std::vector<std::uint8_t>{0, 1, 1, 1});
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(build_mask({}, 0.5), std::invalid_argument);
    AttentionMap a = att_of(1, 4, {1, 0, 0, 0});
    AttentionMap b = att_of(2, 2, {1, 0, 0, 0});
    CHECK_THROWS_AS(build_mask({a, b}, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(build_mask({a}, 1.5), std::invalid_argument);
  }
}

TEST_CASE("mask area is non-increasing in tau and union equals OR") {
  Rng rng(12);
  std::vector<AttentionMap> maps;
  for (int b = 0; b < 3; ++b) {
    PooledMap g = map_of(4, 4, {});
    g.values.resize(16);
    for (double& v : g.values) v = rng.uniform(0.0, 4.0);
    maps.push_back(attention_map(g, 8, 8));
  }
  std::size_t prev = SIZE_MAX;
  for (int i = 0; i <= 20; ++i) {
    double tau = i / 20.0;
    AttentionMask mask = build_mask(maps, tau);
    CHECK(mask.area() <= prev);
    prev = mask.area();

    // union equals pixelwise OR of per-map masks
    AttentionMask orred(mask.height, mask.width, 0);
    for (const auto& m : maps) {
      AttentionMask single = build_mask({m}, tau);
      for (std::size_t k = 0; k < orred.bits.size(); ++k)
        orred.bits[k] = orred.bits[k] || single.bits[k];
    }
    CHECK(orred.bits == mask.bits);
  }
  // subset property between consecutive taus
  AttentionMask lo = build_mask(maps, 0.3), hi = build_mask(maps, 0.7);
  for (std::size_t k = 0; k < lo.bits.size(); ++k)
    if (hi.bits[k]) CHECK(lo.bits[k]);
}
