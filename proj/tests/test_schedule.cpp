#include <doctest.h>

#include <cmath>

#include "hetpure/rng.hpp"
#include "hetpure/schedule.hpp"

using namespace hetpure;

namespace {

// brute-force cumulative product, long double accumulator
std::vector<double> cumprod_oracle(const std::vector<double>& betas) {
  std::vector<double> out(betas.size());
  long double p = 1.0L;
  for (std::size_t i = 0; i < betas.size(); ++i) {
    p *= (1.0L - static_cast<long double>(betas[i]));
    out[i] = static_cast<double>(p);
  }
  return out;
}

}  // namespace

TEST_CASE("linear schedule basic construction") {
  NoiseSchedule s = build_linear_schedule(3, 0.1, 0.3);
  CHECK(s.T == 3);
  CHECK(s.beta(1) == doctest::Approx(0.1));
  CHECK(s.beta(2) == doctest::Approx(0.2));
  CHECK(s.beta(3) == doctest::Approx(0.3));
  // hand-computed cumulative products
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(s.alpha_bar(2) == doctest::Approx(0.72).epsilon(1e-12));
  CHECK(s.alpha_bar(3) == doctest::Approx(0.504).epsilon(1e-12));
  CHECK(s.alpha_bar(0) == 1.0);
  for (int t = 1; t <= 3; ++t) {
    CHECK(s.alpha(t) == 1.0 - s.beta(t));  // exact
    CHECK(s.sigma(t) == doctest::Approx(std::sqrt(s.beta(t))));
  }
}

TEST_CASE("near-zero betas give identity diffusion") {
  NoiseSchedule s = build_linear_schedule(3, 1e-9, 1e-9);
  for (int t = 1; t <= 3; ++t) CHECK(s.alpha_bar(t) == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("standard 1000-step schedule matches brute-force product") {
  NoiseSchedule s = build_linear_schedule(1000, 1e-4, 0.02);
  auto oracle = cumprod_oracle(s.betas);
  for (int t = 1; t <= 1000; ++t) {
    double rel = std::fabs(s.alpha_bar(t) - oracle[t - 1]) / oracle[t - 1];
    CHECK(rel <= 1e-12);
  }
  CHECK(s.alpha_bar(1000) < 5e-5);  // frozen from the brute-force oracle
  // alpha_bars strictly decreasing, recursion consistent
  for (int t = 2; t <= 1000; ++t) {
    CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    double rel = std::fabs(s.alpha_bar(t) - s.alpha_bar(t - 1) * s.alpha(t)) /
                 s.alpha_bar(t);
    CHECK(rel <= 1e-12);
  }
}

TEST_CASE("schedule construction rejects bad parameters") {
  CHECK_THROWS_AS(build_linear_schedule(0, 1e-4, 0.02), std::invalid_argument);
  CHECK_THROWS_AS(build_linear_schedule(10, 0.0, 0.02), std::invalid_argument);
  CHECK_THROWS_AS(build_linear_schedule(10, 0.3, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(build_linear_schedule(10, 0.1, 1.0), std::invalid_argument);
}

TEST_CASE("q_sample closed form") {
  NoiseSchedule s = build_linear_schedule(3, 0.1, 0.3);  // abar(2) = 0.72
  Tensor x0(1, 1, 1, 1.0), eps(1, 1, 1, 0.0);

  SUBCASE("zero eps returns scaled x0") {
    Tensor out = q_sample(s, x0, 2, eps);
    CHECK(out.data[0] == doctest::Approx(0.848528137423857).epsilon(1e-12));
  }
  SUBCASE("identity schedule returns x0 exactly") {
    NoiseSchedule id = build_linear_schedule(3, 1e-15, 1e-15);
    eps.data[0] = 1.0;
    Tensor out = q_sample(id, x0, 2, eps);
    CHECK(out.data[0] == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("errors") {
    Tensor bad(1, 2, 1);
    CHECK_THROWS(q_sample(s, x0, 2, bad));
    CHECK_THROWS(q_sample(s, x0, 0, eps));
    CHECK_THROWS(q_sample(s, x0, 4, eps));
  }
}

TEST_CASE("q_sample Monte-Carlo moments match the forward marginal") {
  NoiseSchedule s = build_linear_schedule(100, 1e-3, 0.1);
  Tensor x0(1, 2, 2);
  x0.data = {0.2, 0.5, 0.8, 1.0};
  Rng rng(42);
  for (int t : {5, 50, 100}) {
    const int n = 100000;
    Tensor mean(1, 2, 2), m2(1, 2, 2);
    for (int i = 0; i < n; ++i) {
      Tensor eps = rng.normal_like(x0);
      Tensor xt = q_sample(s, x0, t, eps);
      for (std::size_t k = 0; k < xt.data.size(); ++k) {
        mean.data[k] += xt.data[k] / n;
        m2.data[k] += xt.data[k] * xt.data[k] / n;
      }
    }
    double c0 = std::sqrt(s.alpha_bar(t));
    double sd = std::sqrt(1.0 - s.alpha_bar(t));
    for (std::size_t k = 0; k < mean.data.size(); ++k) {
      CHECK(mean.data[k] == doctest::Approx(c0 * x0.data[k]).epsilon(0.02));
      double est_sd = std::sqrt(m2.data[k] - mean.data[k] * mean.data[k]);
      CHECK(est_sd == doctest::Approx(sd).epsilon(0.02));
    }
  }
}

TEST_CASE("q_sample is affine in x0") {
  NoiseSchedule s = build_linear_schedule(10, 1e-3, 0.1);
  Rng rng(7);
  Tensor x0(1, 3, 3), zero(1, 3, 3);
  rng.fill_normal(x0);
  Tensor eps = rng.normal_like(x0);
  const double a = 2.75;
  Tensor ax0 = x0;
  for (double& v : ax0.data) v *= a;
  Tensor lhs = add_scaled(q_sample(s, ax0, 5, eps), -1.0, q_sample(s, zero, 5, eps));
  Tensor rhs = add_scaled(q_sample(s, x0, 5, eps), -1.0, q_sample(s, zero, 5, eps));
  for (std::size_t k = 0; k < lhs.data.size(); ++k)
    CHECK(lhs.data[k] == doctest::Approx(a * rhs.data[k]).epsilon(1e-10));
}

TEST_CASE("step_of_fraction rounding, clamping, monotonicity") {
  NoiseSchedule s = build_linear_schedule(1000, 1e-4, 0.02);
  CHECK(step_of_fraction(s, 0.0) == 1);
  CHECK(step_of_fraction(s, 0.2) == 200);
  CHECK(step_of_fraction(s, 0.05) == 50);
  CHECK(step_of_fraction(s, 1.0) == 1000);
  CHECK_THROWS_AS(step_of_fraction(s, -0.01), std::invalid_argument);
  CHECK_THROWS_AS(step_of_fraction(s, 1.01), std::invalid_argument);

  int prev = 1;
  bool hit[1001] = {false};
  for (int i = 0; i <= 5000; ++i) {
    int t = step_of_fraction(s, i / 5000.0);
    CHECK(t >= prev);
    prev = t;
    hit[t] = true;
  }
  for (int t = 1; t <= 1000; ++t) CHECK(hit[t]);  // surjective on a fine grid
}
