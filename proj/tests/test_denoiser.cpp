#include <doctest.h>

#include <cmath>

#include "hetpure/denoiser.hpp"
#include "hetpure/rng.hpp"

using namespace hetpure;

namespace {

NoiseSchedule schedule_with_betas(std::vector<double> betas) {
  NoiseSchedule s;
  s.T = static_cast<int>(betas.size());
  s.betas = std::move(betas);
  double prod = 1.0;
  for (double b : s.betas) {
    s.alphas.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bars.push_back(prod);
    s.posterior_sigmas.push_back(std::sqrt(b));
  }
  return s;
}

DenoiserNetConfig tiny_net() {
  DenoiserNetConfig cfg;
  cfg.channels = 1;
  cfg.image_h = 8;
  cfg.image_w = 8;
  cfg.w1 = 4;
  cfg.w2 = 6;
  cfg.temb_dim = 8;
  return cfg;
}

}  // namespace

TEST_CASE("analytic predictor closed forms") {
  SUBCASE("unit-variance data, abar 0.5, x = 2 gives sqrt(2)") {
    NoiseSchedule s = schedule_with_betas({0.5});  // abar(1) = 0.5
    DenoiserModel m = DenoiserModel::analytic(Tensor(1, 1, 1, 0.0), 1.0);
    Tensor x(1, 1, 1, 2.0);
    Tensor eps = m.predict_eps(x, 1, s);
    CHECK(eps.data[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  }
  SUBCASE("point mass on manifold predicts zero") {
    NoiseSchedule s = schedule_with_betas({0.28});  // abar = 0.72
    Tensor mu0(1, 1, 1, 0.7);
    DenoiserModel m = DenoiserModel::analytic(mu0, 0.0);
    Tensor x(1, 1, 1, std::sqrt(0.72) * 0.7);
    Tensor eps = m.predict_eps(x, 1, s);
    CHECK(eps.data[0] == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("point mass near abar = 1 matches scalar oracle") {
    NoiseSchedule s = schedule_with_betas({0.01});  // abar = 0.99
    Tensor mu0(1, 1, 1, 0.4);
    DenoiserModel m = DenoiserModel::analytic(mu0, 0.0);
    double x_val = 0.9;
    Tensor x(1, 1, 1, x_val);
    Tensor eps = m.predict_eps(x, 1, s);
    double oracle = (x_val - std::sqrt(0.99) * 0.4) / std::sqrt(1.0 - 0.99);
    CHECK(eps.data[0] == doctest::Approx(oracle).epsilon(1e-12));
  }
  SUBCASE("rejects out-of-range t and non-finite input") {
    NoiseSchedule s = schedule_with_betas({0.5});
    DenoiserModel m = DenoiserModel::analytic(Tensor(1, 1, 1, 0.0), 1.0);
    Tensor x(1, 1, 1, 0.5);
    CHECK_THROWS_AS(m.predict_eps(x, 0, s), std::out_of_range);
    CHECK_THROWS_AS(m.predict_eps(x, 2, s), std::out_of_range);
    x.data[0] = HUGE_VAL;
    CHECK_THROWS_AS(m.predict_eps(x, 1, s), std::invalid_argument);
  }
}

TEST_CASE("ddpm_step matches the scalar hand computation") {
  // alpha_t = 0.9, beta_t = 0.1, abar_t = 0.72; arrange eps_hat(x=1) = 0.5
  NoiseSchedule s = schedule_with_betas({0.2, 0.1});
  REQUIRE(s.alpha_bar(2) == doctest::Approx(0.72).epsilon(1e-14));
  double mu0_val = (1.0 - 0.5 * std::sqrt(0.28)) / std::sqrt(0.72);
  DenoiserModel m = DenoiserModel::analytic(Tensor(1, 1, 1, mu0_val), 0.0);
  Tensor x(1, 1, 1, 1.0), z(1, 1, 1, 0.0);
  CHECK(m.predict_eps(x, 2, s).data[0] == doctest::Approx(0.5).epsilon(1e-12));
  Tensor out = ddpm_step(m, x, 2, s, z);
  // frozen from the plug-in oracle
  CHECK(out.data[0] == doctest::Approx(0.9544901692782604).epsilon(1e-12));
}

TEST_CASE("ddpm_step is affine in z with slope sigma_t") {
  NoiseSchedule s = schedule_with_betas({0.04, 0.09});
  DenoiserModel m = DenoiserModel::analytic(Tensor(1, 2, 2, 0.3), 0.5);
  Rng rng(5);
  Tensor x(1, 2, 2);
  rng.fill_normal(x);
  Tensor z = rng.normal_like(x), zero = zeros_like(x);
  Tensor with_z = ddpm_step(m, x, 2, s, z);
  Tensor without = ddpm_step(m, x, 2, s, zero);
  for (std::size_t i = 0; i < x.data.size(); ++i)
    CHECK(with_z.data[i] - without.data[i] ==
          doctest::Approx(s.sigma(2) * z.data[i]).epsilon(1e-12));
}

TEST_CASE("near-zero beta makes the reverse step the identity") {
  NoiseSchedule s = schedule_with_betas({1e-14, 1e-14});
  DenoiserModel m = DenoiserModel::analytic(Tensor(1, 1, 1, 0.0), 1.0);
  Tensor x(1, 1, 1, 0.8), z(1, 1, 1, 0.0);
  Tensor out = ddpm_step(m, x, 2, s, z);
  CHECK(out.data[0] == doctest::Approx(0.8).epsilon(1e-10));
}

TEST_CASE("ddim_jump scalar plug-in and contracts") {
  // abar(1) = 0.8, abar(2) = 0.5
  NoiseSchedule s = schedule_with_betas({0.2, 0.375});
  REQUIRE(s.alpha_bar(2) == doctest::Approx(0.5).epsilon(1e-14));
  DenoiserModel m = DenoiserModel::analytic(Tensor(1, 1, 1, 0.0), 1.0);
  Tensor x(1, 1, 1, 1.0);

  SUBCASE("plug-in value frozen from the oracle") {
    CallCounter calls;
    Tensor out = ddim_jump(m, x, 2, 1, 0.0, s, nullptr, &calls);
    CHECK(m.predict_eps(x, 2, s).data[0] ==
          doctest::Approx(0.7071067811865476).epsilon(1e-12));
    CHECK(out.data[0] == doctest::Approx(0.9486832980505135).epsilon(1e-12));
    CHECK(calls.calls == 1);  // exactly one denoiser call
  }
  SUBCASE("deterministic at sigma 0") {
    Tensor a = ddim_jump(m, x, 2, 1, 0.0, s);
    Tensor b = ddim_jump(m, x, 2, 1, 0.0, s);
    CHECK(a.data == b.data);
  }
  SUBCASE("on-manifold point mass is invariant") {
    Tensor mu0(1, 1, 1, 0.6);
    DenoiserModel pm = DenoiserModel::analytic(mu0, 0.0);
    Tensor xm(1, 1, 1, std::sqrt(s.alpha_bar(2)) * 0.6);
    Tensor out = ddim_jump(pm, xm, 2, 1, 0.0, s);
    CHECK(out.data[0] == doctest::Approx(std::sqrt(s.alpha_bar(1)) * 0.6).epsilon(1e-12));
  }
  SUBCASE("jump to t = 0 returns the predicted clean point") {
    Tensor mu0(1, 1, 1, 0.6);
    DenoiserModel pm = DenoiserModel::analytic(mu0, 0.0);
    Tensor xm(1, 1, 1, std::sqrt(s.alpha_bar(2)) * 0.6);
    Tensor out = ddim_jump(pm, xm, 2, 0, 0.0, s);
    CHECK(out.data[0] == doctest::Approx(0.6).epsilon(1e-12));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(ddim_jump(m, x, 1, 1, 0.0, s), std::invalid_argument);
    CHECK_THROWS_AS(ddim_jump(m, x, 1, 2, 0.0, s), std::invalid_argument);
    // sigma^2 above 1 - abar(to)
    CHECK_THROWS_AS(ddim_jump(m, x, 2, 1, 0.5, s), std::invalid_argument);
  }
}

TEST_CASE("learned denoiser gradients match finite differences") {
  NoiseSchedule s = build_linear_schedule(10, 1e-3, 0.1);
  DenoiserModel m = DenoiserModel::learned(tiny_net(), 7);
  // final conv starts at zero; nudge it so the output path is generic
  {
    Rng jitter(13);
    for (double& v : m.conv_layers()[4].w) v = jitter.uniform(-0.2, 0.2);
  }
  Rng rng(3);
  Tensor x(1, 8, 8);
  rng.fill_normal(x);
  const int t = 5;

  // scalar objective: dot(eps_hat, probe)
  Tensor probe(1, 8, 8);
  rng.fill_normal(probe);
  auto objective = [&](const DenoiserModel& model, const Tensor& input) {
    return dot(model.predict_eps(input, t, s), probe);
  };

  DenoiserTrace tr;
  m.predict_eps(x, t, s, nullptr, &tr);
  DenoiserModel::Grads grads;
  grads.init_like(m);
  Tensor gin = m.backward(tr, probe, &grads);

  SUBCASE("input gradient") {
    Rng pick(21);
    for (int k = 0; k < 64; ++k) {
      std::size_t i = pick.next_below(x.size());
      Tensor xp = x;
      xp.data[i] += 1e-5;
      Tensor xm = x;
      xm.data[i] -= 1e-5;
      double fd = (objective(m, xp) - objective(m, xm)) / 2e-5;
      double tol = std::max(1e-6, 1e-4 * std::fabs(fd));
      CHECK(std::fabs(gin.data[i] - fd) <= tol);
    }
  }
  SUBCASE("parameter gradients across layer kinds") {
    auto fd_param = [&](std::vector<double>& param, std::size_t i) {
      double h = 1e-5, orig = param[i];
      param[i] = orig + h;
      double up = objective(m, x);
      param[i] = orig - h;
      double down = objective(m, x);
      param[i] = orig;
      return (up - down) / (2 * h);
    };
    Rng pick(22);
    for (int layer = 0; layer < 5; ++layer) {
      auto& L = m.conv_layers()[layer];
      for (int k = 0; k < 12; ++k) {
        std::size_t i = pick.next_below(L.w.size());
        double fd = fd_param(L.w, i);
        double tol = std::max(1e-6, 1e-4 * std::fabs(fd));
        CHECK(std::fabs(grads.convs[layer].w[i] - fd) <= tol);
      }
      std::size_t bi = pick.next_below(L.b.size());
      double fdb = fd_param(L.b, bi);
      CHECK(std::fabs(grads.convs[layer].b[bi] - fdb) <=
            std::max(1e-6, 1e-4 * std::fabs(fdb)));
    }
    for (int level = 0; level < 3; ++level) {
      auto& P = m.temb_projections()[level];
      for (int k = 0; k < 8; ++k) {
        std::size_t i = pick.next_below(P.w.size());
        double fd = fd_param(P.w, i);
        double tol = std::max(1e-6, 1e-4 * std::fabs(fd));
        CHECK(std::fabs(grads.temb_proj[level].w[i] - fd) <= tol);
      }
    }
  }
  SUBCASE("input_vjp equals backward without parameter grads") {
    Tensor v1 = m.input_vjp(tr, probe, s);
    CHECK(v1.data == gin.data);
  }
}

TEST_CASE("training is seeded and deterministic") {
  NoiseSchedule s = build_linear_schedule(20, 1e-3, 0.1);
  Dataset data;
  Rng rng(40);
  for (int i = 0; i < 12; ++i) {
    Tensor t(1, 8, 8);
    for (double& v : t.data) v = rng.uniform(0.0, 1.0);
    data.push_back({t, 0});
  }
  DenoiserModel a = train_denoiser(data, s, tiny_net(), 2, 0.01, 99);
  DenoiserModel b = train_denoiser(data, s, tiny_net(), 2, 0.01, 99);
  auto sa = a.segments(), sb = b.segments();
  REQUIRE(sa.size() == sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK(*sa[i].data == *sb[i].data);
  CHECK_THROWS_AS(train_denoiser({}, s, tiny_net(), 1, 0.01, 1), std::invalid_argument);
}

TEST_CASE("initialised model has prior-level dsm loss") {
  NoiseSchedule s = build_linear_schedule(20, 1e-3, 0.1);
  Dataset data;
  Rng rng(41);
  for (int i = 0; i < 8; ++i) {
    Tensor t(1, 8, 8);
    for (double& v : t.data) v = rng.uniform(0.0, 1.0);
    data.push_back({t, 0});
  }
  DenoiserModel m = train_denoiser(data, s, tiny_net(), 0, 0.01, 5);
  // zero epochs: output head is zero-initialised, so eps_hat = 0 and the
  // per-pixel loss is E[eps^2] = 1
  double loss = dsm_loss(m, data, s, 10, 400, 77);
  CHECK(loss == doctest::Approx(1.0).epsilon(0.10));
}

TEST_CASE("constant-image training approaches the analytic point mass") {
  NoiseSchedule s = build_linear_schedule(16, 5e-3, 0.15);
  Tensor constant(1, 8, 8, 0.55);
  Dataset data(24, {constant, 0});
  DenoiserModel m = train_denoiser(data, s, tiny_net(), 160, 0.01, 31);
  int t_mid = 8;
  double learned = dsm_loss(m, data, s, t_mid, 300, 123);
  DenoiserModel oracle = DenoiserModel::analytic(constant, 0.0);
  double analytic = dsm_loss(oracle, data, s, t_mid, 300, 123);
  CHECK(analytic == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(learned <= 0.05);
  CHECK(learned >= analytic - 1e-3);  // analytic optimality
}

TEST_CASE("reverse chain on gaussian data recovers the data moments") {
  // thin version of the distributional oracle; the acceptance suite runs the
  // full-size one
  NoiseSchedule s = build_linear_schedule(60, 1e-3, 0.25);
  Tensor mu0(1, 2, 2);
  mu0.data = {0.7, -0.1, 0.3, 1.2};
  const double sigma0 = 0.8;
  DenoiserModel m = DenoiserModel::analytic(mu0, sigma0);
  Rng rng(50);
  const int n = 3000;
  Tensor mean(1, 2, 2), m2(1, 2, 2);
  for (int i = 0; i < n; ++i) {
    Tensor x = rng.normal_like(mu0);
    for (int t = s.T; t >= 1; --t) {
      Tensor z = t > 1 ? rng.normal_like(x) : zeros_like(x);
      x = ddpm_step(m, x, t, s, z);
    }
    for (std::size_t k = 0; k < x.data.size(); ++k) {
      mean.data[k] += x.data[k] / n;
      m2.data[k] += x.data[k] * x.data[k] / n;
    }
  }
  for (std::size_t k = 0; k < mean.data.size(); ++k) {
    CHECK(std::fabs(mean.data[k] - mu0.data[k]) <= 0.08 * sigma0);
    double var = m2.data[k] - mean.data[k] * mean.data[k];
    CHECK(var == doctest::Approx(sigma0 * sigma0).epsilon(0.15));
  }
}
