#include "hetpure/purifier.hpp"

#include <cmath>

namespace hetpure {

void PurifyConfig::validate(const NoiseSchedule& schedule) const {
  if (!(t_l_frac >= 0.0 && t_l_frac <= 1.0 && t_s_frac >= 0.0 && t_s_frac <= 1.0))
    throw std::invalid_argument("PurifyConfig: timestep fractions outside [0,1]");
  int t_l = step_of_fraction(schedule, t_l_frac);
  int t_s = step_of_fraction(schedule, t_s_frac);
  if (t_l <= t_s)
    throw std::invalid_argument("PurifyConfig: need t_l > t_s after rounding");
  if (!(tau >= 0.0 && tau <= 1.0))
    throw std::invalid_argument("PurifyConfig: tau outside [0,1]");
  if (resample_u < 0) throw std::invalid_argument("PurifyConfig: U must be >= 0");
  if (t_l - 1 + resample_u > schedule.T)
    throw std::invalid_argument("PurifyConfig: resampling lifts past T");
  if (ensemble < 1) throw std::invalid_argument("PurifyConfig: S must be >= 1");
  if (pool_p < 1) throw std::invalid_argument("PurifyConfig: p must be >= 1");
}

namespace {

void require_mask_fits(const AttentionMask& mask, const Tensor& x, const char* where) {
  if (mask.height != x.height || mask.width != x.width)
    throw std::invalid_argument(std::string(where) + ": mask dimensions " +
                                std::to_string(mask.height) + "x" +
                                std::to_string(mask.width) + " do not match image");
}

// out = mask ? a : b, mask broadcast across channels
Tensor merge_by_mask(const AttentionMask& mask, const Tensor& a, const Tensor& b) {
  Tensor out = zeros_like(a);
  for (int c = 0; c < a.channels; ++c)
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x)
        out.at(c, y, x) = mask.at(y, x) ? a.at(c, y, x) : b.at(c, y, x);
  return out;
}

}  // namespace

Tensor hetero_forward(const Tensor& x_adv, const AttentionMask& mask, int t_l,
                      int t_s, const NoiseSchedule& schedule, const Tensor& eps) {
  return hetero_forward(x_adv, mask, t_l, t_s, schedule, eps, eps);
}

Tensor hetero_forward(const Tensor& x_adv, const AttentionMask& mask, int t_l,
                      int t_s, const NoiseSchedule& schedule, const Tensor& eps_l,
                      const Tensor& eps_s) {
  if (t_l <= t_s) throw std::invalid_argument("hetero_forward: need t_l > t_s");
  require_mask_fits(mask, x_adv, "hetero_forward");
  Tensor noisy_l = q_sample(schedule, x_adv, t_l, eps_l);
  Tensor noisy_s = q_sample(schedule, x_adv, t_s, eps_s);
  return merge_by_mask(mask, noisy_l, noisy_s);
}

Tensor stage1_step(const Tensor& x_t, int t, const Tensor& x_adv,
                   const AttentionMask& mask, const DenoiserModel& model,
                   const NoiseSchedule& schedule, const Tensor& eps_known,
                   const Tensor& z, bool swap_mask_roles, CallCounter* counter,
                   DenoiserTrace* trace) {
  require_mask_fits(mask, x_t, "stage1_step");
  require_same_shape(x_t, x_adv, "stage1_step");

  // known region: fresh forward draw of the input at t-1 (abar(0) = 1)
  double ab = schedule.alpha_bar(t - 1);
  double c0 = std::sqrt(ab), ce = std::sqrt(1.0 - ab);
  Tensor known = zeros_like(x_adv);
  for (std::size_t i = 0; i < known.data.size(); ++i)
    known.data[i] = c0 * x_adv.data[i] + ce * eps_known.data[i];

  Tensor unknown = ddpm_step(model, x_t, t, schedule, z, counter, trace);

  // default orientation: the masked (high-noise) region is the predicted one
  return swap_mask_roles ? merge_by_mask(mask, known, unknown)
                         : merge_by_mask(mask, unknown, known);
}

Tensor stage1_step(const Tensor& x_t, int t, const Tensor& x_adv,
                   const AttentionMask& mask, const DenoiserModel& model,
                   const NoiseSchedule& schedule, Rng& rng, bool swap_mask_roles,
                   CallCounter* counter) {
  Tensor eps_known = t > 1 ? rng.normal_like(x_adv) : zeros_like(x_adv);
  Tensor z = t > 1 ? rng.normal_like(x_t) : zeros_like(x_t);
  return stage1_step(x_t, t, x_adv, mask, model, schedule, eps_known, z,
                     swap_mask_roles, counter);
}

Tensor resample_refine(const Tensor& x_prev, int t, int U,
                       const DenoiserModel& model, const NoiseSchedule& schedule,
                       Rng& rng, CallCounter* counter,
                       PurifyTape::Stage1Op* tape_op) {
  if (U < 0) throw std::invalid_argument("resample_refine: U must be >= 0");
  if (U == 0) return x_prev;
  if (t - 1 + U > schedule.T)
    throw std::invalid_argument("resample_refine: t-1+U exceeds T");

  // lift x_{t-1} to x_{t-1+U} one forward step at a time (destination alpha)
  Tensor s = x_prev;
  double renoise_scale = 1.0;
  for (int u = 1; u <= U; ++u) {
    int j = t - 1 + u;
    double a = schedule.alpha(j);
    double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
    renoise_scale *= sa;
    if (t > 1) {
      Tensor z = rng.normal_like(s);
      for (std::size_t i = 0; i < s.data.size(); ++i)
        s.data[i] = sa * s.data[i] + sn * z.data[i];
    } else {
      for (std::size_t i = 0; i < s.data.size(); ++i) s.data[i] = sa * s.data[i];
    }
  }
  DenoiserTrace* tr = tape_op ? &tape_op->ddim : nullptr;
  Tensor out = ddim_jump(model, s, t - 1 + U, t - 1, 0.0, schedule, nullptr,
                         counter, tr);
  if (tape_op) {
    tape_op->refined = true;
    tape_op->renoise_scale = renoise_scale;
    tape_op->ddim_from = t - 1 + U;
    tape_op->ddim_to = t - 1;
  }
  return out;
}

Tensor reverse_chain(Tensor x, int t_start, const DenoiserModel& model,
                     const NoiseSchedule& schedule, Rng& rng, CallCounter* counter,
                     std::vector<StageRecord>* trace) {
  for (int t = t_start; t >= 1; --t) {
    Tensor z = t > 1 ? rng.normal_like(x) : zeros_like(x);
    x = ddpm_step(model, x, t, schedule, z, counter);
    if (trace) trace->push_back({t, '2', x});
  }
  return x;
}

long expected_denoiser_calls(int t_l, int t_s, int U, bool legacy) {
  long stage1_steps = t_l - t_s + 1;
  long stage2_steps = t_s - 1;
  if (U == 0) return stage1_steps + stage2_steps;
  if (legacy) return stage1_steps * (U + 1) + stage2_steps;
  return 2 * stage1_steps + stage2_steps;
}

PurifiedResult purify(const Tensor& x, const ClassifierModel& classifier,
                      const DenoiserModel& denoiser, const NoiseSchedule& schedule,
                      const PurifyConfig& cfg, const AttentionMask* precomputed_mask,
                      PurifyTape* tape, bool keep_stage_trace) {
  cfg.validate(schedule);
  if (tape && cfg.legacy_resample)
    throw std::invalid_argument("purify: gradient tape requires single-step resampling");

  const int t_l = step_of_fraction(schedule, cfg.t_l_frac);
  const int t_s = step_of_fraction(schedule, cfg.t_s_frac);

  PurifiedResult res;
  if (precomputed_mask) {
    require_mask_fits(*precomputed_mask, x, "purify");
    res.mask = *precomputed_mask;
  } else {
    auto [pred, stack] = classifier.forward_with_activations(x);
    (void)pred;
    ActivationStack selected;
    if (cfg.mask_blocks.empty()) {
      selected = std::move(stack);
    } else {
      for (int b : cfg.mask_blocks) {
        if (b < 0 || b >= static_cast<int>(stack.size()))
          throw std::invalid_argument("purify: mask block index out of range");
        selected.push_back(stack[b]);
      }
    }
    auto maps = attention_maps_for_stack(selected, x.height, x.width,
                                         cfg.pool_mode, cfg.pool_p);
    res.mask = build_mask(maps, cfg.tau);
  }

  Rng root(cfg.rng_seed);
  Rng r_mix = root.fork(kStreamMixEps);
  Rng r_known = root.fork(kStreamKnown);
  Rng r_z = root.fork(kStreamUnknownZ);
  Rng r_res = root.fork(kStreamResample);
  Rng r_s2 = root.fork(kStreamStage2);

  CallCounter calls;

  Tensor eps_l = r_mix.normal_like(x);
  Tensor state = cfg.independent_eps
                     ? hetero_forward(x, res.mask, t_l, t_s, schedule, eps_l,
                                      r_mix.normal_like(x))
                     : hetero_forward(x, res.mask, t_l, t_s, schedule, eps_l);

  if (tape) {
    tape->t_l = t_l;
    tape->t_s = t_s;
    tape->swap_mask_roles = cfg.swap_mask_roles;
    tape->independent_eps = cfg.independent_eps;
    tape->mask = res.mask;
    tape->stage1.clear();
    tape->stage2.clear();
  }

  // Stage 1: inpainting loop over t in [t_s, t_l]
  for (int t = t_l; t >= t_s; --t) {
    Tensor eps_known = t > 1 ? r_known.normal_like(x) : zeros_like(x);
    Tensor z = t > 1 ? r_z.normal_like(x) : zeros_like(x);

    PurifyTape::Stage1Op op;
    op.t = t;
    DenoiserTrace* tr = tape ? &op.ddpm : nullptr;
    state = stage1_step(state, t, x, res.mask, denoiser, schedule, eps_known, z,
                        cfg.swap_mask_roles, &calls, tr);

    if (cfg.resample_u > 0) {
      if (cfg.legacy_resample) {
        // multi-step baseline: lift one step and redo the merge, U times
        for (int u = 0; u < cfg.resample_u; ++u) {
          double a = schedule.alpha(t);
          double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
          Tensor lifted = zeros_like(state);
          if (t > 1) {
            Tensor zu = r_res.normal_like(state);
            for (std::size_t i = 0; i < state.data.size(); ++i)
              lifted.data[i] = sa * state.data[i] + sn * zu.data[i];
          } else {
            for (std::size_t i = 0; i < state.data.size(); ++i)
              lifted.data[i] = sa * state.data[i];
          }
          Tensor ek = t > 1 ? r_known.normal_like(x) : zeros_like(x);
          Tensor zz = t > 1 ? r_z.normal_like(x) : zeros_like(x);
          state = stage1_step(lifted, t, x, res.mask, denoiser, schedule, ek, zz,
                              cfg.swap_mask_roles, &calls);
        }
      } else {
        state = resample_refine(state, t, cfg.resample_u, denoiser, schedule,
                                r_res, &calls, tape ? &op : nullptr);
      }
    }
    if (tape) tape->stage1.push_back(std::move(op));
    if (keep_stage_trace) res.stage_trace.push_back({t, '1', state});
  }

  // Stage 2: standard chain for t < t_s
  for (int t = t_s - 1; t >= 1; --t) {
    Tensor z = t > 1 ? r_s2.normal_like(x) : zeros_like(x);
    PurifyTape::Stage2Op op;
    op.t = t;
    DenoiserTrace* tr = tape ? &op.trace : nullptr;
    state = ddpm_step(denoiser, state, t, schedule, z, &calls, tr);
    if (tape) tape->stage2.push_back(std::move(op));
    if (keep_stage_trace) res.stage_trace.push_back({t, '2', state});
  }

  res.image = std::move(state);
  res.denoiser_calls = calls.calls;
  return res;
}

HomogeneousResult purify_homogeneous(const Tensor& x, const DenoiserModel& denoiser,
                                     const NoiseSchedule& schedule, double t_star_frac,
                                     std::uint64_t seed) {
  int t_star = step_of_fraction(schedule, t_star_frac);
  Rng root(seed);
  Rng r_mix = root.fork(kStreamMixEps);
  Rng r_s2 = root.fork(kStreamStage2);
  CallCounter calls;
  Tensor eps = r_mix.normal_like(x);
  Tensor state = q_sample(schedule, x, t_star, eps);
  state = reverse_chain(std::move(state), t_star, denoiser, schedule, r_s2, &calls);
  return {std::move(state), calls.calls};
}

Prediction ensemble_classify(const Tensor& x, const ClassifierModel& classifier,
                             const DenoiserModel& denoiser,
                             const NoiseSchedule& schedule, const PurifyConfig& cfg,
                             long* total_denoiser_calls) {
  if (cfg.ensemble < 1)
    throw std::invalid_argument("ensemble_classify: S must be >= 1");
  std::vector<double> avg;
  long calls = 0;
  for (int s = 0; s < cfg.ensemble; ++s) {
    PurifyConfig run_cfg = cfg;
    run_cfg.rng_seed = cfg.ensemble == 1
                           ? cfg.rng_seed
                           : mix_seed(cfg.rng_seed, kStreamEnsemble + s);
    PurifiedResult pr = purify(x, classifier, denoiser, schedule, run_cfg);
    calls += pr.denoiser_calls;
    Prediction p = classifier.predict(pr.image);
    if (avg.empty()) avg.assign(p.probs.size(), 0.0);
    for (std::size_t k = 0; k < avg.size(); ++k) avg[k] += p.probs[k] / cfg.ensemble;
  }
  if (total_denoiser_calls) *total_denoiser_calls += calls;
  Prediction out;
  out.probs = avg;
  out.logits = avg;
  out.label = 0;
  for (std::size_t k = 1; k < avg.size(); ++k)
    if (avg[k] > avg[out.label]) out.label = static_cast<int>(k);
  return out;
}

Tensor PurifyTape::backward(const Tensor& grad_image, const DenoiserModel& model,
                            const NoiseSchedule& schedule) const {
  Tensor g = grad_image;        // cotangent wrt the running state
  Tensor gx = zeros_like(grad_image);  // accumulated input gradient

  auto mask_select = [&](const Tensor& t, bool inside) {
    Tensor out = zeros_like(t);
    for (int c = 0; c < t.channels; ++c)
      for (int y = 0; y < t.height; ++y)
        for (int x = 0; x < t.width; ++x) {
          bool m = mask.at(y, x) != 0;
          if (m == inside) out.at(c, y, x) = t.at(c, y, x);
        }
    return out;
  };

  // stage 2, reverse order
  for (auto it = stage2.rbegin(); it != stage2.rend(); ++it) {
    int t = it->t;
    double inv_sa = 1.0 / std::sqrt(schedule.alpha(t));
    double ec = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
    // x_{t-1} = (x_t - ec*eps(x_t))/sqrt(alpha): g_x = (g - ec*J^T g)/sqrt(a)
    Tensor jg = model.input_vjp(it->trace, g, schedule);
    for (std::size_t i = 0; i < g.data.size(); ++i)
      g.data[i] = inv_sa * (g.data[i] - ec * jg.data[i]);
  }

  // stage 1, reverse order
  for (auto it = stage1.rbegin(); it != stage1.rend(); ++it) {
    int t = it->t;
    if (it->refined) {
      // ddim jump: out = c_keep * s + c_eps * eps(s)
      double ab_to = schedule.alpha_bar(it->ddim_to);
      double ab_from = schedule.alpha_bar(it->ddim_from);
      double c_keep = std::sqrt(ab_to / ab_from);
      double c_eps = std::sqrt(1.0 - ab_to) - c_keep * std::sqrt(1.0 - ab_from);
      Tensor jg = model.input_vjp(it->ddim, g, schedule);
      for (std::size_t i = 0; i < g.data.size(); ++i)
        g.data[i] = c_keep * g.data[i] + c_eps * jg.data[i];
      // renoise lifts: s = renoise_scale * merged + noise
      for (double& v : g.data) v *= it->renoise_scale;
    }

    // merged = mask ? unknown : known (default orientation)
    Tensor g_unknown = mask_select(g, !swap_mask_roles);
    Tensor g_known = mask_select(g, swap_mask_roles);

    // known = sqrt(abar_{t-1}) * x + noise
    double c_known = std::sqrt(schedule.alpha_bar(t - 1));
    for (std::size_t i = 0; i < gx.data.size(); ++i)
      gx.data[i] += c_known * g_known.data[i];

    // unknown = ddpm step of the previous state
    double inv_sa = 1.0 / std::sqrt(schedule.alpha(t));
    double ec = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
    Tensor jg = model.input_vjp(it->ddpm, g_unknown, schedule);
    for (std::size_t i = 0; i < g.data.size(); ++i)
      g.data[i] = inv_sa * (g_unknown.data[i] - ec * jg.data[i]);
  }

  // the two-intensity mix: state = sqrt(abar_tl)*x inside, sqrt(abar_ts)*x outside
  double c_l = std::sqrt(schedule.alpha_bar(t_l));
  double c_s = std::sqrt(schedule.alpha_bar(t_s));
  for (int c = 0; c < g.channels; ++c)
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x)
        gx.at(c, y, x) += (mask.at(y, x) ? c_l : c_s) * g.at(c, y, x);
  return gx;
}

}  // namespace hetpure
