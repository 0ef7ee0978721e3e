#include "hetpure/attack.hpp"

#include <cmath>

namespace hetpure {

AttackNorm attack_norm_from_string(const std::string& s) {
  if (s == "linf") return AttackNorm::Linf;
  if (s == "l2") return AttackNorm::L2;
  throw std::invalid_argument("unknown attack norm: " + s);
}

AttackMode attack_mode_from_string(const std::string& s) {
  if (s == "fgsm") return AttackMode::Fgsm;
  if (s == "pgd") return AttackMode::Pgd;
  if (s == "bpda_eot") return AttackMode::BpdaEot;
  if (s == "adaptive" || s == "pgd_eot_adaptive") return AttackMode::PgdEotAdaptive;
  throw std::invalid_argument("unknown attack mode: " + s);
}

std::string to_string(AttackNorm n) {
  return n == AttackNorm::Linf ? "linf" : "l2";
}

std::string to_string(AttackMode m) {
  switch (m) {
    case AttackMode::Fgsm: return "fgsm";
    case AttackMode::Pgd: return "pgd";
    case AttackMode::BpdaEot: return "bpda_eot";
    case AttackMode::PgdEotAdaptive: return "adaptive";
  }
  return "?";
}

void AttackConfig::validate() const {
  // epsilon == 0 is the degenerate ball: projection pins the iterate to x
  if (epsilon < 0.0) throw std::invalid_argument("AttackConfig: epsilon must be >= 0");
  if (step_size <= 0.0) throw std::invalid_argument("AttackConfig: step must be > 0");
  if (iterations < 1) throw std::invalid_argument("AttackConfig: iterations must be >= 1");
  if (eot_samples < 1) throw std::invalid_argument("AttackConfig: eot must be >= 1");
  if (mode != AttackMode::Fgsm && epsilon > 0.0 && step_size > epsilon)
    throw std::invalid_argument("AttackConfig: step size exceeds epsilon");
}

Tensor project(const Tensor& candidate, const Tensor& origin, AttackNorm norm,
               double epsilon) {
  require_same_shape(candidate, origin, "project");
  Tensor out = candidate;
  if (norm == AttackNorm::Linf) {
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      double lo = origin.data[i] - epsilon, hi = origin.data[i] + epsilon;
      out.data[i] = std::min(hi, std::max(lo, out.data[i]));
    }
  } else {
    double norm2 = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      double d = out.data[i] - origin.data[i];
      norm2 += d * d;
    }
    double n = std::sqrt(norm2);
    if (n > epsilon && n > 0.0) {
      double scale = epsilon / n;
      for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = origin.data[i] + scale * (out.data[i] - origin.data[i]);
    }
  }
  return clamp01(std::move(out));
}

Tensor fgsm(const Tensor& x, int y, const ClassifierModel& classifier,
            double epsilon) {
  if (epsilon <= 0.0) throw std::invalid_argument("fgsm: epsilon must be > 0");
  Tensor g = classifier.input_gradient(x, y);
  require_finite(g, "fgsm");
  Tensor out = x;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    double s = g.data[i] > 0.0 ? 1.0 : (g.data[i] < 0.0 ? -1.0 : 0.0);
    out.data[i] += epsilon * s;
  }
  return clamp01(std::move(out));
}

Tensor pgd(const Tensor& x, const GradientFn& grad_fn, const AttackConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, 0xA77ACA11ull));

  Tensor cur = x;
  if (cfg.random_start) {
    if (cfg.norm == AttackNorm::Linf) {
      for (double& v : cur.data) v += rng.uniform(-cfg.epsilon, cfg.epsilon);
    } else {
      // uniform in the L2 ball: direction ~ N(0,I), radius ~ eps * u^(1/d)
      Tensor dir = rng.normal_like(cur);
      double n = l2_norm(dir);
      if (n > 0.0) {
        double r = cfg.epsilon *
                   std::pow(rng.uniform(), 1.0 / static_cast<double>(cur.size()));
        for (std::size_t i = 0; i < cur.data.size(); ++i)
          cur.data[i] += dir.data[i] * (r / n);
      }
    }
    cur = project(cur, x, cfg.norm, cfg.epsilon);
  }

  for (int it = 0; it < cfg.iterations; ++it) {
    Tensor g = grad_fn(cur);
    if (!g.all_finite())
      throw std::runtime_error("pgd: non-finite gradient at iteration " +
                               std::to_string(it));
    if (cfg.norm == AttackNorm::Linf) {
      for (std::size_t i = 0; i < cur.data.size(); ++i) {
        double s = g.data[i] > 0.0 ? 1.0 : (g.data[i] < 0.0 ? -1.0 : 0.0);
        cur.data[i] += cfg.step_size * s;
      }
    } else {
      double n = l2_norm(g);
      if (n > 0.0)
        for (std::size_t i = 0; i < cur.data.size(); ++i)
          cur.data[i] += cfg.step_size * g.data[i] / n;
    }
    cur = project(cur, x, cfg.norm, cfg.epsilon);
  }
  return cur;
}

Tensor eot_gradient(const Tensor& x, const StochasticGradientFn& grad_fn,
                    int n_samples, Rng& rng) {
  if (n_samples < 1)
    throw std::invalid_argument("eot_gradient: n_samples must be >= 1");
  Tensor acc = zeros_like(x);
  for (int s = 0; s < n_samples; ++s) {
    Rng stream = rng.fork(s + 1);
    Tensor g = grad_fn(x, stream);
    if (!g.all_finite())
      throw std::runtime_error("eot_gradient: non-finite sample gradient");
    for (std::size_t i = 0; i < acc.data.size(); ++i)
      acc.data[i] += g.data[i] / n_samples;
  }
  return acc;
}

Tensor bpda_attack(const Tensor& x, int y, const PurifyFn& purifier,
                   const ClassifierModel& classifier, const AttackConfig& cfg) {
  cfg.validate();
  Rng eot_root(mix_seed(cfg.seed, 0xB2DAull));
  int iter = 0;
  GradientFn grad = [&](const Tensor& cur) {
    Rng it_rng = eot_root.fork(iter++);
    return eot_gradient(
        cur,
        [&](const Tensor& p, Rng& stream) {
          Tensor purified = purifier(p, stream.seed());
          return classifier.input_gradient(purified, y);
        },
        cfg.eot_samples, it_rng);
  };
  return pgd(x, grad, cfg);
}

Tensor adaptive_gradient_sample(const Tensor& x, int y,
                                const ClassifierModel& classifier,
                                const DenoiserModel& denoiser,
                                const NoiseSchedule& schedule,
                                const PurifyConfig& pcfg, std::uint64_t run_seed,
                                const AttentionMask* fixed_mask,
                                std::size_t* trace_count) {
  PurifyConfig run_cfg = pcfg;
  run_cfg.rng_seed = run_seed;
  PurifyTape tape;
  PurifiedResult pr =
      purify(x, classifier, denoiser, schedule, run_cfg, fixed_mask, &tape);
  if (trace_count) *trace_count = tape.denoiser_trace_count();
  Tensor g_img = classifier.input_gradient(pr.image, y);
  return tape.backward(g_img, denoiser, schedule);
}

Tensor adaptive_attack(const Tensor& x, int y, const ClassifierModel& classifier,
                       const DenoiserModel& denoiser, const NoiseSchedule& schedule,
                       const PurifyConfig& pcfg, const AttackConfig& cfg) {
  cfg.validate();
  if (pcfg.legacy_resample)
    throw std::invalid_argument(
        "adaptive_attack: requires single-step resampling");
  Rng eot_root(mix_seed(cfg.seed, 0xADA9ull));
  int iter = 0;
  GradientFn grad = [&](const Tensor& cur) {
    Rng it_rng = eot_root.fork(iter++);
    return eot_gradient(
        cur,
        [&](const Tensor& p, Rng& stream) {
          // mask recomputed per EOT sample, constant within the gradient
          return adaptive_gradient_sample(p, y, classifier, denoiser, schedule,
                                          pcfg, stream.seed());
        },
        cfg.eot_samples, it_rng);
  };
  return pgd(x, grad, cfg);
}

}  // namespace hetpure
