#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "hetpure/classifier.hpp"
#include "hetpure/purifier.hpp"
#include "hetpure/rng.hpp"
#include "hetpure/tensor.hpp"

namespace hetpure {

enum class AttackNorm { Linf, L2 };
enum class AttackMode { Fgsm, Pgd, BpdaEot, PgdEotAdaptive };

AttackNorm attack_norm_from_string(const std::string& s);
AttackMode attack_mode_from_string(const std::string& s);
std::string to_string(AttackNorm n);
std::string to_string(AttackMode m);

struct AttackConfig {
  AttackNorm norm = AttackNorm::Linf;
  double epsilon = 8.0 / 255.0;  // pixel-unit budget
  double step_size = 0.007;
  int iterations = 40;
  int eot_samples = 1;
  AttackMode mode = AttackMode::Pgd;
  std::uint64_t seed = 0;
  bool random_start = true;

  void validate() const;
};

/// Gradient of the maximised objective at a point (deterministic).
using GradientFn = std::function<Tensor(const Tensor&)>;
/// Same through a stochastic pipeline; rng carries the defence randomness.
using StochasticGradientFn = std::function<Tensor(const Tensor&, Rng&)>;
/// A purification routine keyed by a run seed.
using PurifyFn = std::function<Tensor(const Tensor&, std::uint64_t run_seed)>;

/// Projects candidate onto the epsilon-ball around origin (chosen norm),
/// then onto the [0,1] box.
Tensor project(const Tensor& candidate, const Tensor& origin, AttackNorm norm,
               double epsilon);

/// Single-step sign attack: x + eps * sign(grad CE), clipped to [0,1].
Tensor fgsm(const Tensor& x, int y, const ClassifierModel& classifier,
            double epsilon);

/// Iterative projected ascent. grad_fn returns the gradient of the objective
/// being maximised at the current iterate.
Tensor pgd(const Tensor& x, const GradientFn& grad_fn, const AttackConfig& cfg);

/// Mean of n_samples gradient evaluations, each with a fresh forked stream.
Tensor eot_gradient(const Tensor& x, const StochasticGradientFn& grad_fn,
                    int n_samples, Rng& rng);

/// BPDA+EOT: forward through the true purifier, backward through identity,
/// so each sample's gradient is the classifier gradient at the purified image.
Tensor bpda_attack(const Tensor& x, int y, const PurifyFn& purifier,
                   const ClassifierModel& classifier, const AttackConfig& cfg);

/// Full white-box attack: exact reverse-mode differentiation of the
/// purify -> classify composition (per-sample mask held constant), EOT over
/// the purifier randomness, PGD projection loop.
Tensor adaptive_attack(const Tensor& x, int y, const ClassifierModel& classifier,
                       const DenoiserModel& denoiser, const NoiseSchedule& schedule,
                       const PurifyConfig& pcfg, const AttackConfig& cfg);

/// One adaptive gradient sample (exposed for finite-difference checks).
/// trace_count, when given, receives the number of stored denoiser traces.
Tensor adaptive_gradient_sample(const Tensor& x, int y,
                                const ClassifierModel& classifier,
                                const DenoiserModel& denoiser,
                                const NoiseSchedule& schedule,
                                const PurifyConfig& pcfg, std::uint64_t run_seed,
                                const AttentionMask* fixed_mask = nullptr,
                                std::size_t* trace_count = nullptr);

}  // namespace hetpure
