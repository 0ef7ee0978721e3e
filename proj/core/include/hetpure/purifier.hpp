#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "hetpure/attention.hpp"
#include "hetpure/classifier.hpp"
#include "hetpure/denoiser.hpp"
#include "hetpure/rng.hpp"
#include "hetpure/schedule.hpp"
#include "hetpure/tensor.hpp"

namespace hetpure {

/// Named random sub-streams of one purification run. Every draw comes from a
/// fork of the run seed with one of these tags, so tests can replay any phase
/// independently (e.g. re-create the stage-2 chain bit for bit).
enum PurifyStream : std::uint64_t {
  kStreamMixEps = 1,     // shared epsilon of the two-intensity forward mix
  kStreamKnown = 2,      // fresh forward draws for the known region, stage 1
  kStreamUnknownZ = 3,   // ddpm noise for the predicted region, stage 1
  kStreamResample = 4,   // renoising draws of the resampling refinement
  kStreamStage2 = 5,     // ddpm noise of the standard stage-2 chain
  kStreamEnsemble = 64,  // base tag for ensemble member run seeds
};

struct PurifyConfig {
  double t_l_frac = 0.2;   // high-intensity timestep fraction
  double t_s_frac = 0.05;  // low-intensity timestep fraction
  double tau = 0.8;        // attention mask threshold
  int resample_u = 10;     // resampling depth U
  PoolMode pool_mode = PoolMode::SumP;
  int pool_p = 2;
  int ensemble = 1;  // S
  std::uint64_t rng_seed = 0;
  bool swap_mask_roles = false;   // literal Algorithm reading of the merge
  bool legacy_resample = false;   // multi-step baseline instead of one jump
  bool independent_eps = false;   // draw separate eps for the two intensities
  std::vector<int> mask_blocks;   // blocks feeding the mask union; empty = all

  void validate(const NoiseSchedule& schedule) const;
};

struct StageRecord {
  int t = 0;        // timestep consumed by the step
  char stage = 0;   // '1' or '2'
  Tensor state;     // x_{t-1} after the step (and refinement, stage 1)
};

struct PurifiedResult {
  Tensor image;
  AttentionMask mask;
  long denoiser_calls = 0;
  std::vector<StageRecord> stage_trace;
};

/// Record of one purification forward pass, sufficient to pull a cotangent at
/// the purified image back to the input (mask held constant). Only the
/// single-step resampling path is supported; this is what makes full-gradient
/// adaptive attacks affordable.
struct PurifyTape {
  struct Stage1Op {
    int t = 0;
    DenoiserTrace ddpm;              // unknown-branch denoiser call
    bool refined = false;
    double renoise_scale = 1.0;      // prod of sqrt(alpha) over the U lifts
    int ddim_from = 0, ddim_to = 0;
    DenoiserTrace ddim;
  };
  struct Stage2Op {
    int t = 0;
    DenoiserTrace trace;
  };
  int t_l = 0, t_s = 0;
  bool swap_mask_roles = false;
  bool independent_eps = false;
  AttentionMask mask;
  std::vector<Stage1Op> stage1;
  std::vector<Stage2Op> stage2;

  std::size_t denoiser_trace_count() const { return 2 * stage1.size() + stage2.size(); }

  /// Gradient of (loss at purified image) wrt the purifier input.
  Tensor backward(const Tensor& grad_image, const DenoiserModel& model,
                  const NoiseSchedule& schedule) const;
};

/// Heterogeneous forward mix: q_sample at t_l inside the mask, at t_s
/// outside, sharing one epsilon draw (the paper's single-epsilon convention).
Tensor hetero_forward(const Tensor& x_adv, const AttentionMask& mask, int t_l,
                      int t_s, const NoiseSchedule& schedule, const Tensor& eps);

/// Independent-draw variant: eps_l noises the masked region, eps_s the rest.
Tensor hetero_forward(const Tensor& x_adv, const AttentionMask& mask, int t_l,
                      int t_s, const NoiseSchedule& schedule, const Tensor& eps_l,
                      const Tensor& eps_s);

/// One stage-1 step with explicit noises: the known region is a fresh forward
/// draw of x_adv at t-1, the unknown region is a ddpm step, merged by the
/// mask. Default orientation predicts *inside* the mask (where t_l-level
/// noise lives); swap_mask_roles flips it.
Tensor stage1_step(const Tensor& x_t, int t, const Tensor& x_adv,
                   const AttentionMask& mask, const DenoiserModel& model,
                   const NoiseSchedule& schedule, const Tensor& eps_known,
                   const Tensor& z, bool swap_mask_roles = false,
                   CallCounter* counter = nullptr, DenoiserTrace* trace = nullptr);

/// rng-driven convenience matching the algorithm's draw rules (zero noise at
/// t == 1).
Tensor stage1_step(const Tensor& x_t, int t, const Tensor& x_adv,
                   const AttentionMask& mask, const DenoiserModel& model,
                   const NoiseSchedule& schedule, Rng& rng,
                   bool swap_mask_roles = false, CallCounter* counter = nullptr);

/// Single-step resampling refinement: renoise x_{t-1} up U single forward
/// steps, then one deterministic DDIM jump back to t-1 (exactly one denoiser
/// call). U = 0 is the identity and performs no call.
Tensor resample_refine(const Tensor& x_prev, int t, int U,
                       const DenoiserModel& model, const NoiseSchedule& schedule,
                       Rng& rng, CallCounter* counter = nullptr,
                       PurifyTape::Stage1Op* tape_op = nullptr);

/// Plain DDPM reverse chain from t_start down to 1 (z = 0 at t = 1).
Tensor reverse_chain(Tensor x, int t_start, const DenoiserModel& model,
                     const NoiseSchedule& schedule, Rng& rng,
                     CallCounter* counter = nullptr,
                     std::vector<StageRecord>* trace = nullptr);

/// Full heterogeneous purification of Algorithmic form:
/// mask -> two-intensity forward -> stage-1 inpainting loop with resampling
/// -> stage-2 standard chain. Deterministic given cfg.rng_seed.
/// A precomputed mask (attacks hold it constant) bypasses mask construction.
PurifiedResult purify(const Tensor& x, const ClassifierModel& classifier,
                      const DenoiserModel& denoiser, const NoiseSchedule& schedule,
                      const PurifyConfig& cfg,
                      const AttentionMask* precomputed_mask = nullptr,
                      PurifyTape* tape = nullptr, bool keep_stage_trace = false);

/// Homogeneous (single-intensity) purification baseline: forward draw at
/// t_star then the plain reverse chain. Uses the kStreamMixEps / kStreamStage2
/// forks of seed.
struct HomogeneousResult {
  Tensor image;
  long denoiser_calls = 0;
};
HomogeneousResult purify_homogeneous(const Tensor& x, const DenoiserModel& denoiser,
                                     const NoiseSchedule& schedule, double t_star_frac,
                                     std::uint64_t seed);

/// Closed-form denoiser-call count for one run.
long expected_denoiser_calls(int t_l, int t_s, int U, bool legacy);

/// Algorithmic ensemble: S purification runs with independent streams,
/// averaged class probabilities, argmax.
Prediction ensemble_classify(const Tensor& x, const ClassifierModel& classifier,
                             const DenoiserModel& denoiser,
                             const NoiseSchedule& schedule, const PurifyConfig& cfg,
                             long* total_denoiser_calls = nullptr);

}  // namespace hetpure
