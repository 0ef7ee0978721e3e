#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hetpure/classifier.hpp"  // ConvLayer, DenseLayer
#include "hetpure/data.hpp"
#include "hetpure/rng.hpp"
#include "hetpure/schedule.hpp"
#include "hetpure/tensor.hpp"

namespace hetpure {

/// Per-run denoiser invocation counter. Kept outside the model so parallel
/// purification runs never share mutable state.
struct CallCounter {
  long calls = 0;
};

/// Saved intermediates of one predict_eps call, enough to back-propagate a
/// cotangent to the call's input. Empty for the analytic model (linear map).
struct DenoiserTrace {
  int t = 0;
  std::vector<Tensor> conv_in;
  std::vector<Tensor> preact;
};

struct DenoiserNetConfig {
  int channels = 1;
  int image_h = 16;
  int image_w = 16;
  int temb_dim = 32;
  // hourglass widths: enc1, enc2, bottleneck, dec1 (dec2 returns to channels)
  int w1 = 16, w2 = 32;

  void validate() const;
  std::string descriptor() const;
  static DenoiserNetConfig from_descriptor(const std::string& desc);
};

/// Epsilon predictor with two implementations.
///
/// analytic: exact Bayes posterior-mean epsilon for x0 ~ N(mu0, sigma0^2 I);
/// the closed form makes it the test oracle for every sampling kernel.
///
/// learned: 3-level conv encoder-decoder (leaky rectifier, slope 0.1) with an
/// additive sinusoidal timestep embedding projected to per-channel biases.
class DenoiserModel {
 public:
  enum class Kind { Analytic, Learned };

  DenoiserModel() = default;

  static DenoiserModel analytic(Tensor mu0, double sigma0);
  static DenoiserModel learned(DenoiserNetConfig cfg, std::uint64_t seed);

  Kind kind() const { return kind_; }
  const Tensor& mu0() const { return mu0_; }
  double sigma0() const { return sigma0_; }
  const DenoiserNetConfig& net_config() const { return net_cfg_; }

  Tensor predict_eps(const Tensor& x, int t, const NoiseSchedule& schedule,
                     CallCounter* counter = nullptr,
                     DenoiserTrace* trace = nullptr) const;

  /// Vector-Jacobian product of predict_eps with respect to its input.
  Tensor input_vjp(const DenoiserTrace& trace, const Tensor& grad_out,
                   const NoiseSchedule& schedule) const;

  struct Grads;
  /// Backward pass accumulating parameter gradients (learned only);
  /// returns grad wrt input.
  Tensor backward(const DenoiserTrace& trace, const Tensor& grad_out,
                  Grads* param_grads) const;

  struct Segment {
    std::string name;
    std::vector<double>* data;
  };
  std::vector<Segment> segments();
  std::string descriptor() const;

  // learned-net internals, exposed for gradient tests
  std::vector<ConvLayer>& conv_layers() { return convs_; }
  std::vector<DenseLayer>& temb_projections() { return temb_proj_; }

 private:
  Kind kind_ = Kind::Analytic;

  // analytic
  Tensor mu0_;
  double sigma0_ = 0.0;

  // learned
  DenoiserNetConfig net_cfg_;
  std::vector<ConvLayer> convs_;      // 5 convs
  std::vector<DenseLayer> temb_proj_; // biases for convs 0..2

  Tensor forward_net(const Tensor& x, int t, DenoiserTrace* trace) const;
};

struct DenoiserModel::Grads {
  std::vector<ConvLayer> convs;
  std::vector<DenseLayer> temb_proj;
  void init_like(const DenoiserModel& m);
};

std::vector<double> sinusoidal_embedding(int t, int dim);

/// One DDPM reverse step (fixed variance sigma_t = sqrt(beta_t)):
///   x_{t-1} = (x_t - beta_t/sqrt(1-abar_t) * eps_hat) / sqrt(alpha_t) + sigma_t z
/// The caller supplies z; Algorithm-style z=0 at t=1 is the caller's duty.
Tensor ddpm_step(const DenoiserModel& model, const Tensor& x_t, int t,
                 const NoiseSchedule& schedule, const Tensor& z,
                 CallCounter* counter = nullptr, DenoiserTrace* trace = nullptr);

/// Deterministic-by-default DDIM jump from from_t down to to_t with exactly
/// one denoiser call:
///   x_to = sqrt(abar_to) * (x - sqrt(1-abar_from) eps)/sqrt(abar_from)
///        + sqrt(1 - abar_to - sigma^2) * eps + sigma z
/// to_t may be 0 (abar_0 = 1). z may be null when sigma == 0.
Tensor ddim_jump(const DenoiserModel& model, const Tensor& x_at, int from_t,
                 int to_t, double sigma, const NoiseSchedule& schedule,
                 const Tensor* z = nullptr, CallCounter* counter = nullptr,
                 DenoiserTrace* trace = nullptr);

struct DenoiserTrainReport {
  double final_loss = 0.0;  // per-pixel mean squared error
};

/// Seeded SGD on the denoising score-matching objective
///   E_{x0, t~U[1,T], eps} | eps_hat(q_sample(x0,t,eps), t) - eps |^2.
DenoiserModel train_denoiser(const Dataset& dataset, const NoiseSchedule& schedule,
                             DenoiserNetConfig cfg, int epochs, double lr,
                             std::uint64_t seed,
                             DenoiserTrainReport* report = nullptr);

/// Empirical per-pixel DSM loss of a model at fixed t over n draws.
double dsm_loss(const DenoiserModel& model, const Dataset& dataset,
                const NoiseSchedule& schedule, int t, int n_draws,
                std::uint64_t seed);

}  // namespace hetpure
