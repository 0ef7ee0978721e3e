#pragma once

#include <vector>

#include "hetpure/tensor.hpp"

namespace hetpure {

/// Discrete diffusion schedule. Timesteps are 1-based: t in [1,T]; t=0 means
/// the clean image and is never an array index. alpha_bar(0) == 1 by
/// convention so forward draws at t-1 are defined at the boundary.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;             // betas[t-1] = beta_t
  std::vector<double> alphas;            // 1 - beta_t
  std::vector<double> alpha_bars;        // prod_{s<=t} alpha_s
  std::vector<double> posterior_sigmas;  // sqrt(beta_t), fixed-variance DDPM

  double beta(int t) const { return betas[check(t) - 1]; }
  double alpha(int t) const { return alphas[check(t) - 1]; }
  double sigma(int t) const { return posterior_sigmas[check(t) - 1]; }
  double alpha_bar(int t) const {
    if (t == 0) return 1.0;
    return alpha_bars[check(t) - 1];
  }

 private:
  int check(int t) const {
    if (t < 1 || t > T)
      throw std::out_of_range("NoiseSchedule: timestep " + std::to_string(t) +
                              " outside [1," + std::to_string(T) + "]");
    return t;
  }
};

/// Linear beta ramp from beta_start to beta_end inclusive.
NoiseSchedule build_linear_schedule(int T, double beta_start, double beta_end);

/// Forward marginal sample: sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps.
/// The caller supplies eps so correlated draws across timesteps are possible.
Tensor q_sample(const NoiseSchedule& schedule, const Tensor& x0, int t,
                const Tensor& eps);

/// Maps a continuous fraction t* in [0,1] to round(t*.T) clamped to [1,T].
int step_of_fraction(const NoiseSchedule& schedule, double t_star);

}  // namespace hetpure
