#include "hetpure/schedule.hpp"

#include <cmath>

namespace hetpure {

NoiseSchedule build_linear_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("build_linear_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end))
    throw std::invalid_argument(
        "build_linear_schedule: need 0 < beta_start <= beta_end < 1");

  NoiseSchedule s;
  s.T = T;
  s.betas.resize(T);
  s.alphas.resize(T);
  s.alpha_bars.resize(T);
  s.posterior_sigmas.resize(T);

  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    double frac = (T == 1) ? 0.0 : static_cast<double>(i) / (T - 1);
    double b = beta_start + (beta_end - beta_start) * frac;
    s.betas[i] = b;
    s.alphas[i] = 1.0 - b;
    prod *= s.alphas[i];
    s.alpha_bars[i] = prod;
    s.posterior_sigmas[i] = std::sqrt(b);
  }
  return s;
}

Tensor q_sample(const NoiseSchedule& schedule, const Tensor& x0, int t,
                const Tensor& eps) {
  require_same_shape(x0, eps, "q_sample");
  if (t < 1) throw std::out_of_range("q_sample: timestep must be >= 1");
  double ab = schedule.alpha_bar(t);  // range-checks t <= T
  double c0 = std::sqrt(ab);
  double ce = std::sqrt(1.0 - ab);
  Tensor out = zeros_like(x0);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = c0 * x0.data[i] + ce * eps.data[i];
  return out;
}

int step_of_fraction(const NoiseSchedule& schedule, double t_star) {
  if (!(t_star >= 0.0 && t_star <= 1.0))
    throw std::invalid_argument("step_of_fraction: t_star outside [0,1]");
  int t = static_cast<int>(std::lround(t_star * schedule.T));
  if (t < 1) t = 1;
  if (t > schedule.T) t = schedule.T;
  return t;
}

}  // namespace hetpure
