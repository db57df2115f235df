#include "quest/schedule.hpp"

#include <cmath>

#include "quest/common.hpp"

namespace quest {

float NoiseSchedule::alpha_bar_at(int t) const {
  require(t >= 0 && t <= T, strformat("alpha_bar_at: step %d outside [0, %d]", t, T));
  return t == 0 ? 1.0f : alpha_bars[static_cast<size_t>(t - 1)];
}

NoiseSchedule make_schedule(int T, float beta_start, float beta_end) {
  require(T >= 2, strformat("make_schedule: T must be >= 2, got %d", T));
  require(beta_start > 0.0f && beta_start <= beta_end && beta_end < 1.0f,
          strformat("make_schedule: need 0 < beta_start <= beta_end < 1, got (%g, %g)", beta_start,
                    beta_end));
  NoiseSchedule s;
  s.T = T;
  s.betas.resize(static_cast<size_t>(T));
  s.alphas.resize(static_cast<size_t>(T));
  s.alpha_bars.resize(static_cast<size_t>(T));
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    const float b = beta_start + (beta_end - beta_start) * static_cast<float>(i) / static_cast<float>(T - 1);
    s.betas[static_cast<size_t>(i)] = b;
    s.alphas[static_cast<size_t>(i)] = 1.0f - b;
    prod *= static_cast<double>(1.0f - b);
    s.alpha_bars[static_cast<size_t>(i)] = static_cast<float>(prod);
  }
  return s;
}

Tensor corrupt(const Tensor& x0, const Tensor& eps, int t, const NoiseSchedule& schedule) {
  require(x0.same_shape(eps), strformat("corrupt: shape mismatch %s vs %s", x0.shape_str().c_str(),
                                        eps.shape_str().c_str()));
  require(t >= 1 && t <= schedule.T, strformat("corrupt: step %d outside [1, %d]", t, schedule.T));
  const float ab = schedule.alpha_bar_at(t);
  const float c0 = std::sqrt(ab);
  const float c1 = std::sqrt(1.0f - ab);
  Tensor xt(x0.shape);
  for (size_t i = 0; i < x0.data.size(); ++i) xt.data[i] = c0 * x0.data[i] + c1 * eps.data[i];
  return xt;
}

Tensor ddim_step(const Tensor& x_t, const Tensor& eps_hat, int t, int t_prev,
                 const NoiseSchedule& schedule) {
  require(x_t.same_shape(eps_hat), strformat("ddim_step: shape mismatch %s vs %s",
                                             x_t.shape_str().c_str(), eps_hat.shape_str().c_str()));
  require(t_prev >= 0 && t > t_prev && t <= schedule.T,
          strformat("ddim_step: need T >= t > t_prev >= 0, got t=%d t_prev=%d", t, t_prev));
  const float ab_t = schedule.alpha_bar_at(t);
  const float ab_p = schedule.alpha_bar_at(t_prev);
  const float inv_sq = 1.0f / std::sqrt(ab_t);
  const float sig_t = std::sqrt(1.0f - ab_t);
  const float c0 = std::sqrt(ab_p);
  const float c1 = std::sqrt(1.0f - ab_p);
  Tensor x_prev(x_t.shape);
  for (size_t i = 0; i < x_t.data.size(); ++i) {
    const float x0_hat = (x_t.data[i] - sig_t * eps_hat.data[i]) * inv_sq;
    x_prev.data[i] = c0 * x0_hat + c1 * eps_hat.data[i];
  }
  return x_prev;
}

std::vector<int> uniform_substeps(int T, int num_steps) {
  require(num_steps >= 1 && num_steps <= T,
          strformat("uniform_substeps: num_steps %d outside [1, %d]", num_steps, T));
  const int stride = T / num_steps;
  std::vector<int> steps;
  steps.reserve(static_cast<size_t>(num_steps));
  for (int i = 0; i < num_steps; ++i) steps.push_back(T - i * stride);
  return steps;
}

}  // namespace quest
