#pragma once

#include <vector>

#include "quest/tensor.hpp"

namespace quest {

// Linear beta schedule with derived alpha_bar products. Steps are 1-based;
// alpha_bar_at(0) == 1 by convention (the fully denoised endpoint).
struct NoiseSchedule {
  int T = 0;
  std::vector<float> betas;       // [T]
  std::vector<float> alphas;      // [T]
  std::vector<float> alpha_bars;  // [T], index t-1

  float alpha_bar_at(int t) const;
};

NoiseSchedule make_schedule(int T, float beta_start, float beta_end);

// Forward corruption x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Tensor corrupt(const Tensor& x0, const Tensor& eps, int t, const NoiseSchedule& schedule);

// Deterministic (eta = 0) denoising step t -> t_prev:
//   x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)
//   x_prev = sqrt(abar_prev) x0_hat + sqrt(1 - abar_prev) eps_hat
Tensor ddim_step(const Tensor& x_t, const Tensor& eps_hat, int t, int t_prev,
                 const NoiseSchedule& schedule);

// Uniform sub-schedule of num_steps visited steps, descending from T.
std::vector<int> uniform_substeps(int T, int num_steps);

}  // namespace quest
