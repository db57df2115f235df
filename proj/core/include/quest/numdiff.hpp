#pragma once

#include <functional>

#include "quest/tensor.hpp"

namespace quest {

// Independent gradient oracle: central differences (f(x+h e_i) - f(x-h e_i)) / 2h.
// The evaluation callback returns the loss in double; accumulation is 64-bit.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

// Max relative error between an analytic gradient and the oracle, with
// denominators floored to keep near-zero entries meaningful.
double max_relative_error(const Tensor& analytic, const Tensor& oracle, double floor = 1e-4);

}  // namespace quest
