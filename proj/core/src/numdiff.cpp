#include "quest/numdiff.hpp"

#include <cmath>

#include "quest/common.hpp"

namespace quest {

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  require(h > 0.0, strformat("finite_difference_grad: step must be positive, got %g", h));
  Tensor g(x.shape);
  Tensor probe = x;
  for (size_t i = 0; i < x.data.size(); ++i) {
    const float orig = probe.data[i];
    probe.data[i] = static_cast<float>(orig + h);
    const double fp = f(probe);
    probe.data[i] = static_cast<float>(orig - h);
    const double fm = f(probe);
    probe.data[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      fail_contract(strformat("finite_difference_grad: non-finite evaluation at coordinate %zu", i));
    g.data[i] = static_cast<float>((fp - fm) / (2.0 * h));
  }
  return g;
}

double max_relative_error(const Tensor& analytic, const Tensor& oracle, double floor) {
  require(analytic.same_shape(oracle), strformat("max_relative_error: shape mismatch %s vs %s",
                                                 analytic.shape_str().c_str(), oracle.shape_str().c_str()));
  double worst = 0.0;
  for (size_t i = 0; i < analytic.data.size(); ++i) {
    const double a = analytic.data[i];
    const double o = oracle.data[i];
    const double denom = std::max({std::fabs(a), std::fabs(o), floor});
    worst = std::max(worst, std::fabs(a - o) / denom);
  }
  return worst;
}

}  // namespace quest
