#include "quest/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "quest/common.hpp"
#include "quest/graph.hpp"

namespace quest {

namespace {
constexpr float kScaleFloor = 1e-8f;
}

void quant_range(int bits, bool is_signed, int& q_min, int& q_max) {
  require(bits >= 2 && bits <= 8, strformat("quant_range: bits must be in [2, 8], got %d", bits));
  if (is_signed) {
    q_min = -(1 << (bits - 1));
    q_max = (1 << (bits - 1)) - 1;
  } else {
    q_min = 0;
    q_max = (1 << bits) - 1;
  }
}

QuantParams QuantParams::make(float scale, int zero_point, int bits, bool is_signed) {
  QuantParams p;
  p.bits = bits;
  p.is_signed = is_signed;
  quant_range(bits, is_signed, p.q_min, p.q_max);
  p.scale = scale;
  p.zero_point = std::clamp(zero_point, p.q_min, p.q_max);
  p.validate();
  return p;
}

QuantParams QuantParams::passthrough() {
  QuantParams p;
  p.bits = 32;
  p.scale = 1.0f;
  p.zero_point = 0;
  p.q_min = std::numeric_limits<int>::min();
  p.q_max = std::numeric_limits<int>::max();
  return p;
}

void QuantParams::validate() const {
  if (is_passthrough()) return;
  require(scale > 0.0f, strformat("QuantParams: scale must be positive, got %g", scale));
  require(bits >= 2 && bits <= 8, strformat("QuantParams: bits must be in [2, 8], got %d", bits));
  int lo, hi;
  quant_range(bits, is_signed, lo, hi);
  require(q_min == lo && q_max == hi,
          strformat("QuantParams: range [%d, %d] inconsistent with %d-bit %s", q_min, q_max, bits,
                    is_signed ? "signed" : "unsigned"));
  require(zero_point >= q_min && zero_point <= q_max,
          strformat("QuantParams: zero point %d outside [%d, %d]", zero_point, q_min, q_max));
}

Tensor quantize(const Tensor& x, const QuantParams& p) {
  p.validate();
  require(!p.is_passthrough(), "quantize: pass-through params have no integer grid");
  Tensor q(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) {
    const float r = Graph::round_half_away(x.data[i] / p.scale) + static_cast<float>(p.zero_point);
    q.data[i] = std::clamp(r, static_cast<float>(p.q_min), static_cast<float>(p.q_max));
  }
  return q;
}

Tensor dequantize(const Tensor& q, const QuantParams& p) {
  p.validate();
  require(!p.is_passthrough(), "dequantize: pass-through params have no integer grid");
  Tensor x(q.shape);
  for (size_t i = 0; i < q.data.size(); ++i) {
    const float v = q.data[i];
    require(v >= static_cast<float>(p.q_min) && v <= static_cast<float>(p.q_max),
            strformat("dequantize: value %g outside [%d, %d]", v, p.q_min, p.q_max));
    x.data[i] = (v - static_cast<float>(p.zero_point)) * p.scale;
  }
  return x;
}

float fake_quant_value(float x, const QuantParams& p) {
  if (p.is_passthrough()) return x;
  const float r = Graph::round_half_away(x / p.scale) + static_cast<float>(p.zero_point);
  const float q = std::clamp(r, static_cast<float>(p.q_min), static_cast<float>(p.q_max));
  return (q - static_cast<float>(p.zero_point)) * p.scale;
}

Tensor fake_quant(const Tensor& x, const QuantParams& p) {
  if (!p.is_passthrough()) p.validate();
  Tensor y(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = fake_quant_value(x.data[i], p);
  return y;
}

Tensor FakeQuantizer::apply(const Tensor& x) const {
  if (!is_per_channel()) return fake_quant(x, params);
  require(x.dim() >= 1 && static_cast<size_t>(x.shape[0]) == per_channel.size(),
          strformat("FakeQuantizer: %zu channel params for tensor %s", per_channel.size(),
                    x.shape_str().c_str()));
  Tensor y(x.shape);
  const size_t stride = x.data.size() / per_channel.size();
  for (size_t c = 0; c < per_channel.size(); ++c)
    for (size_t i = 0; i < stride; ++i)
      y.data[c * stride + i] = fake_quant_value(x.data[c * stride + i], per_channel[c]);
  return y;
}

namespace {

QuantParams params_from_range(float lo, float hi, int bits, bool is_signed) {
  int q_min, q_max;
  quant_range(bits, is_signed, q_min, q_max);
  float scale = (hi - lo) / static_cast<float>(q_max - q_min);
  if (!(scale > kScaleFloor)) scale = kScaleFloor;
  const float z = Graph::round_half_away(static_cast<float>(q_min) - lo / scale);
  const int zero_point =
      static_cast<int>(std::clamp(z, static_cast<float>(q_min), static_cast<float>(q_max)));
  return QuantParams::make(scale, zero_point, bits, is_signed);
}

}  // namespace

QuantParams init_minmax(const Tensor& samples, int bits, bool is_signed) {
  require(samples.numel() > 0, "init_minmax: samples must be non-empty");
  require(samples.all_finite(), "init_minmax: samples must be finite");
  return params_from_range(samples.min_value(), samples.max_value(), bits, is_signed);
}

double round_trip_mse(const Tensor& samples, const QuantParams& p) {
  double acc = 0.0;
  for (float v : samples.data) {
    const double d = static_cast<double>(fake_quant_value(v, p)) - static_cast<double>(v);
    acc += d * d;
  }
  return acc / static_cast<double>(samples.numel());
}

QuantParams init_mse_search(const Tensor& samples, int bits, bool is_signed, int grid) {
  require(grid >= 2, strformat("init_mse_search: grid must be >= 2, got %d", grid));
  require(samples.numel() > 0, "init_mse_search: samples must be non-empty");
  require(samples.all_finite(), "init_mse_search: samples must be finite");
  const float lo = samples.min_value();
  const float hi = samples.max_value();
  QuantParams best;
  double best_mse = std::numeric_limits<double>::infinity();
  for (int k = grid; k >= 1; --k) {
    const float r = static_cast<float>(k) / static_cast<float>(grid);
    const QuantParams cand = params_from_range(r * lo, r * hi, bits, is_signed);
    const double m = round_trip_mse(samples, cand);
    if (m < best_mse) {
      best_mse = m;
      best = cand;
    }
  }
  return best;
}

std::vector<QuantParams> init_mse_search_per_channel(const Tensor& weight, int bits, bool is_signed,
                                                     int grid) {
  require(weight.dim() >= 1, "init_mse_search_per_channel: weight must have at least one dimension");
  const int channels = weight.shape[0];
  const size_t stride = weight.data.size() / static_cast<size_t>(channels);
  std::vector<QuantParams> out;
  out.reserve(static_cast<size_t>(channels));
  for (int c = 0; c < channels; ++c) {
    Tensor slice({static_cast<int>(stride)});
    std::copy_n(weight.data.begin() + static_cast<size_t>(c) * stride, stride, slice.data.begin());
    out.push_back(init_mse_search(slice, bits, is_signed, grid));
  }
  return out;
}

}  // namespace quest
