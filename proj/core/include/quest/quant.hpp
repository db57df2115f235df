#pragma once

#include <vector>

#include "quest/tensor.hpp"

namespace quest {

// Uniform affine quantizer parameters: x -> clamp(round(x/s) + Z, q_min, q_max),
// back via (q - Z) * s. bits == 32 is the pass-through sentinel (no quantization).
struct QuantParams {
  float scale = 1.0f;
  int zero_point = 0;
  int q_min = 0;
  int q_max = 0;
  int bits = 8;
  bool is_signed = true;

  static QuantParams make(float scale, int zero_point, int bits, bool is_signed);
  static QuantParams passthrough();
  bool is_passthrough() const { return bits == 32; }
  void validate() const;
};

// Range for a bit-width: signed [-2^(b-1), 2^(b-1)-1], unsigned [0, 2^b - 1].
void quant_range(int bits, bool is_signed, int& q_min, int& q_max);

// Eq.-style elementwise quantize (integral values stored in a Tensor) and its inverse.
Tensor quantize(const Tensor& x, const QuantParams& p);
Tensor dequantize(const Tensor& q, const QuantParams& p);

// Quantize-then-dequantize in real arithmetic (eager form; the tape op lives on Graph).
Tensor fake_quant(const Tensor& x, const QuantParams& p);
float fake_quant_value(float x, const QuantParams& p);

// A quantizer attached to one tensor site. Weight quantizers are frozen after
// initialization; activation quantizers may expose a learnable scale.
struct FakeQuantizer {
  QuantParams params;
  std::vector<QuantParams> per_channel;  // non-empty -> per-output-channel (dim 0)
  bool scale_learnable = false;
  bool frozen = false;

  bool is_per_channel() const { return !per_channel.empty(); }
  Tensor apply(const Tensor& x) const;
};

// Min-max initialization: s = (max-min)/(q_max-q_min), Z = round(q_min - min/s)
// clamped into range. Constant input degenerates to the 1e-8 scale floor.
QuantParams init_minmax(const Tensor& samples, int bits, bool is_signed);

// Clip-ratio refinement: tries r in {1, 1-1/grid, ..., 1/grid} applied to the
// min-max range and keeps the candidate with least squared round-trip error.
// Ties break toward larger r.
QuantParams init_mse_search(const Tensor& samples, int bits, bool is_signed, int grid);

// Per-output-channel variants over dim 0 of a weight tensor.
std::vector<QuantParams> init_mse_search_per_channel(const Tensor& weight, int bits, bool is_signed,
                                                     int grid);

double round_trip_mse(const Tensor& samples, const QuantParams& p);

}  // namespace quest
