#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

namespace quest {

// Dense row-major n-dimensional array of 32-bit reals. The one value type the
// engine, the model and the quantizers all speak.
class Tensor {
 public:
  std::vector<int> shape;
  std::vector<float> data;
  std::optional<std::vector<float>> grad;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape_);
  Tensor(std::vector<int> shape_, std::vector<float> data_);

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, float value);
  static Tensor scalar(float value);
  static Tensor from(std::initializer_list<float> values);

  int64_t numel() const;
  int dim() const { return static_cast<int>(shape.size()); }
  int size(int d) const;
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  std::string shape_str() const;

  float& at(int64_t i) { return data[static_cast<size_t>(i)]; }
  float at(int64_t i) const { return data[static_cast<size_t>(i)]; }
  float item() const;

  bool all_finite() const;

  // Elementwise helpers used by optimizers and reports; not tape ops.
  float min_value() const;
  float max_value() const;
  double sum64() const;
  double mean64() const;
  double std64() const;
};

std::string shape_to_string(const std::vector<int>& shape);
int64_t shape_numel(const std::vector<int>& shape);

// Mean squared error computed eagerly in double precision; reporting helper,
// independent of the tape op of the same name.
double mse_value(const Tensor& a, const Tensor& b);

}  // namespace quest
