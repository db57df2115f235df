#include "quest/tensor.hpp"

#include <cmath>
#include <limits>

#include "quest/common.hpp"

namespace quest {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  s += "]";
  return s;
}

Tensor::Tensor(std::vector<int> shape_) : shape(std::move(shape_)) {
  for (int d : shape) require(d > 0, "Tensor: shape entries must be positive, got " + shape_to_string(shape));
  data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
}

Tensor::Tensor(std::vector<int> shape_, std::vector<float> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  for (int d : shape) require(d > 0, "Tensor: shape entries must be positive, got " + shape_to_string(shape));
  require(shape_numel(shape) == static_cast<int64_t>(data.size()),
          strformat("Tensor: shape %s does not match data length %zu", shape_to_string(shape).c_str(),
                    data.size()));
}

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, float value) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = value;
  return t;
}

Tensor Tensor::scalar(float value) { return Tensor({1}, {value}); }

Tensor Tensor::from(std::initializer_list<float> values) {
  return Tensor({static_cast<int>(values.size())}, std::vector<float>(values));
}

int64_t Tensor::numel() const { return static_cast<int64_t>(data.size()); }

int Tensor::size(int d) const {
  require(d >= 0 && d < dim(), strformat("Tensor: dim %d out of range for shape %s", d, shape_str().c_str()));
  return shape[static_cast<size_t>(d)];
}

std::string Tensor::shape_str() const { return shape_to_string(shape); }

float Tensor::item() const {
  require(numel() == 1, "Tensor::item requires a single-element tensor, got shape " + shape_str());
  return data[0];
}

bool Tensor::all_finite() const {
  for (float v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

float Tensor::min_value() const {
  require(!data.empty(), "Tensor::min_value on empty tensor");
  float m = data[0];
  for (float v : data) m = std::min(m, v);
  return m;
}

float Tensor::max_value() const {
  require(!data.empty(), "Tensor::max_value on empty tensor");
  float m = data[0];
  for (float v : data) m = std::max(m, v);
  return m;
}

double Tensor::sum64() const {
  double s = 0.0;
  for (float v : data) s += v;
  return s;
}

double Tensor::mean64() const {
  require(!data.empty(), "Tensor::mean64 on empty tensor");
  return sum64() / static_cast<double>(data.size());
}

double Tensor::std64() const {
  require(!data.empty(), "Tensor::std64 on empty tensor");
  const double m = mean64();
  double acc = 0.0;
  for (float v : data) {
    const double d = v - m;
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(data.size()));
}

double mse_value(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), strformat("mse_value: shape mismatch %s vs %s", a.shape_str().c_str(),
                                     b.shape_str().c_str()));
  double acc = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.data.size());
}

}  // namespace quest
