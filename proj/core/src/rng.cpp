#include "quest/rng.hpp"

#include <cmath>

namespace quest {

namespace {
constexpr uint64_t kFnvOffset = 1469598103934665603ull;
constexpr uint64_t kFnvPrime = 1099511628211ull;

uint64_t fnv1a(uint64_t h, const void* bytes, size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}
}  // namespace

uint64_t Rng::substream_seed(uint64_t root_seed, const std::string& name) {
  uint64_t h = fnv1a(kFnvOffset, &root_seed, sizeof(root_seed));
  h = fnv1a(h, name.data(), name.size());
  return splitmix64(h);
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0);
}

int64_t Rng::uniform_int(int64_t n) {
  return n <= 0 ? 0 : static_cast<int64_t>(engine_() % static_cast<uint64_t>(n));
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

void Rng::fill_normal(Tensor& t, double mean, double stddev) {
  for (auto& v : t.data) v = static_cast<float>(mean + stddev * normal());
}

Tensor Rng::normal_tensor(std::vector<int> shape, double mean, double stddev) {
  Tensor t(std::move(shape));
  fill_normal(t, mean, stddev);
  return t;
}

void Rng::shuffle(std::vector<int>& v) {
  for (size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<size_t>(uniform_int(static_cast<int64_t>(i)));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace quest
