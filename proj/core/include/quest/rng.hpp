#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "quest/tensor.hpp"

namespace quest {

// Deterministic random source. All randomness in a run flows from one root
// seed through named substreams so each stage is independently reproducible.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  static uint64_t substream_seed(uint64_t root_seed, const std::string& name);
  static Rng substream(uint64_t root_seed, const std::string& name) {
    return Rng(substream_seed(root_seed, name));
  }

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1). 53-bit mantissa draw.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Modulo construction; bias is negligible for the
  // small ranges used here and the result is fully deterministic.
  int64_t uniform_int(int64_t n);

  // Standard normal via Box-Muller. Stateless across calls (pairs are drawn
  // fresh each call and the second value discarded).
  double normal();

  void fill_normal(Tensor& t, double mean = 0.0, double stddev = 1.0);
  Tensor normal_tensor(std::vector<int> shape, double mean = 0.0, double stddev = 1.0);

  void shuffle(std::vector<int>& v);

 private:
  std::mt19937_64 engine_;
};

}  // namespace quest
