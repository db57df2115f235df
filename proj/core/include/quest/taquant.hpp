#pragma once

#include <map>
#include <string>
#include <vector>

#include "quest/quant.hpp"

namespace quest {

// Per-layer, per-time-cluster activation quantizer parameters. Denoising steps
// t in [1, T] are partitioned into contiguous clusters; all steps of a cluster
// share one set of params, calibrated from the cluster's representative step.
class TimeAwareQuantizerSet {
 public:
  TimeAwareQuantizerSet() = default;

  int T() const { return T_; }
  int num_clusters() const { return num_clusters_; }

  int cluster_of(int t) const;
  // First step of each cluster; these are the uniformly sampled calibration steps.
  const std::vector<int>& representative_steps() const { return reps_; }

  void set_params(const std::string& layer, int cluster, const QuantParams& p);
  bool has_params(const std::string& layer, int cluster) const;
  const QuantParams& params(const std::string& layer, int cluster) const;
  QuantParams& params_ref(const std::string& layer, int cluster);

  // Layer ids in insertion-independent (sorted) order.
  std::vector<std::string> layers() const;

  friend TimeAwareQuantizerSet build_cluster_map(int T, int num_clusters);

 private:
  int T_ = 0;
  int num_clusters_ = 0;
  std::vector<int> cluster_index_;  // [T], cluster of step t at index t-1
  std::vector<int> reps_;
  std::map<std::string, std::vector<QuantParams>> per_layer_;
  static constexpr int kUnsetBits = 0;
};

// Contiguous partition of [1, T] into num_clusters runs of length
// floor(T / num_clusters); the final run absorbs any remainder.
TimeAwareQuantizerSet build_cluster_map(int T, int num_clusters);

// Params of the cluster containing t. Pure lookup; throws naming the layer and
// cluster when the entry is missing.
const QuantParams& select_params(const TimeAwareQuantizerSet& set, const std::string& layer, int t);

}  // namespace quest
