#include "quest/taquant.hpp"

#include "quest/common.hpp"

namespace quest {

int TimeAwareQuantizerSet::cluster_of(int t) const {
  require(t >= 1 && t <= T_, strformat("cluster_of: step %d outside [1, %d]", t, T_));
  return cluster_index_[static_cast<size_t>(t - 1)];
}

void TimeAwareQuantizerSet::set_params(const std::string& layer, int cluster, const QuantParams& p) {
  require(cluster >= 0 && cluster < num_clusters_,
          strformat("set_params: cluster %d outside [0, %d)", cluster, num_clusters_));
  auto& v = per_layer_[layer];
  if (v.empty()) {
    QuantParams unset;
    unset.bits = kUnsetBits;
    v.assign(static_cast<size_t>(num_clusters_), unset);
  }
  v[static_cast<size_t>(cluster)] = p;
}

bool TimeAwareQuantizerSet::has_params(const std::string& layer, int cluster) const {
  auto it = per_layer_.find(layer);
  if (it == per_layer_.end() || cluster < 0 || cluster >= num_clusters_) return false;
  return it->second[static_cast<size_t>(cluster)].bits != kUnsetBits;
}

const QuantParams& TimeAwareQuantizerSet::params(const std::string& layer, int cluster) const {
  auto it = per_layer_.find(layer);
  require(it != per_layer_.end() && cluster >= 0 && cluster < num_clusters_ &&
              it->second[static_cast<size_t>(cluster)].bits != kUnsetBits,
          strformat("quantizer params missing for layer '%s', cluster %d", layer.c_str(), cluster));
  return it->second[static_cast<size_t>(cluster)];
}

QuantParams& TimeAwareQuantizerSet::params_ref(const std::string& layer, int cluster) {
  auto it = per_layer_.find(layer);
  require(it != per_layer_.end() && cluster >= 0 && cluster < num_clusters_ &&
              it->second[static_cast<size_t>(cluster)].bits != kUnsetBits,
          strformat("quantizer params missing for layer '%s', cluster %d", layer.c_str(), cluster));
  return it->second[static_cast<size_t>(cluster)];
}

std::vector<std::string> TimeAwareQuantizerSet::layers() const {
  std::vector<std::string> out;
  out.reserve(per_layer_.size());
  for (const auto& [k, v] : per_layer_) out.push_back(k);
  return out;
}

TimeAwareQuantizerSet build_cluster_map(int T, int num_clusters) {
  require(T >= 1, strformat("build_cluster_map: T must be >= 1, got %d", T));
  require(num_clusters >= 1 && num_clusters <= T,
          strformat("build_cluster_map: num_clusters %d outside [1, %d]", num_clusters, T));
  TimeAwareQuantizerSet set;
  set.T_ = T;
  set.num_clusters_ = num_clusters;
  set.cluster_index_.assign(static_cast<size_t>(T), num_clusters - 1);
  const int run = T / num_clusters;
  set.reps_.resize(static_cast<size_t>(num_clusters));
  for (int k = 0; k < num_clusters; ++k) {
    const int first = k * run + 1;
    const int last = (k == num_clusters - 1) ? T : (k + 1) * run;
    for (int t = first; t <= last; ++t) set.cluster_index_[static_cast<size_t>(t - 1)] = k;
    set.reps_[static_cast<size_t>(k)] = first;
  }
  return set;
}

const QuantParams& select_params(const TimeAwareQuantizerSet& set, const std::string& layer, int t) {
  return set.params(layer, set.cluster_of(t));
}

}  // namespace quest
