#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "quest/graph.hpp"
#include "quest/quant.hpp"
#include "quest/taquant.hpp"
#include "quest/tensor.hpp"

namespace quest {

enum class LayerRole { kTimeEmbed, kAttentionQkv, kAttentionProj, kFeedForward, kConv, kOther };

enum class LayerKind { kLinear, kConv };

const char* layer_role_name(LayerRole role);
LayerRole layer_role_from_name(const std::string& name);

// One weight-bearing layer: what gets a weight quantizer and an output
// activation quantizer. Norm affine params and biases stay full precision.
struct LayerDesc {
  std::string id;
  LayerRole role = LayerRole::kOther;
  LayerKind kind = LayerKind::kLinear;
  int in_dim = 0;
  int out_dim = 0;
};

// Time-embedding layers vs attention-related layers (qkv, projection, feed-forward).
struct LayerSelection {
  std::set<std::string> c_te;
  std::set<std::string> c_a;

  bool in_te(const std::string& id) const { return c_te.count(id) > 0; }
  bool in_a(const std::string& id) const { return c_a.count(id) > 0; }
  bool selected(const std::string& id) const { return in_te(id) || in_a(id); }
};

struct UNetConfig {
  int resolution = 16;  // divisible by 4 (two pooling stages)
  int in_channels = 1;
  int base_width = 8;
  int time_embed_dim = 32;  // d_e, must be even
  int temb_width = 64;
  int gn_groups = 4;

  void validate() const;
};

// Fixed sinusoidal embedding e(t), never learned. Half sine / half cosine at
// geometrically spaced frequencies; deterministic in (t, d_e).
Tensor time_embedding(int t, int d_e);

struct QuantCtx {
  const std::map<std::string, FakeQuantizer>* weight_fq = nullptr;
  const TimeAwareQuantizerSet* act = nullptr;
};

// Pre-quantization (raw) and post-quantization outputs of one layer.
struct LayerActivation {
  Var raw;
  Var out;
};

using ActivationHooks = std::map<std::string, LayerActivation>;

struct ForwardOptions {
  const QuantCtx* quant = nullptr;
  int t = 0;  // denoising step; required when quant is set
  bool train_all = false;
  const std::set<std::string>* trainable_layers = nullptr;   // layer ids (weights + biases)
  bool scales_trainable = false;                             // learnable activation scales become live leaves
  const std::set<std::string>* trainable_scale_layers = nullptr;  // null -> no filter
  ActivationHooks* hooks = nullptr;
};

std::string scale_param_name(const std::string& layer, int cluster);
bool parse_scale_param_name(const std::string& name, std::string& layer, int& cluster);

// Two down/up stages, one attention block (with feed-forward) at the
// bottleneck, sinusoidal time embedding injected additively after a two-layer
// projection. Epsilon-prediction output head.
class ToyUNet {
 public:
  ToyUNet() = default;
  explicit ToyUNet(UNetConfig cfg);

  void init_params(uint64_t seed);

  const UNetConfig& config() const { return cfg_; }
  const std::vector<LayerDesc>& registry() const { return registry_; }
  const LayerDesc& layer(const std::string& id) const;
  bool has_layer(const std::string& id) const;
  LayerSelection selection() const;

  const std::vector<std::string>& param_names() const { return param_names_; }
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  bool has_param(const std::string& name) const { return params_.count(name) > 0; }
  int64_t num_params() const;

  // Full forward: x [N,C,H,W] and the (shared) time embedding e(t) [d_e]
  // produce the predicted noise with the same shape as x.
  Var forward(Graph& g, Var x, Var e_t, const ForwardOptions& opts) const;

  // Only the time-embedding projection path; returns the final projection.
  Var forward_time_path(Graph& g, Var e_t, const ForwardOptions& opts) const;

  // Eager convenience: forward on a private graph, optionally collecting
  // activation values by layer id.
  Tensor predict(const Tensor& x_t, int t, const ForwardOptions& opts = {},
                 std::map<std::string, Tensor>* raw_acts = nullptr,
                 std::map<std::string, Tensor>* quant_acts = nullptr) const;

 private:
  struct PathState;

  void register_layer(const std::string& id, LayerRole role, LayerKind kind, int in_dim, int out_dim);
  void add_param(const std::string& name, Tensor value);

  Var bind(Graph& g, const std::string& name, const ForwardOptions& opts, bool layer_trainable) const;
  bool layer_weights_trainable(const std::string& id, const ForwardOptions& opts) const;
  Var apply_linear(Graph& g, Var x, const std::string& id, const ForwardOptions& opts) const;
  Var apply_conv(Graph& g, Var x, const std::string& id, const ForwardOptions& opts) const;
  Var quantize_output(Graph& g, Var y, const std::string& id, const ForwardOptions& opts) const;
  Var group_norm_layer(Graph& g, Var x, const std::string& gn_name, const ForwardOptions& opts) const;
  Var res_block(Graph& g, Var x, Var temb, const std::string& name, int cin, int cout,
                const ForwardOptions& opts) const;
  Var attention_block(Graph& g, Var x, const ForwardOptions& opts) const;

  UNetConfig cfg_;
  std::vector<LayerDesc> registry_;
  std::map<std::string, size_t> registry_index_;
  std::map<std::string, Tensor> params_;
  std::vector<std::string> param_names_;
};

}  // namespace quest
