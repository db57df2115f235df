#pragma once

#include <map>
#include <string>
#include <vector>

#include "quest/tensor.hpp"

namespace quest {

class Graph;

// Lightweight handle to a node on a Graph's tape.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Tensor& value() const;
};

// Parameter identifier -> gradient tensor, produced by Graph::backward.
using GradientMap = std::map<std::string, Tensor>;

enum class OpKind {
  kLeaf,
  kMatmul,
  kConv2d3x3,
  kAdd,
  kMul,
  kScale,
  kSilu,
  kSoftmax,
  kGroupNorm,
  kMean,
  kMse,
  kReshape,
  kTranspose,
  kAvgPool2,
  kUpsample2,
  kFakeQuantAct,
  kFakeQuantWeight,
};

// Reverse-mode tape. Forward ops append nodes; backward replays them in
// reverse creation order exactly once. Single-threaded per training step.
class Graph {
 public:
  // Leaves. `param` deduplicates by name so a parameter bound twice shares one
  // node and its gradient accumulates additively.
  Var leaf(Tensor value, bool requires_grad = false, const std::string& name = {});
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var param(const std::string& name, const Tensor& value, bool requires_grad);

  // Op basis. conv2d is stride 1, padding 1. add supports the broadcast
  // patterns the model needs: same shape, [N,D]+[D], [N,L,C]+[C],
  // [N,C,H,W]+[C], [N,C,H,W]+[N,C].
  Var matmul(Var a, Var b, bool transpose_b = false);
  Var conv2d_3x3(Var x, Var w);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, float c);
  Var silu(Var a);
  Var softmax(Var a);  // over the last dimension
  Var group_norm(Var x, Var gamma, Var beta, int groups, float eps = 1e-5f);
  Var mean(Var a);
  Var mse(Var a, Var b);

  // Shape plumbing (zero-arithmetic ops).
  Var reshape(Var a, std::vector<int> new_shape);
  Var transpose_last2(Var a);
  Var avgpool2(Var a);
  Var upsample2(Var a);

  // Quantize-dequantize with straight-through input gradient. The activation
  // form takes a live scalar scale (learned-step-size gradient); the weight
  // form takes frozen params, optionally per output channel.
  Var fake_quant_act(Var x, Var s, int zero_point, int qmin, int qmax);
  Var fake_quant_weight(Var x, const std::vector<float>& scales, const std::vector<int>& zero_points,
                        int qmin, int qmax);

  // Reverse pass from a scalar loss. Returns gradients for every named
  // requires_grad leaf reachable from the loss.
  GradientMap backward(Var loss);

  const Tensor& value(Var v) const;
  // Gradient of any node from the most recent backward (empty if none reached it).
  Tensor grad_of(Var v) const;

  size_t num_nodes() const { return nodes_.size(); }

  static float round_half_away(float v);

 private:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    int inputs[3] = {-1, -1, -1};
    int n_inputs = 0;
    Tensor value;
    bool requires_grad = false;
    std::string name;

    float scalar_attr = 0.0f;
    bool transpose_b = false;
    int groups = 0;
    float eps = 0.0f;
    std::vector<int> prev_shape;

    // group_norm saves per-(sample, group) statistics
    std::vector<float> saved_mean;
    std::vector<float> saved_inv_std;

    // fake-quant saves the straight-through mask and scale-gradient coefficients
    std::vector<uint8_t> fq_in_range;
    std::vector<float> fq_scale_coef;
  };

  int push(Node node);
  const Node& node(Var v) const;
  Var out(Node node) { return Var{this, push(std::move(node))}; }

  std::vector<Node> nodes_;
  std::map<std::string, int> named_;
  std::vector<std::vector<float>> last_grads_;
};

}  // namespace quest
