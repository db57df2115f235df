#include "quest/graph.hpp"

#include <cmath>
#include <cstring>

#include "quest/common.hpp"

namespace quest {

namespace {

float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

// C[m,n] += A[m,k] * B[k,n]
void gemm_acc(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    float* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float av = arow[p];
      if (av == 0.0f) continue;
      const float* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt_acc(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    float* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const float* brow = b + static_cast<size_t>(j) * k;
      float acc = 0.0f;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn_acc(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    const float* brow = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float av = arow[p];
      if (av == 0.0f) continue;
      float* crow = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

struct MatmulDims {
  int batch;  // 0 when both operands are 2-d
  int m, k, n;
  bool batched_b;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b, bool transpose_b) {
  MatmulDims d{};
  require(a.dim() == 2 || a.dim() == 3,
          strformat("matmul: lhs must be 2-d or 3-d, got %s", a.shape_str().c_str()));
  require(b.dim() == 2 || b.dim() == 3,
          strformat("matmul: rhs must be 2-d or 3-d, got %s", b.shape_str().c_str()));
  require(!(a.dim() == 2 && b.dim() == 3), "matmul: 2-d lhs with 3-d rhs is not supported");
  d.batch = a.dim() == 3 ? a.shape[0] : 0;
  d.m = a.shape[a.dim() - 2];
  d.k = a.shape[a.dim() - 1];
  d.batched_b = b.dim() == 3;
  if (d.batched_b) {
    require(d.batch > 0 && b.shape[0] == d.batch,
            strformat("matmul: batch mismatch %s vs %s", a.shape_str().c_str(), b.shape_str().c_str()));
  }
  const int bk = transpose_b ? b.shape[b.dim() - 1] : b.shape[b.dim() - 2];
  d.n = transpose_b ? b.shape[b.dim() - 2] : b.shape[b.dim() - 1];
  require(bk == d.k, strformat("matmul: inner dimension mismatch %s x %s%s", a.shape_str().c_str(),
                               b.shape_str().c_str(), transpose_b ? " (rhs transposed)" : ""));
  return d;
}

enum class AddPattern { kSame, kRowBias, kTokenBias, kChannelBias, kSampleChannel };

AddPattern add_pattern(const Tensor& a, const Tensor& b) {
  if (a.same_shape(b)) return AddPattern::kSame;
  if (a.dim() == 2 && b.dim() == 1 && a.shape[1] == b.shape[0]) return AddPattern::kRowBias;
  if (a.dim() == 3 && b.dim() == 1 && a.shape[2] == b.shape[0]) return AddPattern::kTokenBias;
  if (a.dim() == 4 && b.dim() == 1 && a.shape[1] == b.shape[0]) return AddPattern::kChannelBias;
  if (a.dim() == 4 && b.dim() == 2 && a.shape[0] == b.shape[0] && a.shape[1] == b.shape[1])
    return AddPattern::kSampleChannel;
  fail_contract(strformat("add: unsupported shapes %s + %s", a.shape_str().c_str(), b.shape_str().c_str()));
}

}  // namespace

const Tensor& Var::value() const { return graph->value(*this); }

float Graph::round_half_away(float v) {
  return v >= 0.0f ? std::floor(v + 0.5f) : std::ceil(v - 0.5f);
}

int Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

const Graph::Node& Graph::node(Var v) const {
  require(v.graph == this && v.id >= 0 && v.id < static_cast<int>(nodes_.size()),
          "Graph: variable does not belong to this tape");
  return nodes_[static_cast<size_t>(v.id)];
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

Tensor Graph::grad_of(Var v) const {
  const Node& n = node(v);
  if (v.id >= static_cast<int>(last_grads_.size()) || last_grads_[static_cast<size_t>(v.id)].empty())
    return Tensor::zeros(n.value.shape);
  return Tensor(n.value.shape, last_grads_[static_cast<size_t>(v.id)]);
}

Var Graph::leaf(Tensor value, bool requires_grad, const std::string& name) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.name = name;
  return out(std::move(n));
}

Var Graph::param(const std::string& name, const Tensor& value, bool requires_grad) {
  require(!name.empty(), "param: name must be non-empty");
  auto it = named_.find(name);
  if (it != named_.end()) {
    const Node& existing = nodes_[static_cast<size_t>(it->second)];
    require(existing.value.same_shape(value),
            strformat("param '%s' rebound with shape %s, previously %s", name.c_str(),
                      value.shape_str().c_str(), existing.value.shape_str().c_str()));
    return Var{this, it->second};
  }
  Var v = leaf(value, requires_grad, name);
  named_[name] = v.id;
  return v;
}

Var Graph::matmul(Var av, Var bv, bool transpose_b) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  const MatmulDims d = matmul_dims(a, b, transpose_b);

  Node n;
  n.kind = OpKind::kMatmul;
  n.inputs[0] = av.id;
  n.inputs[1] = bv.id;
  n.n_inputs = 2;
  n.transpose_b = transpose_b;
  n.requires_grad = node(av).requires_grad || node(bv).requires_grad;

  const int nb = d.batch == 0 ? 1 : d.batch;
  std::vector<int> out_shape = d.batch == 0 ? std::vector<int>{d.m, d.n} : std::vector<int>{d.batch, d.m, d.n};
  n.value = Tensor::zeros(std::move(out_shape));
  const size_t a_stride = static_cast<size_t>(d.m) * d.k;
  const size_t b_stride = d.batched_b ? static_cast<size_t>(d.n) * d.k : 0;
  const size_t o_stride = static_cast<size_t>(d.m) * d.n;
  for (int i = 0; i < nb; ++i) {
    const float* ap = a.data.data() + (d.batch == 0 ? 0 : a_stride * i);
    const float* bp = b.data.data() + b_stride * i;
    float* op = n.value.data.data() + (d.batch == 0 ? 0 : o_stride * i);
    if (transpose_b)
      gemm_nt_acc(ap, bp, op, d.m, d.k, d.n);
    else
      gemm_acc(ap, bp, op, d.m, d.k, d.n);
  }
  return out(std::move(n));
}

Var Graph::conv2d_3x3(Var xv, Var wv) {
  const Tensor& x = value(xv);
  const Tensor& w = value(wv);
  require(x.dim() == 4, strformat("conv2d_3x3: input must be [N,C,H,W], got %s", x.shape_str().c_str()));
  require(w.dim() == 4 && w.shape[2] == 3 && w.shape[3] == 3,
          strformat("conv2d_3x3: weight must be [Co,Ci,3,3], got %s", w.shape_str().c_str()));
  require(x.shape[1] == w.shape[1],
          strformat("conv2d_3x3: channel mismatch input %s weight %s", x.shape_str().c_str(),
                    w.shape_str().c_str()));
  const int N = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int Co = w.shape[0];

  Node n;
  n.kind = OpKind::kConv2d3x3;
  n.inputs[0] = xv.id;
  n.inputs[1] = wv.id;
  n.n_inputs = 2;
  n.requires_grad = node(xv).requires_grad || node(wv).requires_grad;
  n.value = Tensor::zeros({N, Co, H, W});

  const size_t plane = static_cast<size_t>(H) * W;
  for (int b = 0; b < N; ++b) {
    for (int co = 0; co < Co; ++co) {
      float* op = n.value.data.data() + (static_cast<size_t>(b) * Co + co) * plane;
      for (int ci = 0; ci < Ci; ++ci) {
        const float* xp = x.data.data() + (static_cast<size_t>(b) * Ci + ci) * plane;
        const float* wp = w.data.data() + (static_cast<size_t>(co) * Ci + ci) * 9;
        for (int u = 0; u < 3; ++u) {
          for (int v = 0; v < 3; ++v) {
            const float wval = wp[u * 3 + v];
            if (wval == 0.0f) continue;
            const int di = u - 1, dj = v - 1;
            const int i0 = std::max(0, -di), i1 = std::min(H, H - di);
            const int j0 = std::max(0, -dj), j1 = std::min(W, W - dj);
            for (int i = i0; i < i1; ++i) {
              const float* xrow = xp + static_cast<size_t>(i + di) * W + dj;
              float* orow = op + static_cast<size_t>(i) * W;
              for (int j = j0; j < j1; ++j) orow[j] += wval * xrow[j];
            }
          }
        }
      }
    }
  }
  return out(std::move(n));
}

Var Graph::add(Var av, Var bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  const AddPattern pat = add_pattern(a, b);

  Node n;
  n.kind = OpKind::kAdd;
  n.inputs[0] = av.id;
  n.inputs[1] = bv.id;
  n.n_inputs = 2;
  n.requires_grad = node(av).requires_grad || node(bv).requires_grad;
  n.value = a;
  n.value.requires_grad = false;
  n.value.grad.reset();

  switch (pat) {
    case AddPattern::kSame:
      for (size_t i = 0; i < a.data.size(); ++i) n.value.data[i] += b.data[i];
      break;
    case AddPattern::kRowBias: {
      const int rows = a.shape[0], cols = a.shape[1];
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) n.value.data[static_cast<size_t>(r) * cols + c] += b.data[c];
      break;
    }
    case AddPattern::kTokenBias: {
      const int rows = a.shape[0] * a.shape[1], cols = a.shape[2];
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) n.value.data[static_cast<size_t>(r) * cols + c] += b.data[c];
      break;
    }
    case AddPattern::kChannelBias: {
      const int N = a.shape[0], C = a.shape[1];
      const size_t plane = static_cast<size_t>(a.shape[2]) * a.shape[3];
      for (int s = 0; s < N; ++s)
        for (int c = 0; c < C; ++c) {
          float* p = n.value.data.data() + (static_cast<size_t>(s) * C + c) * plane;
          const float bval = b.data[c];
          for (size_t i = 0; i < plane; ++i) p[i] += bval;
        }
      break;
    }
    case AddPattern::kSampleChannel: {
      const int N = a.shape[0], C = a.shape[1];
      const size_t plane = static_cast<size_t>(a.shape[2]) * a.shape[3];
      for (int s = 0; s < N; ++s)
        for (int c = 0; c < C; ++c) {
          float* p = n.value.data.data() + (static_cast<size_t>(s) * C + c) * plane;
          const float bval = b.data[static_cast<size_t>(s) * C + c];
          for (size_t i = 0; i < plane; ++i) p[i] += bval;
        }
      break;
    }
  }
  return out(std::move(n));
}

Var Graph::mul(Var av, Var bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  require(a.same_shape(b),
          strformat("mul: shape mismatch %s vs %s", a.shape_str().c_str(), b.shape_str().c_str()));
  Node n;
  n.kind = OpKind::kMul;
  n.inputs[0] = av.id;
  n.inputs[1] = bv.id;
  n.n_inputs = 2;
  n.requires_grad = node(av).requires_grad || node(bv).requires_grad;
  n.value = Tensor(a.shape);
  for (size_t i = 0; i < a.data.size(); ++i) n.value.data[i] = a.data[i] * b.data[i];
  return out(std::move(n));
}

Var Graph::scale(Var av, float c) {
  const Tensor& a = value(av);
  Node n;
  n.kind = OpKind::kScale;
  n.inputs[0] = av.id;
  n.n_inputs = 1;
  n.scalar_attr = c;
  n.requires_grad = node(av).requires_grad;
  n.value = Tensor(a.shape);
  for (size_t i = 0; i < a.data.size(); ++i) n.value.data[i] = c * a.data[i];
  return out(std::move(n));
}

Var Graph::silu(Var av) {
  const Tensor& a = value(av);
  Node n;
  n.kind = OpKind::kSilu;
  n.inputs[0] = av.id;
  n.n_inputs = 1;
  n.requires_grad = node(av).requires_grad;
  n.value = Tensor(a.shape);
  for (size_t i = 0; i < a.data.size(); ++i) n.value.data[i] = a.data[i] * sigmoidf(a.data[i]);
  return out(std::move(n));
}

Var Graph::softmax(Var av) {
  const Tensor& a = value(av);
  require(a.dim() >= 1, "softmax: input must have at least one dimension");
  const int cols = a.shape[a.dim() - 1];
  const int rows = static_cast<int>(a.numel() / cols);
  Node n;
  n.kind = OpKind::kSoftmax;
  n.inputs[0] = av.id;
  n.n_inputs = 1;
  n.requires_grad = node(av).requires_grad;
  n.value = Tensor(a.shape);
  for (int r = 0; r < rows; ++r) {
    const float* in = a.data.data() + static_cast<size_t>(r) * cols;
    float* outp = n.value.data.data() + static_cast<size_t>(r) * cols;
    float mx = in[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    float sum = 0.0f;
    for (int c = 0; c < cols; ++c) {
      outp[c] = std::exp(in[c] - mx);
      sum += outp[c];
    }
    const float inv = 1.0f / sum;
    for (int c = 0; c < cols; ++c) outp[c] *= inv;
  }
  return out(std::move(n));
}

Var Graph::group_norm(Var xv, Var gv, Var bv, int groups, float eps) {
  const Tensor& x = value(xv);
  const Tensor& gamma = value(gv);
  const Tensor& beta = value(bv);
  require(x.dim() == 4, strformat("group_norm: input must be [N,C,H,W], got %s", x.shape_str().c_str()));
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  require(groups > 0 && C % groups == 0,
          strformat("group_norm: channels %d not divisible by groups %d", C, groups));
  require(gamma.dim() == 1 && gamma.shape[0] == C && beta.dim() == 1 && beta.shape[0] == C,
          strformat("group_norm: affine params must be [%d], got %s and %s", C,
                    gamma.shape_str().c_str(), beta.shape_str().c_str()));

  Node n;
  n.kind = OpKind::kGroupNorm;
  n.inputs[0] = xv.id;
  n.inputs[1] = gv.id;
  n.inputs[2] = bv.id;
  n.n_inputs = 3;
  n.groups = groups;
  n.eps = eps;
  n.requires_grad = node(xv).requires_grad || node(gv).requires_grad || node(bv).requires_grad;
  n.value = Tensor(x.shape);
  n.saved_mean.assign(static_cast<size_t>(N) * groups, 0.0f);
  n.saved_inv_std.assign(static_cast<size_t>(N) * groups, 0.0f);

  const int cpg = C / groups;
  const size_t plane = static_cast<size_t>(H) * W;
  const size_t gsize = static_cast<size_t>(cpg) * plane;
  for (int b = 0; b < N; ++b) {
    for (int g = 0; g < groups; ++g) {
      const float* xp = x.data.data() + (static_cast<size_t>(b) * C + static_cast<size_t>(g) * cpg) * plane;
      double sum = 0.0, sq = 0.0;
      for (size_t i = 0; i < gsize; ++i) {
        sum += xp[i];
        sq += static_cast<double>(xp[i]) * xp[i];
      }
      const double mu = sum / static_cast<double>(gsize);
      const double var = sq / static_cast<double>(gsize) - mu * mu;
      const float inv = static_cast<float>(1.0 / std::sqrt(std::max(var, 0.0) + eps));
      n.saved_mean[static_cast<size_t>(b) * groups + g] = static_cast<float>(mu);
      n.saved_inv_std[static_cast<size_t>(b) * groups + g] = inv;
      for (int cc = 0; cc < cpg; ++cc) {
        const int c = g * cpg + cc;
        const float* xr = x.data.data() + (static_cast<size_t>(b) * C + c) * plane;
        float* yr = n.value.data.data() + (static_cast<size_t>(b) * C + c) * plane;
        const float gm = gamma.data[c], bt = beta.data[c], mu_f = static_cast<float>(mu);
        for (size_t i = 0; i < plane; ++i) yr[i] = gm * (xr[i] - mu_f) * inv + bt;
      }
    }
  }
  return out(std::move(n));
}

Var Graph::mean(Var av) {
  const Tensor& a = value(av);
  Node n;
  n.kind = OpKind::kMean;
  n.inputs[0] = av.id;
  n.n_inputs = 1;
  n.requires_grad = node(av).requires_grad;
  double acc = 0.0;
  for (float v : a.data) acc += v;
  n.value = Tensor::scalar(static_cast<float>(acc / static_cast<double>(a.numel())));
  return out(std::move(n));
}

Var Graph::mse(Var av, Var bv) {
  const Tensor& a = value(av);
  const Tensor& b = value(bv);
  require(a.same_shape(b),
          strformat("mse: shape mismatch %s vs %s", a.shape_str().c_str(), b.shape_str().c_str()));
  Node n;
  n.kind = OpKind::kMse;
  n.inputs[0] = av.id;
  n.inputs[1] = bv.id;
  n.n_inputs = 2;
  n.requires_grad = node(av).requires_grad || node(bv).requires_grad;
  double acc = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    acc += d * d;
  }
  n.value = Tensor::scalar(static_cast<float>(acc / static_cast<double>(a.numel())));
  return out(std::move(n));
}

Var Graph::reshape(Var av, std::vector<int> new_shape) {
  const Tensor& a = value(av);
  require(shape_numel(new_shape) == a.numel(),
          strformat("reshape: cannot view %s as %s", a.shape_str().c_str(),
                    shape_to_string(new_shape).c_str()));
  Node n;
  n.kind = OpKind::kReshape;
  n.inputs[0] = av.id;
  n.n_inputs = 1;
  n.prev_shape = a.shape;
  n.requires_grad = node(av).requires_grad;
  n.value = Tensor(std::move(new_shape), a.data);
  return out(std::move(n));
}

Var Graph::transpose_last2(Var av) {
  const Tensor& a = value(av);
  require(a.dim() == 2 || a.dim() == 3,
          strformat("transpose: input must be 2-d or 3-d, got %s", a.shape_str().c_str()));
  const int B = a.dim() == 3 ? a.shape[0] : 1;
  const int R = a.shape[a.dim() - 2], C = a.shape[a.dim() - 1];
  Node n;
  n.kind = OpKind::kTranspose;
  n.inputs[0] = av.id;
  n.n_inputs = 1;
  n.requires_grad = node(av).requires_grad;
  std::vector<int> os = a.shape;
  std::swap(os[os.size() - 1], os[os.size() - 2]);
  n.value = Tensor(std::move(os));
  for (int b = 0; b < B; ++b) {
    const float* in = a.data.data() + static_cast<size_t>(b) * R * C;
    float* outp = n.value.data.data() + static_cast<size_t>(b) * R * C;
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) outp[static_cast<size_t>(c) * R + r] = in[static_cast<size_t>(r) * C + c];
  }
  return out(std::move(n));
}

Var Graph::avgpool2(Var av) {
  const Tensor& a = value(av);
  require(a.dim() == 4 && a.shape[2] % 2 == 0 && a.shape[3] % 2 == 0,
          strformat("avgpool2: input must be [N,C,2h,2w], got %s", a.shape_str().c_str()));
  const int N = a.shape[0], C = a.shape[1], H = a.shape[2], W = a.shape[3];
  Node n;
  n.kind = OpKind::kAvgPool2;
  n.inputs[0] = av.id;
  n.n_inputs = 1;
  n.requires_grad = node(av).requires_grad;
  n.value = Tensor({N, C, H / 2, W / 2});
  for (int p = 0; p < N * C; ++p) {
    const float* in = a.data.data() + static_cast<size_t>(p) * H * W;
    float* outp = n.value.data.data() + static_cast<size_t>(p) * (H / 2) * (W / 2);
    for (int i = 0; i < H / 2; ++i)
      for (int j = 0; j < W / 2; ++j)
        outp[static_cast<size_t>(i) * (W / 2) + j] =
            0.25f * (in[static_cast<size_t>(2 * i) * W + 2 * j] + in[static_cast<size_t>(2 * i) * W + 2 * j + 1] +
                     in[static_cast<size_t>(2 * i + 1) * W + 2 * j] +
                     in[static_cast<size_t>(2 * i + 1) * W + 2 * j + 1]);
  }
  return out(std::move(n));
}

Var Graph::upsample2(Var av) {
  const Tensor& a = value(av);
  require(a.dim() == 4, strformat("upsample2: input must be [N,C,H,W], got %s", a.shape_str().c_str()));
  const int N = a.shape[0], C = a.shape[1], H = a.shape[2], W = a.shape[3];
  Node n;
  n.kind = OpKind::kUpsample2;
  n.inputs[0] = av.id;
  n.n_inputs = 1;
  n.requires_grad = node(av).requires_grad;
  n.value = Tensor({N, C, 2 * H, 2 * W});
  for (int p = 0; p < N * C; ++p) {
    const float* in = a.data.data() + static_cast<size_t>(p) * H * W;
    float* outp = n.value.data.data() + static_cast<size_t>(p) * 4 * H * W;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        const float v = in[static_cast<size_t>(i) * W + j];
        outp[static_cast<size_t>(2 * i) * 2 * W + 2 * j] = v;
        outp[static_cast<size_t>(2 * i) * 2 * W + 2 * j + 1] = v;
        outp[static_cast<size_t>(2 * i + 1) * 2 * W + 2 * j] = v;
        outp[static_cast<size_t>(2 * i + 1) * 2 * W + 2 * j + 1] = v;
      }
  }
  return out(std::move(n));
}

Var Graph::fake_quant_act(Var xv, Var sv, int zero_point, int qmin, int qmax) {
  const Tensor& x = value(xv);
  const Tensor& s = value(sv);
  require(s.numel() == 1, "fake_quant_act: scale must be a scalar tensor");
  const float sval = s.data[0];
  require(sval > 0.0f, strformat("fake_quant_act: scale must be positive, got %g", sval));

  Node n;
  n.kind = OpKind::kFakeQuantAct;
  n.inputs[0] = xv.id;
  n.inputs[1] = sv.id;
  n.n_inputs = 2;
  n.requires_grad = node(xv).requires_grad || node(sv).requires_grad;
  n.value = Tensor(x.shape);
  n.fq_in_range.assign(x.data.size(), 0);
  n.fq_scale_coef.assign(x.data.size(), 0.0f);
  for (size_t i = 0; i < x.data.size(); ++i) {
    const float v = x.data[i] / sval;
    const float r = round_half_away(v) + static_cast<float>(zero_point);
    if (r < static_cast<float>(qmin)) {
      n.value.data[i] = static_cast<float>(qmin - zero_point) * sval;
      n.fq_scale_coef[i] = static_cast<float>(qmin - zero_point);
    } else if (r > static_cast<float>(qmax)) {
      n.value.data[i] = static_cast<float>(qmax - zero_point) * sval;
      n.fq_scale_coef[i] = static_cast<float>(qmax - zero_point);
    } else {
      n.fq_in_range[i] = 1;
      n.value.data[i] = (r - static_cast<float>(zero_point)) * sval;
      n.fq_scale_coef[i] = round_half_away(v) - v;
    }
  }
  return out(std::move(n));
}

Var Graph::fake_quant_weight(Var xv, const std::vector<float>& scales, const std::vector<int>& zero_points,
                             int qmin, int qmax) {
  const Tensor& x = value(xv);
  require(!scales.empty() && scales.size() == zero_points.size(),
          "fake_quant_weight: scales and zero_points must be non-empty and same size");
  const size_t channels = scales.size();
  require(channels == 1 || (x.dim() >= 1 && static_cast<size_t>(x.shape[0]) == channels),
          strformat("fake_quant_weight: %zu channel params for tensor %s", channels,
                    x.shape_str().c_str()));
  for (float sv : scales)
    require(sv > 0.0f, strformat("fake_quant_weight: scale must be positive, got %g", sv));

  Node n;
  n.kind = OpKind::kFakeQuantWeight;
  n.inputs[0] = xv.id;
  n.n_inputs = 1;
  n.requires_grad = node(xv).requires_grad;
  n.value = Tensor(x.shape);
  n.fq_in_range.assign(x.data.size(), 0);
  const size_t per_chan = x.data.size() / channels;
  for (size_t i = 0; i < x.data.size(); ++i) {
    const size_t c = channels == 1 ? 0 : i / per_chan;
    const float sval = scales[c];
    const float zp = static_cast<float>(zero_points[c]);
    const float r = round_half_away(x.data[i] / sval) + zp;
    if (r < static_cast<float>(qmin)) {
      n.value.data[i] = (static_cast<float>(qmin) - zp) * sval;
    } else if (r > static_cast<float>(qmax)) {
      n.value.data[i] = (static_cast<float>(qmax) - zp) * sval;
    } else {
      n.fq_in_range[i] = 1;
      n.value.data[i] = (r - zp) * sval;
    }
  }
  return out(std::move(n));
}

GradientMap Graph::backward(Var loss) {
  const Node& ln = node(loss);
  require(ln.value.numel() == 1,
          strformat("backward: loss must be scalar, got shape %s", ln.value.shape_str().c_str()));
  require(ln.requires_grad, "backward: loss is detached from the tape (no differentiable inputs)");

  last_grads_.assign(nodes_.size(), {});
  last_grads_[static_cast<size_t>(loss.id)] = {1.0f};

  auto acc = [&](int id, size_t len) -> std::vector<float>* {
    Node& t = nodes_[static_cast<size_t>(id)];
    if (!t.requires_grad) return nullptr;
    auto& g = last_grads_[static_cast<size_t>(id)];
    if (g.empty()) g.assign(len, 0.0f);
    return &g;
  };

  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) continue;
    const auto& gy = last_grads_[static_cast<size_t>(id)];
    if (gy.empty()) continue;

    switch (n.kind) {
      case OpKind::kLeaf:
        break;
      case OpKind::kMatmul: {
        const Tensor& a = nodes_[static_cast<size_t>(n.inputs[0])].value;
        const Tensor& b = nodes_[static_cast<size_t>(n.inputs[1])].value;
        const MatmulDims d = matmul_dims(a, b, n.transpose_b);
        const int nb = d.batch == 0 ? 1 : d.batch;
        auto* ga = acc(n.inputs[0], a.data.size());
        auto* gb = acc(n.inputs[1], b.data.size());
        const size_t a_stride = static_cast<size_t>(d.m) * d.k;
        const size_t b_stride = d.batched_b ? static_cast<size_t>(d.n) * d.k : 0;
        const size_t o_stride = static_cast<size_t>(d.m) * d.n;
        for (int i = 0; i < nb; ++i) {
          const float* ap = a.data.data() + (d.batch == 0 ? 0 : a_stride * i);
          const float* bp = b.data.data() + b_stride * i;
          const float* gyp = gy.data() + (d.batch == 0 ? 0 : o_stride * i);
          if (!n.transpose_b) {
            // y = a b : da = gy b^T ; db = a^T gy
            if (ga) gemm_nt_acc(gyp, bp, ga->data() + (d.batch == 0 ? 0 : a_stride * i), d.m, d.n, d.k);
            if (gb) gemm_tn_acc(ap, gyp, gb->data() + b_stride * i, d.m, d.k, d.n);
          } else {
            // y = a b^T : da = gy b ; db = gy^T a
            if (ga) gemm_acc(gyp, bp, ga->data() + (d.batch == 0 ? 0 : a_stride * i), d.m, d.n, d.k);
            if (gb) gemm_tn_acc(gyp, ap, gb->data() + b_stride * i, d.m, d.n, d.k);
          }
        }
        break;
      }
      case OpKind::kConv2d3x3: {
        const Tensor& x = nodes_[static_cast<size_t>(n.inputs[0])].value;
        const Tensor& w = nodes_[static_cast<size_t>(n.inputs[1])].value;
        const int N = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3];
        const int Co = w.shape[0];
        auto* gx = acc(n.inputs[0], x.data.size());
        auto* gw = acc(n.inputs[1], w.data.size());
        const size_t plane = static_cast<size_t>(H) * W;
        for (int b = 0; b < N; ++b) {
          for (int co = 0; co < Co; ++co) {
            const float* gyp = gy.data() + (static_cast<size_t>(b) * Co + co) * plane;
            for (int ci = 0; ci < Ci; ++ci) {
              const float* xp = x.data.data() + (static_cast<size_t>(b) * Ci + ci) * plane;
              const float* wp = w.data.data() + (static_cast<size_t>(co) * Ci + ci) * 9;
              float* gxp = gx ? gx->data() + (static_cast<size_t>(b) * Ci + ci) * plane : nullptr;
              float* gwp = gw ? gw->data() + (static_cast<size_t>(co) * Ci + ci) * 9 : nullptr;
              for (int u = 0; u < 3; ++u) {
                for (int v = 0; v < 3; ++v) {
                  const int di = u - 1, dj = v - 1;
                  const int i0 = std::max(0, -di), i1 = std::min(H, H - di);
                  const int j0 = std::max(0, -dj), j1 = std::min(W, W - dj);
                  const float wval = wp[u * 3 + v];
                  float wacc = 0.0f;
                  for (int i = i0; i < i1; ++i) {
                    const float* xrow = xp + static_cast<size_t>(i + di) * W + dj;
                    const float* gyrow = gyp + static_cast<size_t>(i) * W;
                    if (gxp) {
                      float* gxrow = gxp + static_cast<size_t>(i + di) * W + dj;
                      for (int j = j0; j < j1; ++j) gxrow[j] += wval * gyrow[j];
                    }
                    if (gwp)
                      for (int j = j0; j < j1; ++j) wacc += gyrow[j] * xrow[j];
                  }
                  if (gwp) gwp[u * 3 + v] += wacc;
                }
              }
            }
          }
        }
        break;
      }
      case OpKind::kAdd: {
        const Tensor& a = nodes_[static_cast<size_t>(n.inputs[0])].value;
        const Tensor& b = nodes_[static_cast<size_t>(n.inputs[1])].value;
        auto* ga = acc(n.inputs[0], a.data.size());
        auto* gb = acc(n.inputs[1], b.data.size());
        if (ga)
          for (size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i];
        if (gb) {
          switch (add_pattern(a, b)) {
            case AddPattern::kSame:
              for (size_t i = 0; i < gy.size(); ++i) (*gb)[i] += gy[i];
              break;
            case AddPattern::kRowBias: {
              const int rows = a.shape[0], cols = a.shape[1];
              for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) (*gb)[c] += gy[static_cast<size_t>(r) * cols + c];
              break;
            }
            case AddPattern::kTokenBias: {
              const int rows = a.shape[0] * a.shape[1], cols = a.shape[2];
              for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) (*gb)[c] += gy[static_cast<size_t>(r) * cols + c];
              break;
            }
            case AddPattern::kChannelBias: {
              const int N = a.shape[0], C = a.shape[1];
              const size_t plane = static_cast<size_t>(a.shape[2]) * a.shape[3];
              for (int s = 0; s < N; ++s)
                for (int c = 0; c < C; ++c) {
                  const float* p = gy.data() + (static_cast<size_t>(s) * C + c) * plane;
                  float accu = 0.0f;
                  for (size_t i = 0; i < plane; ++i) accu += p[i];
                  (*gb)[c] += accu;
                }
              break;
            }
            case AddPattern::kSampleChannel: {
              const int N = a.shape[0], C = a.shape[1];
              const size_t plane = static_cast<size_t>(a.shape[2]) * a.shape[3];
              for (int s = 0; s < N; ++s)
                for (int c = 0; c < C; ++c) {
                  const float* p = gy.data() + (static_cast<size_t>(s) * C + c) * plane;
                  float accu = 0.0f;
                  for (size_t i = 0; i < plane; ++i) accu += p[i];
                  (*gb)[static_cast<size_t>(s) * C + c] += accu;
                }
              break;
            }
          }
        }
        break;
      }
      case OpKind::kMul: {
        const Tensor& a = nodes_[static_cast<size_t>(n.inputs[0])].value;
        const Tensor& b = nodes_[static_cast<size_t>(n.inputs[1])].value;
        auto* ga = acc(n.inputs[0], a.data.size());
        auto* gb = acc(n.inputs[1], b.data.size());
        for (size_t i = 0; i < gy.size(); ++i) {
          if (ga) (*ga)[i] += gy[i] * b.data[i];
          if (gb) (*gb)[i] += gy[i] * a.data[i];
        }
        break;
      }
      case OpKind::kScale: {
        auto* ga = acc(n.inputs[0], gy.size());
        if (ga)
          for (size_t i = 0; i < gy.size(); ++i) (*ga)[i] += n.scalar_attr * gy[i];
        break;
      }
      case OpKind::kSilu: {
        const Tensor& a = nodes_[static_cast<size_t>(n.inputs[0])].value;
        auto* ga = acc(n.inputs[0], a.data.size());
        if (ga)
          for (size_t i = 0; i < gy.size(); ++i) {
            const float sg = sigmoidf(a.data[i]);
            (*ga)[i] += gy[i] * sg * (1.0f + a.data[i] * (1.0f - sg));
          }
        break;
      }
      case OpKind::kSoftmax: {
        auto* ga = acc(n.inputs[0], gy.size());
        if (ga) {
          const int cols = n.value.shape[n.value.dim() - 1];
          const int rows = static_cast<int>(n.value.numel() / cols);
          for (int r = 0; r < rows; ++r) {
            const float* y = n.value.data.data() + static_cast<size_t>(r) * cols;
            const float* gyr = gy.data() + static_cast<size_t>(r) * cols;
            float dot = 0.0f;
            for (int c = 0; c < cols; ++c) dot += gyr[c] * y[c];
            float* gar = ga->data() + static_cast<size_t>(r) * cols;
            for (int c = 0; c < cols; ++c) gar[c] += y[c] * (gyr[c] - dot);
          }
        }
        break;
      }
      case OpKind::kGroupNorm: {
        const Tensor& x = nodes_[static_cast<size_t>(n.inputs[0])].value;
        const Tensor& gamma = nodes_[static_cast<size_t>(n.inputs[1])].value;
        const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
        const int G = n.groups, cpg = C / G;
        const size_t plane = static_cast<size_t>(H) * W;
        const size_t gsize = static_cast<size_t>(cpg) * plane;
        auto* gx = acc(n.inputs[0], x.data.size());
        auto* gg = acc(n.inputs[1], gamma.data.size());
        auto* gb = acc(n.inputs[2], gamma.data.size());
        for (int b = 0; b < N; ++b) {
          for (int g = 0; g < G; ++g) {
            const float mu = n.saved_mean[static_cast<size_t>(b) * G + g];
            const float inv = n.saved_inv_std[static_cast<size_t>(b) * G + g];
            // First pass: means of dxhat and dxhat*xhat over the group; affine grads.
            double s1 = 0.0, s2 = 0.0;
            for (int cc = 0; cc < cpg; ++cc) {
              const int c = g * cpg + cc;
              const float* xr = x.data.data() + (static_cast<size_t>(b) * C + c) * plane;
              const float* gyr = gy.data() + (static_cast<size_t>(b) * C + c) * plane;
              const float gm = gamma.data[c];
              double dgam = 0.0, dbet = 0.0;
              for (size_t i = 0; i < plane; ++i) {
                const float xh = (xr[i] - mu) * inv;
                const float dxh = gyr[i] * gm;
                s1 += dxh;
                s2 += static_cast<double>(dxh) * xh;
                dgam += static_cast<double>(gyr[i]) * xh;
                dbet += gyr[i];
              }
              if (gg) (*gg)[c] += static_cast<float>(dgam);
              if (gb) (*gb)[c] += static_cast<float>(dbet);
            }
            if (gx) {
              const float m1 = static_cast<float>(s1 / static_cast<double>(gsize));
              const float m2 = static_cast<float>(s2 / static_cast<double>(gsize));
              for (int cc = 0; cc < cpg; ++cc) {
                const int c = g * cpg + cc;
                const float* xr = x.data.data() + (static_cast<size_t>(b) * C + c) * plane;
                const float* gyr = gy.data() + (static_cast<size_t>(b) * C + c) * plane;
                float* gxr = gx->data() + (static_cast<size_t>(b) * C + c) * plane;
                const float gm = gamma.data[c];
                for (size_t i = 0; i < plane; ++i) {
                  const float xh = (xr[i] - mu) * inv;
                  gxr[i] += inv * (gyr[i] * gm - m1 - xh * m2);
                }
              }
            }
          }
        }
        break;
      }
      case OpKind::kMean: {
        const Tensor& a = nodes_[static_cast<size_t>(n.inputs[0])].value;
        auto* ga = acc(n.inputs[0], a.data.size());
        if (ga) {
          const float coef = gy[0] / static_cast<float>(a.numel());
          for (auto& g : *ga) g += coef;
        }
        break;
      }
      case OpKind::kMse: {
        const Tensor& a = nodes_[static_cast<size_t>(n.inputs[0])].value;
        const Tensor& b = nodes_[static_cast<size_t>(n.inputs[1])].value;
        auto* ga = acc(n.inputs[0], a.data.size());
        auto* gb = acc(n.inputs[1], b.data.size());
        const float coef = 2.0f * gy[0] / static_cast<float>(a.numel());
        for (size_t i = 0; i < a.data.size(); ++i) {
          const float d = coef * (a.data[i] - b.data[i]);
          if (ga) (*ga)[i] += d;
          if (gb) (*gb)[i] -= d;
        }
        break;
      }
      case OpKind::kReshape: {
        auto* ga = acc(n.inputs[0], gy.size());
        if (ga)
          for (size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i];
        break;
      }
      case OpKind::kTranspose: {
        auto* ga = acc(n.inputs[0], gy.size());
        if (ga) {
          const int B = n.value.dim() == 3 ? n.value.shape[0] : 1;
          const int R = n.value.shape[n.value.dim() - 2], C = n.value.shape[n.value.dim() - 1];
          for (int b = 0; b < B; ++b) {
            const float* gyp = gy.data() + static_cast<size_t>(b) * R * C;
            float* gap = ga->data() + static_cast<size_t>(b) * R * C;
            for (int r = 0; r < R; ++r)
              for (int c = 0; c < C; ++c)
                gap[static_cast<size_t>(c) * R + r] += gyp[static_cast<size_t>(r) * C + c];
          }
        }
        break;
      }
      case OpKind::kAvgPool2: {
        const Tensor& a = nodes_[static_cast<size_t>(n.inputs[0])].value;
        auto* ga = acc(n.inputs[0], a.data.size());
        if (ga) {
          const int H = a.shape[2], W = a.shape[3];
          const int planes = a.shape[0] * a.shape[1];
          for (int p = 0; p < planes; ++p) {
            const float* gyp = gy.data() + static_cast<size_t>(p) * (H / 2) * (W / 2);
            float* gap = ga->data() + static_cast<size_t>(p) * H * W;
            for (int i = 0; i < H / 2; ++i)
              for (int j = 0; j < W / 2; ++j) {
                const float v = 0.25f * gyp[static_cast<size_t>(i) * (W / 2) + j];
                gap[static_cast<size_t>(2 * i) * W + 2 * j] += v;
                gap[static_cast<size_t>(2 * i) * W + 2 * j + 1] += v;
                gap[static_cast<size_t>(2 * i + 1) * W + 2 * j] += v;
                gap[static_cast<size_t>(2 * i + 1) * W + 2 * j + 1] += v;
              }
          }
        }
        break;
      }
      case OpKind::kUpsample2: {
        const Tensor& a = nodes_[static_cast<size_t>(n.inputs[0])].value;
        auto* ga = acc(n.inputs[0], a.data.size());
        if (ga) {
          const int H = a.shape[2], W = a.shape[3];
          const int planes = a.shape[0] * a.shape[1];
          for (int p = 0; p < planes; ++p) {
            const float* gyp = gy.data() + static_cast<size_t>(p) * 4 * H * W;
            float* gap = ga->data() + static_cast<size_t>(p) * H * W;
            for (int i = 0; i < H; ++i)
              for (int j = 0; j < W; ++j)
                gap[static_cast<size_t>(i) * W + j] +=
                    gyp[static_cast<size_t>(2 * i) * 2 * W + 2 * j] +
                    gyp[static_cast<size_t>(2 * i) * 2 * W + 2 * j + 1] +
                    gyp[static_cast<size_t>(2 * i + 1) * 2 * W + 2 * j] +
                    gyp[static_cast<size_t>(2 * i + 1) * 2 * W + 2 * j + 1];
          }
        }
        break;
      }
      case OpKind::kFakeQuantAct: {
        auto* gx = acc(n.inputs[0], gy.size());
        auto* gs = acc(n.inputs[1], 1);
        if (gx)
          for (size_t i = 0; i < gy.size(); ++i)
            if (n.fq_in_range[i]) (*gx)[i] += gy[i];
        if (gs) {
          double accu = 0.0;
          for (size_t i = 0; i < gy.size(); ++i) accu += static_cast<double>(gy[i]) * n.fq_scale_coef[i];
          (*gs)[0] += static_cast<float>(accu);
        }
        break;
      }
      case OpKind::kFakeQuantWeight: {
        auto* gx = acc(n.inputs[0], gy.size());
        if (gx)
          for (size_t i = 0; i < gy.size(); ++i)
            if (n.fq_in_range[i]) (*gx)[i] += gy[i];
        break;
      }
    }
  }

  GradientMap result;
  for (size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (n.kind == OpKind::kLeaf && n.requires_grad && !n.name.empty() && !last_grads_[id].empty())
      result.emplace(n.name, Tensor(n.value.shape, last_grads_[id]));
  }
  return result;
}

}  // namespace quest
