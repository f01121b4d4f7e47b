#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "gaisim/tensor.hpp"

namespace gaisim {

class Graph;

/// Handle to one node of a computation record.
struct Var {
  Graph* graph = nullptr;
  int id = -1;
  bool valid() const { return graph != nullptr && id >= 0; }
};

// Fault injection used by the verification harness to prove that broken
// backward rules are caught. Scales conv2d weight gradients when set.
extern bool g_backward_fault_injection;

/// Reverse-mode computation record. Ops append nodes in execution order and
/// are replayed once in reverse by backward(). A graph is single-use: after
/// backward() it refuses further backward calls.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf bound to external storage. Gradients accumulate into t.grad when
  // t.requires_grad is set.
  Var leaf(Tensor& t);
  // Graph-owned constant, never receives gradient.
  Var constant(Tensor value);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, double c);
  Var sum(Var x);
  Var mean(Var x);
  Var relu(Var x);
  Var leaky_relu(Var x, double negative_slope = 0.2);
  Var softmax(Var x);  // along the last axis

  // x [Cin,H,W], w [Cout,Cin,k,k], optional bias [Cout]
  Var conv2d(Var x, Var w, Var b = {}, int stride = 1, int padding = 0, int dilation = 1);
  // x [...,Din], w [Dout,Din], optional bias [Dout]
  Var linear(Var x, Var w, Var b = {});
  Var global_avg_pool(Var x);                       // [C,H,W] -> [C]
  Var bilinear_resize(Var x, int out_h, int out_w); // half-pixel sampling, clamped
  Var matmul(Var a, Var b, bool transpose_b = false);
  Var transpose2d(Var x);
  Var reshape(Var x, std::vector<int> new_shape);
  Var stack_rows(const std::vector<Var>& rows);     // n vectors [C] -> [n,C]
  Var row(Var m, int index);                        // [n,C] -> [C]
  Var slice1d(Var v, int start, int len);
  Var add_outer(Var col, Var row);                  // [n],[n] -> [n,n]: col[i]+row[j]
  // Pairwise attention logits: out[i][j] = att[0:C].uv[i] + att[C:2C].uv[j],
  // evaluated per pair. uv [n,C], att [2C].
  Var gat_pair_logits(Var uv, Var att);
  Var scale_channels(Var x, Var w);                 // [C,H,W] scaled per channel by w [C]
  // Rescales so the mean squared element equals power. All-zero input is
  // passed through unchanged (see power_normalize_hit_zero).
  Var power_normalize(Var z, double power);

  // Mean cross entropy over non-ignored pixels. logits [K,H,W], labels row-major H*W.
  Var softmax_cross_entropy(Var logits, std::vector<int> labels, int ignore_label = -1);
  // Mean absolute error over mask (empty mask = every element).
  Var l1_loss(Var pred, Tensor target, std::vector<std::uint8_t> mask = {});
  // Mean (1 - cosine) between prediction and unit target per pixel; the
  // prediction is normalized with a 1e-8 floor. pred/target [3,H,W].
  Var cosine_loss(Var pred, Tensor target);

  void backward(Var loss);

  const Tensor& val(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  std::int64_t mult_count() const { return mults_; }
  std::int64_t interp_op_count() const { return interp_ops_; }
  bool power_normalize_hit_zero() const { return power_norm_zero_; }

 private:
  enum class Op {
    leaf, constant, add, sub, mul, scale, sum, relu, leaky_relu, softmax,
    conv2d, linear, global_avg_pool, bilinear_resize, matmul, transpose2d,
    reshape, stack_rows, row, slice1d, add_outer, gat_pair_logits, scale_channels,
    power_normalize, softmax_ce, l1_loss, cosine_loss
  };

  struct Node {
    Op op;
    std::vector<int> inputs;
    Tensor value;               // unused for leaf
    Tensor* external = nullptr; // leaf only
    int i0 = 0, i1 = 0, i2 = 0, i3 = 0;
    double d0 = 0.0, d1 = 0.0;
    std::vector<int> ivec;
    std::vector<std::uint8_t> bvec;
    Tensor taux;
  };

  int push(Node n);
  Var wrap(int id) { return Var{this, id}; }
  const Tensor& value_of(int id) const;
  void check_mine(Var v, const char* op) const;
  static const char* op_name(Op op);

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> adj_;
  bool backward_done_ = false;
  bool power_norm_zero_ = false;
  std::int64_t mults_ = 0;
  std::int64_t interp_ops_ = 0;
};

/// Binds external tensors to graph leaves, one leaf per tensor per graph.
class ParamBinder {
 public:
  explicit ParamBinder(Graph& g) : g_(&g) {}
  Var operator()(Tensor& t) {
    auto it = cache_.find(&t);
    if (it != cache_.end()) return it->second;
    Var v = g_->leaf(t);
    cache_.emplace(&t, v);
    return v;
  }

 private:
  Graph* g_;
  std::unordered_map<Tensor*, Var> cache_;
};

/// Central-difference check of a scalar-valued build function. Returns the
/// worst |analytic - numeric| / max(1, |analytic|, |numeric|) over every
/// coordinate of every input.
double grad_check(const std::function<Var(Graph&, std::vector<Var>&)>& build,
                  std::vector<Tensor> point, double eps = 1e-5);

}  // namespace gaisim
