#include "gaisim/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace gaisim {

bool g_backward_fault_injection = false;

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

int conv_out_dim(int in, int k, int stride, int pad, int dil) {
  int span = dil * (k - 1) + 1;
  int num = in + 2 * pad - span;
  require(num >= 0, "conv2d: kernel span exceeds padded input");
  return num / stride + 1;
}

// Half-pixel source coordinate, clamped to the valid range.
double sample_coord(int dst, int out_size, int in_size) {
  double s = (dst + 0.5) * (static_cast<double>(in_size) / out_size) - 0.5;
  if (s < 0.0) s = 0.0;
  double hi = static_cast<double>(in_size - 1);
  if (s > hi) s = hi;
  return s;
}

}  // namespace

const char* Graph::op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::constant: return "constant";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::scale: return "scale";
    case Op::sum: return "sum";
    case Op::relu: return "relu";
    case Op::leaky_relu: return "leaky_relu";
    case Op::softmax: return "softmax";
    case Op::conv2d: return "conv2d";
    case Op::linear: return "linear";
    case Op::global_avg_pool: return "global_avg_pool";
    case Op::bilinear_resize: return "bilinear_resize";
    case Op::matmul: return "matmul";
    case Op::transpose2d: return "transpose2d";
    case Op::reshape: return "reshape";
    case Op::stack_rows: return "stack_rows";
    case Op::row: return "row";
    case Op::slice1d: return "slice1d";
    case Op::add_outer: return "add_outer";
    case Op::gat_pair_logits: return "gat_pair_logits";
    case Op::scale_channels: return "scale_channels";
    case Op::power_normalize: return "power_normalize";
    case Op::softmax_ce: return "softmax_cross_entropy";
    case Op::l1_loss: return "l1_loss";
    case Op::cosine_loss: return "cosine_loss";
  }
  return "?";
}

void Graph::check_mine(Var v, const char* op) const {
  require(v.graph == this && v.id >= 0 && v.id < static_cast<int>(nodes_.size()),
          std::string(op) + ": variable does not belong to this graph");
}

const Tensor& Graph::value_of(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.op == Op::leaf ? *n.external : n.value;
}

const Tensor& Graph::val(Var v) const {
  check_mine(v, "val");
  return value_of(v.id);
}

int Graph::push(Node n) {
  if (n.op != Op::leaf) {
    if (!n.value.all_finite())
      throw std::runtime_error(std::string("non-finite value produced by ") + op_name(n.op));
  } else if (!n.external->all_finite()) {
    throw std::runtime_error("non-finite leaf value");
  }
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Var Graph::leaf(Tensor& t) {
  require(!t.shape.empty() && t.numel() == shape_numel(t.shape), "leaf: tensor not initialized");
  Node n;
  n.op = Op::leaf;
  n.external = &t;
  return wrap(push(std::move(n)));
}

Var Graph::constant(Tensor value) {
  Node n;
  n.op = Op::constant;
  n.value = std::move(value);
  return wrap(push(std::move(n)));
}

Var Graph::add(Var a, Var b) {
  check_mine(a, "add");
  check_mine(b, "add");
  const Tensor& ta = value_of(a.id);
  const Tensor& tb = value_of(b.id);
  require(same_shape(ta, tb), "add: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  Node n;
  n.op = Op::add;
  n.inputs = {a.id, b.id};
  n.value = Tensor(ta.shape);
  for (std::size_t i = 0; i < ta.data.size(); ++i) n.value.data[i] = ta.data[i] + tb.data[i];
  return wrap(push(std::move(n)));
}

Var Graph::sub(Var a, Var b) {
  check_mine(a, "sub");
  check_mine(b, "sub");
  const Tensor& ta = value_of(a.id);
  const Tensor& tb = value_of(b.id);
  require(same_shape(ta, tb), "sub: shape mismatch");
  Node n;
  n.op = Op::sub;
  n.inputs = {a.id, b.id};
  n.value = Tensor(ta.shape);
  for (std::size_t i = 0; i < ta.data.size(); ++i) n.value.data[i] = ta.data[i] - tb.data[i];
  return wrap(push(std::move(n)));
}

Var Graph::mul(Var a, Var b) {
  check_mine(a, "mul");
  check_mine(b, "mul");
  const Tensor& ta = value_of(a.id);
  const Tensor& tb = value_of(b.id);
  require(same_shape(ta, tb), "mul: shape mismatch");
  Node n;
  n.op = Op::mul;
  n.inputs = {a.id, b.id};
  n.value = Tensor(ta.shape);
  for (std::size_t i = 0; i < ta.data.size(); ++i) n.value.data[i] = ta.data[i] * tb.data[i];
  mults_ += ta.numel();
  return wrap(push(std::move(n)));
}

Var Graph::scale(Var x, double c) {
  check_mine(x, "scale");
  const Tensor& tx = value_of(x.id);
  Node n;
  n.op = Op::scale;
  n.inputs = {x.id};
  n.d0 = c;
  n.value = Tensor(tx.shape);
  for (std::size_t i = 0; i < tx.data.size(); ++i) n.value.data[i] = tx.data[i] * c;
  mults_ += tx.numel();
  return wrap(push(std::move(n)));
}

Var Graph::sum(Var x) {
  check_mine(x, "sum");
  const Tensor& tx = value_of(x.id);
  double acc = 0.0;
  for (double v : tx.data) acc += v;
  Node n;
  n.op = Op::sum;
  n.inputs = {x.id};
  n.value = Tensor::scalar(acc);
  return wrap(push(std::move(n)));
}

Var Graph::mean(Var x) {
  check_mine(x, "mean");
  return scale(sum(x), 1.0 / static_cast<double>(value_of(x.id).numel()));
}

Var Graph::relu(Var x) {
  check_mine(x, "relu");
  const Tensor& tx = value_of(x.id);
  Node n;
  n.op = Op::relu;
  n.inputs = {x.id};
  n.value = Tensor(tx.shape);
  for (std::size_t i = 0; i < tx.data.size(); ++i) n.value.data[i] = tx.data[i] > 0.0 ? tx.data[i] : 0.0;
  return wrap(push(std::move(n)));
}

Var Graph::leaky_relu(Var x, double negative_slope) {
  check_mine(x, "leaky_relu");
  const Tensor& tx = value_of(x.id);
  Node n;
  n.op = Op::leaky_relu;
  n.inputs = {x.id};
  n.d0 = negative_slope;
  n.value = Tensor(tx.shape);
  for (std::size_t i = 0; i < tx.data.size(); ++i) {
    double v = tx.data[i];
    if (v >= 0.0) {
      n.value.data[i] = v;
    } else {
      n.value.data[i] = negative_slope * v;
      ++mults_;
    }
  }
  return wrap(push(std::move(n)));
}

Var Graph::softmax(Var x) {
  check_mine(x, "softmax");
  const Tensor& tx = value_of(x.id);
  require(tx.ndim() >= 1, "softmax: needs at least one axis");
  int k = tx.shape.back();
  std::int64_t rows = tx.numel() / k;
  Node n;
  n.op = Op::softmax;
  n.inputs = {x.id};
  n.value = Tensor(tx.shape);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* in = tx.data.data() + r * k;
    double* out = n.value.data.data() + r * k;
    double m = in[0];
    for (int i = 1; i < k; ++i) m = std::max(m, in[i]);
    double z = 0.0;
    for (int i = 0; i < k; ++i) {
      out[i] = std::exp(in[i] - m);
      z += out[i];
    }
    for (int i = 0; i < k; ++i) out[i] /= z;
  }
  return wrap(push(std::move(n)));
}

Var Graph::conv2d(Var x, Var w, Var b, int stride, int padding, int dilation) {
  check_mine(x, "conv2d");
  check_mine(w, "conv2d");
  const Tensor& tx = value_of(x.id);
  const Tensor& tw = value_of(w.id);
  require(tx.ndim() == 3, "conv2d: input must be [C,H,W], got " + shape_str(tx.shape));
  require(tw.ndim() == 4 && tw.shape[2] == tw.shape[3], "conv2d: weight must be [Co,Ci,k,k]");
  require(tw.shape[1] == tx.shape[0], "conv2d: channel mismatch " + shape_str(tx.shape) + " vs " + shape_str(tw.shape));
  require(stride >= 1 && padding >= 0 && dilation >= 1, "conv2d: bad stride/padding/dilation");
  int cin = tx.shape[0], h = tx.shape[1], wdt = tx.shape[2];
  int cout = tw.shape[0], k = tw.shape[2];
  int oh = conv_out_dim(h, k, stride, padding, dilation);
  int ow = conv_out_dim(wdt, k, stride, padding, dilation);
  const double* bias = nullptr;
  if (b.valid()) {
    check_mine(b, "conv2d");
    const Tensor& tb = value_of(b.id);
    require(tb.ndim() == 1 && tb.shape[0] == cout, "conv2d: bias must be [Cout]");
    bias = tb.data.data();
  }
  Node n;
  n.op = Op::conv2d;
  n.inputs = b.valid() ? std::vector<int>{x.id, w.id, b.id} : std::vector<int>{x.id, w.id};
  n.i0 = stride;
  n.i1 = padding;
  n.i2 = dilation;
  n.value = Tensor({cout, oh, ow});
  for (int co = 0; co < cout; ++co) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = bias ? bias[co] : 0.0;
        for (int ci = 0; ci < cin; ++ci) {
          for (int ky = 0; ky < k; ++ky) {
            int iy = oy * stride - padding + ky * dilation;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              int ix = ox * stride - padding + kx * dilation;
              if (ix < 0 || ix >= wdt) continue;
              acc += tx.at3(ci, iy, ix) * tw.data[((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx];
            }
          }
        }
        n.value.at3(co, oy, ox) = acc;
      }
    }
  }
  mults_ += static_cast<std::int64_t>(cout) * oh * ow * cin * k * k;
  return wrap(push(std::move(n)));
}

Var Graph::linear(Var x, Var w, Var b) {
  check_mine(x, "linear");
  check_mine(w, "linear");
  const Tensor& tx = value_of(x.id);
  const Tensor& tw = value_of(w.id);
  require(tw.ndim() == 2, "linear: weight must be [Dout,Din]");
  require(tx.ndim() >= 1 && tx.shape.back() == tw.shape[1],
          "linear: input " + shape_str(tx.shape) + " vs weight " + shape_str(tw.shape));
  int din = tw.shape[1], dout = tw.shape[0];
  std::int64_t rows = tx.numel() / din;
  const double* bias = nullptr;
  if (b.valid()) {
    check_mine(b, "linear");
    const Tensor& tb = value_of(b.id);
    require(tb.ndim() == 1 && tb.shape[0] == dout, "linear: bias must be [Dout]");
    bias = tb.data.data();
  }
  std::vector<int> oshape(tx.shape.begin(), tx.shape.end() - 1);
  oshape.push_back(dout);
  Node n;
  n.op = Op::linear;
  n.inputs = b.valid() ? std::vector<int>{x.id, w.id, b.id} : std::vector<int>{x.id, w.id};
  n.value = Tensor(oshape);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* in = tx.data.data() + r * din;
    double* out = n.value.data.data() + r * dout;
    for (int o = 0; o < dout; ++o) {
      double acc = bias ? bias[o] : 0.0;
      const double* wr = tw.data.data() + static_cast<std::size_t>(o) * din;
      for (int i = 0; i < din; ++i) acc += wr[i] * in[i];
      out[o] = acc;
    }
  }
  mults_ += rows * dout * din;
  return wrap(push(std::move(n)));
}

Var Graph::global_avg_pool(Var x) {
  check_mine(x, "global_avg_pool");
  const Tensor& tx = value_of(x.id);
  require(tx.ndim() == 3, "global_avg_pool: input must be [C,H,W]");
  int c = tx.shape[0];
  std::int64_t hw = static_cast<std::int64_t>(tx.shape[1]) * tx.shape[2];
  Node n;
  n.op = Op::global_avg_pool;
  n.inputs = {x.id};
  n.value = Tensor({c});
  for (int ci = 0; ci < c; ++ci) {
    const double* in = tx.data.data() + ci * hw;
    double acc = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) acc += in[i];
    n.value.data[static_cast<std::size_t>(ci)] = acc / static_cast<double>(hw);
  }
  return wrap(push(std::move(n)));
}

Var Graph::bilinear_resize(Var x, int out_h, int out_w) {
  check_mine(x, "bilinear_resize");
  const Tensor& tx = value_of(x.id);
  require(tx.ndim() == 3, "bilinear_resize: input must be [C,H,W]");
  require(out_h >= 1 && out_w >= 1, "bilinear_resize: bad output size");
  int c = tx.shape[0], h = tx.shape[1], w = tx.shape[2];
  Node n;
  n.op = Op::bilinear_resize;
  n.inputs = {x.id};
  n.i0 = out_h;
  n.i1 = out_w;
  n.value = Tensor({c, out_h, out_w});
  for (int ci = 0; ci < c; ++ci) {
    for (int oy = 0; oy < out_h; ++oy) {
      double sy = sample_coord(oy, out_h, h);
      int y0 = static_cast<int>(sy);
      int y1 = std::min(y0 + 1, h - 1);
      double fy = sy - y0;
      for (int ox = 0; ox < out_w; ++ox) {
        double sx = sample_coord(ox, out_w, w);
        int x0 = static_cast<int>(sx);
        int x1 = std::min(x0 + 1, w - 1);
        double fx = sx - x0;
        // two lerps per axis: nine scalar ops per output sample
        double top = tx.at3(ci, y0, x0) + fx * (tx.at3(ci, y0, x1) - tx.at3(ci, y0, x0));
        double bot = tx.at3(ci, y1, x0) + fx * (tx.at3(ci, y1, x1) - tx.at3(ci, y1, x0));
        n.value.at3(ci, oy, ox) = top + fy * (bot - top);
      }
    }
  }
  mults_ += static_cast<std::int64_t>(c) * out_h * out_w * 3;
  interp_ops_ += static_cast<std::int64_t>(c) * out_h * out_w * 9;
  return wrap(push(std::move(n)));
}

Var Graph::matmul(Var a, Var b, bool transpose_b) {
  check_mine(a, "matmul");
  check_mine(b, "matmul");
  const Tensor& ta = value_of(a.id);
  const Tensor& tb = value_of(b.id);
  require(ta.ndim() == 2 && tb.ndim() == 2, "matmul: both inputs must be 2-d");
  int n_ = ta.shape[0], k = ta.shape[1];
  int bk = transpose_b ? tb.shape[1] : tb.shape[0];
  int m = transpose_b ? tb.shape[0] : tb.shape[1];
  require(bk == k, "matmul: inner dims " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  Node nd;
  nd.op = Op::matmul;
  nd.inputs = {a.id, b.id};
  nd.i0 = transpose_b ? 1 : 0;
  nd.value = Tensor({n_, m});
  for (int i = 0; i < n_; ++i) {
    for (int j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t)
        acc += ta.at2(i, t) * (transpose_b ? tb.at2(j, t) : tb.at2(t, j));
      nd.value.at2(i, j) = acc;
    }
  }
  mults_ += static_cast<std::int64_t>(n_) * m * k;
  return wrap(push(std::move(nd)));
}

Var Graph::transpose2d(Var x) {
  check_mine(x, "transpose2d");
  const Tensor& tx = value_of(x.id);
  require(tx.ndim() == 2, "transpose2d: input must be 2-d");
  Node n;
  n.op = Op::transpose2d;
  n.inputs = {x.id};
  n.value = Tensor({tx.shape[1], tx.shape[0]});
  for (int i = 0; i < tx.shape[0]; ++i)
    for (int j = 0; j < tx.shape[1]; ++j) n.value.at2(j, i) = tx.at2(i, j);
  return wrap(push(std::move(n)));
}

Var Graph::reshape(Var x, std::vector<int> new_shape) {
  check_mine(x, "reshape");
  const Tensor& tx = value_of(x.id);
  require(shape_numel(new_shape) == tx.numel(),
          "reshape: " + shape_str(tx.shape) + " to " + shape_str(new_shape) + " changes element count");
  Node n;
  n.op = Op::reshape;
  n.inputs = {x.id};
  n.value.shape = std::move(new_shape);
  n.value.data = tx.data;
  return wrap(push(std::move(n)));
}

Var Graph::stack_rows(const std::vector<Var>& rows) {
  require(!rows.empty(), "stack_rows: no rows");
  int c = -1;
  for (Var r : rows) {
    check_mine(r, "stack_rows");
    const Tensor& t = value_of(r.id);
    require(t.ndim() == 1, "stack_rows: rows must be 1-d");
    if (c < 0) c = t.shape[0];
    require(t.shape[0] == c, "stack_rows: row length mismatch");
  }
  Node n;
  n.op = Op::stack_rows;
  for (Var r : rows) n.inputs.push_back(r.id);
  n.value = Tensor({static_cast<int>(rows.size()), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor& t = value_of(rows[i].id);
    std::copy(t.data.begin(), t.data.end(), n.value.data.begin() + static_cast<std::int64_t>(i) * c);
  }
  return wrap(push(std::move(n)));
}

Var Graph::row(Var m, int index) {
  check_mine(m, "row");
  const Tensor& tm = value_of(m.id);
  require(tm.ndim() == 2, "row: input must be 2-d");
  require(index >= 0 && index < tm.shape[0], "row: index out of range");
  Node n;
  n.op = Op::row;
  n.inputs = {m.id};
  n.i0 = index;
  n.value = Tensor({tm.shape[1]});
  for (int j = 0; j < tm.shape[1]; ++j) n.value.data[static_cast<std::size_t>(j)] = tm.at2(index, j);
  return wrap(push(std::move(n)));
}

Var Graph::slice1d(Var v, int start, int len) {
  check_mine(v, "slice1d");
  const Tensor& tv = value_of(v.id);
  require(tv.ndim() == 1, "slice1d: input must be 1-d");
  require(start >= 0 && len >= 1 && start + len <= tv.shape[0], "slice1d: range out of bounds");
  Node n;
  n.op = Op::slice1d;
  n.inputs = {v.id};
  n.i0 = start;
  n.i1 = len;
  n.value = Tensor({len});
  for (int i = 0; i < len; ++i) n.value.data[static_cast<std::size_t>(i)] = tv.data[static_cast<std::size_t>(start + i)];
  return wrap(push(std::move(n)));
}

Var Graph::add_outer(Var col, Var rw) {
  check_mine(col, "add_outer");
  check_mine(rw, "add_outer");
  const Tensor& tc = value_of(col.id);
  const Tensor& tr = value_of(rw.id);
  require(tc.ndim() == 1 && tr.ndim() == 1 && tc.shape[0] == tr.shape[0], "add_outer: inputs must be equal-length vectors");
  int n_ = tc.shape[0];
  Node n;
  n.op = Op::add_outer;
  n.inputs = {col.id, rw.id};
  n.value = Tensor({n_, n_});
  for (int i = 0; i < n_; ++i)
    for (int j = 0; j < n_; ++j) n.value.at2(i, j) = tc.data[static_cast<std::size_t>(i)] + tr.data[static_cast<std::size_t>(j)];
  return wrap(push(std::move(n)));
}

Var Graph::gat_pair_logits(Var uv, Var att) {
  check_mine(uv, "gat_pair_logits");
  check_mine(att, "gat_pair_logits");
  const Tensor& tv = value_of(uv.id);
  const Tensor& ta = value_of(att.id);
  require(tv.ndim() == 2, "gat_pair_logits: states must be [N,C]");
  require(ta.ndim() == 1 && ta.shape[0] == 2 * tv.shape[1], "gat_pair_logits: attention vector must have length 2C");
  int n_ = tv.shape[0], c = tv.shape[1];
  Node n;
  n.op = Op::gat_pair_logits;
  n.inputs = {uv.id, att.id};
  n.value = Tensor({n_, n_});
  for (int i = 0; i < n_; ++i) {
    for (int j = 0; j < n_; ++j) {
      double acc = 0.0;
      for (int t = 0; t < c; ++t) acc += ta.data[static_cast<std::size_t>(t)] * tv.at2(i, t);
      for (int t = 0; t < c; ++t) acc += ta.data[static_cast<std::size_t>(c + t)] * tv.at2(j, t);
      n.value.at2(i, j) = acc;
    }
  }
  mults_ += static_cast<std::int64_t>(n_) * n_ * 2 * c;
  return wrap(push(std::move(n)));
}

Var Graph::scale_channels(Var x, Var w) {
  check_mine(x, "scale_channels");
  check_mine(w, "scale_channels");
  const Tensor& tx = value_of(x.id);
  const Tensor& tw = value_of(w.id);
  require(tx.ndim() == 3, "scale_channels: input must be [C,H,W]");
  require(tw.ndim() == 1 && tw.shape[0] == tx.shape[0], "scale_channels: weights must be [C]");
  std::int64_t hw = static_cast<std::int64_t>(tx.shape[1]) * tx.shape[2];
  Node n;
  n.op = Op::scale_channels;
  n.inputs = {x.id, w.id};
  n.value = Tensor(tx.shape);
  for (int c = 0; c < tx.shape[0]; ++c) {
    double s = tw.data[static_cast<std::size_t>(c)];
    const double* in = tx.data.data() + c * hw;
    double* out = n.value.data.data() + c * hw;
    for (std::int64_t i = 0; i < hw; ++i) out[i] = in[i] * s;
  }
  mults_ += tx.numel();
  return wrap(push(std::move(n)));
}

Var Graph::power_normalize(Var z, double power) {
  check_mine(z, "power_normalize");
  require(power > 0.0, "power_normalize: power must be positive");
  const Tensor& tz = value_of(z.id);
  double q = 0.0;
  for (double v : tz.data) q += v * v;
  mults_ += tz.numel();
  Node n;
  n.op = Op::power_normalize;
  n.inputs = {z.id};
  n.value = Tensor(tz.shape);
  if (q == 0.0) {
    power_norm_zero_ = true;
    n.d0 = 1.0;
    n.d1 = 0.0;
    n.value.data = tz.data;
    return wrap(push(std::move(n)));
  }
  double s = std::sqrt(power * static_cast<double>(tz.numel()) / q);
  n.d0 = s;
  n.d1 = q;
  for (std::size_t i = 0; i < tz.data.size(); ++i) n.value.data[i] = tz.data[i] * s;
  mults_ += tz.numel();
  return wrap(push(std::move(n)));
}

Var Graph::softmax_cross_entropy(Var logits, std::vector<int> labels, int ignore_label) {
  check_mine(logits, "softmax_cross_entropy");
  const Tensor& tl = value_of(logits.id);
  require(tl.ndim() == 3, "softmax_cross_entropy: logits must be [K,H,W]");
  int k = tl.shape[0];
  std::int64_t hw = static_cast<std::int64_t>(tl.shape[1]) * tl.shape[2];
  require(static_cast<std::int64_t>(labels.size()) == hw, "softmax_cross_entropy: label count mismatch");
  std::int64_t valid = 0;
  double loss = 0.0;
  for (std::int64_t p = 0; p < hw; ++p) {
    int lab = labels[static_cast<std::size_t>(p)];
    if (lab == ignore_label) continue;
    require(lab >= 0 && lab < k, "softmax_cross_entropy: label out of range");
    double m = tl.data[static_cast<std::size_t>(p)];
    for (int c = 1; c < k; ++c) m = std::max(m, tl.data[static_cast<std::size_t>(c * hw + p)]);
    double z = 0.0;
    for (int c = 0; c < k; ++c) z += std::exp(tl.data[static_cast<std::size_t>(c * hw + p)] - m);
    loss += std::log(z) + m - tl.data[static_cast<std::size_t>(lab * hw + p)];
    ++valid;
  }
  require(valid > 0, "softmax_cross_entropy: every pixel ignored");
  Node n;
  n.op = Op::softmax_ce;
  n.inputs = {logits.id};
  n.i0 = ignore_label;
  n.ivec = std::move(labels);
  n.value = Tensor::scalar(loss / static_cast<double>(valid));
  return wrap(push(std::move(n)));
}

Var Graph::l1_loss(Var pred, Tensor target, std::vector<std::uint8_t> mask) {
  check_mine(pred, "l1_loss");
  const Tensor& tp = value_of(pred.id);
  require(same_shape(tp, target), "l1_loss: shape mismatch");
  require(mask.empty() || static_cast<std::int64_t>(mask.size()) == tp.numel(), "l1_loss: mask size mismatch");
  std::int64_t count = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < tp.data.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    loss += std::abs(tp.data[i] - target.data[i]);
    ++count;
  }
  require(count > 0, "l1_loss: empty mask");
  Node n;
  n.op = Op::l1_loss;
  n.inputs = {pred.id};
  n.taux = std::move(target);
  n.bvec = std::move(mask);
  n.value = Tensor::scalar(loss / static_cast<double>(count));
  return wrap(push(std::move(n)));
}

Var Graph::cosine_loss(Var pred, Tensor target) {
  check_mine(pred, "cosine_loss");
  const Tensor& tp = value_of(pred.id);
  require(tp.ndim() == 3 && tp.shape[0] == 3, "cosine_loss: prediction must be [3,H,W]");
  require(same_shape(tp, target), "cosine_loss: shape mismatch");
  const double eps = 1e-8;
  std::int64_t hw = static_cast<std::int64_t>(tp.shape[1]) * tp.shape[2];
  double loss = 0.0;
  for (std::int64_t p = 0; p < hw; ++p) {
    double px = tp.data[static_cast<std::size_t>(p)];
    double py = tp.data[static_cast<std::size_t>(hw + p)];
    double pz = tp.data[static_cast<std::size_t>(2 * hw + p)];
    double gx = target.data[static_cast<std::size_t>(p)];
    double gy = target.data[static_cast<std::size_t>(hw + p)];
    double gz = target.data[static_cast<std::size_t>(2 * hw + p)];
    double norm = std::sqrt(px * px + py * py + pz * pz);
    double denom = std::max(norm, eps);
    loss += 1.0 - (px * gx + py * gy + pz * gz) / denom;
  }
  mults_ += hw * 6;
  Node n;
  n.op = Op::cosine_loss;
  n.inputs = {pred.id};
  n.taux = std::move(target);
  n.value = Tensor::scalar(loss / static_cast<double>(hw));
  return wrap(push(std::move(n)));
}

void Graph::backward(Var loss) {
  check_mine(loss, "backward");
  if (backward_done_) throw std::runtime_error("backward: graph already consumed");
  const Tensor& tl = value_of(loss.id);
  if (tl.numel() != 1) throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(tl.shape));
  backward_done_ = true;

  adj_.assign(nodes_.size(), {});
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    adj_[i].assign(static_cast<std::size_t>(value_of(static_cast<int>(i)).numel()), 0.0);
  adj_[static_cast<std::size_t>(loss.id)][0] = 1.0;

  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const std::vector<double>& g = adj_[static_cast<std::size_t>(id)];
    switch (n.op) {
      case Op::leaf: {
        if (n.external->requires_grad) {
          n.external->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) n.external->grad[i] += g[i];
        }
        break;
      }
      case Op::constant:
        break;
      case Op::add: {
        std::vector<double>& ga = adj_[static_cast<std::size_t>(n.inputs[0])];
        std::vector<double>& gb = adj_[static_cast<std::size_t>(n.inputs[1])];
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] += g[i];
        }
        break;
      }
      case Op::sub: {
        std::vector<double>& ga = adj_[static_cast<std::size_t>(n.inputs[0])];
        std::vector<double>& gb = adj_[static_cast<std::size_t>(n.inputs[1])];
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] -= g[i];
        }
        break;
      }
      case Op::mul: {
        const Tensor& ta = value_of(n.inputs[0]);
        const Tensor& tb = value_of(n.inputs[1]);
        std::vector<double>& ga = adj_[static_cast<std::size_t>(n.inputs[0])];
        std::vector<double>& gb = adj_[static_cast<std::size_t>(n.inputs[1])];
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * tb.data[i];
          gb[i] += g[i] * ta.data[i];
        }
        break;
      }
      case Op::scale: {
        std::vector<double>& gx = adj_[static_cast<std::size_t>(n.inputs[0])];
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * n.d0;
        break;
      }
      case Op::sum: {
        std::vector<double>& gx = adj_[static_cast<std::size_t>(n.inputs[0])];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
        break;
      }
      case Op::relu: {
        const Tensor& tx = value_of(n.inputs[0]);
        std::vector<double>& gx = adj_[static_cast<std::size_t>(n.inputs[0])];
        for (std::size_t i = 0; i < g.size(); ++i)
          if (tx.data[i] >= 0.0) gx[i] += g[i];
        break;
      }
      case Op::leaky_relu: {
        const Tensor& tx = value_of(n.inputs[0]);
        std::vector<double>& gx = adj_[static_cast<std::size_t>(n.inputs[0])];
        for (std::size_t i = 0; i < g.size(); ++i)
          gx[i] += g[i] * (tx.data[i] >= 0.0 ? 1.0 : n.d0);
        break;
      }
      case Op::softmax: {
        const Tensor& ty = n.value;
        std::vector<double>& gx = adj_[static_cast<std::size_t>(n.inputs[0])];
        int k = ty.shape.back();
        std::int64_t rows = ty.numel() / k;
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* y = ty.data.data() + r * k;
          const double* gr = g.data() + r * k;
          double dot = 0.0;
          for (int i = 0; i < k; ++i) dot += gr[i] * y[i];
          for (int i = 0; i < k; ++i) gx[static_cast<std::size_t>(r * k + i)] += y[i] * (gr[i] - dot);
        }
        break;
      }
      case Op::conv2d: {
        const Tensor& tx = value_of(n.inputs[0]);
        const Tensor& tw = value_of(n.inputs[1]);
        std::vector<double>& gx = adj_[static_cast<std::size_t>(n.inputs[0])];
        std::vector<double>& gw = adj_[static_cast<std::size_t>(n.inputs[1])];
        int stride = n.i0, pad = n.i1, dil = n.i2;
        int cin = tx.shape[0], h = tx.shape[1], wdt = tx.shape[2];
        int cout = n.value.shape[0], oh = n.value.shape[1], ow = n.value.shape[2];
        int k = tw.shape[2];
        for (int co = 0; co < cout; ++co) {
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              double go = g[(static_cast<std::size_t>(co) * oh + oy) * ow + ox];
              if (go == 0.0) continue;
              for (int ci = 0; ci < cin; ++ci) {
                for (int ky = 0; ky < k; ++ky) {
                  int iy = oy * stride - pad + ky * dil;
                  if (iy < 0 || iy >= h) continue;
                  for (int kx = 0; kx < k; ++kx) {
                    int ix = ox * stride - pad + kx * dil;
                    if (ix < 0 || ix >= wdt) continue;
                    std::size_t wi = ((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx;
                    std::size_t xi = (static_cast<std::size_t>(ci) * h + iy) * wdt + ix;
                    gx[xi] += go * tw.data[wi];
                    gw[wi] += go * tx.data[xi];
                  }
                }
              }
            }
          }
        }
        if (g_backward_fault_injection)
          for (double& v : gw) v *= 1.001;
        if (n.inputs.size() == 3) {
          std::vector<double>& gb = adj_[static_cast<std::size_t>(n.inputs[2])];
          for (int co = 0; co < cout; ++co) {
            double acc = 0.0;
            const double* gp = g.data() + static_cast<std::size_t>(co) * oh * ow;
            for (int i = 0; i < oh * ow; ++i) acc += gp[i];
            gb[static_cast<std::size_t>(co)] += acc;
          }
        }
        break;
      }
      case Op::linear: {
        const Tensor& tx = value_of(n.inputs[0]);
        const Tensor& tw = value_of(n.inputs[1]);
        std::vector<double>& gx = adj_[static_cast<std::size_t>(n.inputs[0])];
        std::vector<double>& gw = adj_[static_cast<std::size_t>(n.inputs[1])];
        int din = tw.shape[1], dout = tw.shape[0];
        std::int64_t rows = tx.numel() / din;
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* in = tx.data.data() + r * din;
          const double* gr = g.data() + r * dout;
          double* gxr = gx.data() + r * din;
          for (int o = 0; o < dout; ++o) {
            double go = gr[o];
            if (go == 0.0) continue;
            const double* wr = tw.data.data() + static_cast<std::size_t>(o) * din;
            double* gwr = gw.data() + static_cast<std::size_t>(o) * din;
            for (int i = 0; i < din; ++i) {
              gxr[i] += go * wr[i];
              gwr[i] += go * in[i];
            }
          }
        }
        if (n.inputs.size() == 3) {
          std::vector<double>& gb = adj_[static_cast<std::size_t>(n.inputs[2])];
          for (std::int64_t r = 0; r < rows; ++r)
            for (int o = 0; o < dout; ++o) gb[static_cast<std::size_t>(o)] += g[static_cast<std::size_t>(r * dout + o)];
        }
        break;
      }
      case Op::global_avg_pool: {
        const Tensor& tx = value_of(n.inputs[0]);
        std::vector<double>& gx = adj_[static_cast<std::size_t>(n.inputs[0])];
        std::int64_t hw = static_cast<std::int64_t>(tx.shape[1]) * tx.shape[2];
        for (int c = 0; c < tx.shape[0]; ++c) {
          double gc = g[static_cast<std::size_t>(c)] / static_cast<double>(hw);
          double* gp = gx.data() + c * hw;
          for (std::int64_t i = 0; i < hw; ++i) gp[i] += gc;
        }
        break;
      }
      case Op::bilinear_resize: {
        const Tensor& tx = value_of(n.inputs[0]);
        std::vector<double>& gx = adj_[static_cast<std::size_t>(n.inputs[0])];
        int c = tx.shape[0], h = tx.shape[1], w = tx.shape[2];
        int oh = n.i0, ow = n.i1;
        for (int ci = 0; ci < c; ++ci) {
          for (int oy = 0; oy < oh; ++oy) {
            double sy = sample_coord(oy, oh, h);
            int y0 = static_cast<int>(sy);
            int y1 = std::min(y0 + 1, h - 1);
            double fy = sy - y0;
            for (int ox = 0; ox < ow; ++ox) {
              double sx = sample_coord(ox, ow, w);
              int x0 = static_cast<int>(sx);
              int x1 = std::min(x0 + 1, w - 1);
              double fx = sx - x0;
              double go = g[(static_cast<std::size_t>(ci) * oh + oy) * ow + ox];
              gx[(static_cast<std::size_t>(ci) * h + y0) * w + x0] += go * (1.0 - fy) * (1.0 - fx);
              gx[(static_cast<std::size_t>(ci) * h + y0) * w + x1] += go * (1.0 - fy) * fx;
              gx[(static_cast<std::size_t>(ci) * h + y1) * w + x0] += go * fy * (1.0 - fx);
              gx[(static_cast<std::size_t>(ci) * h + y1) * w + x1] += go * fy * fx;
            }
          }
        }
        break;
      }
      case Op::matmul: {
        const Tensor& ta = value_of(n.inputs[0]);
        const Tensor& tb = value_of(n.inputs[1]);
        std::vector<double>& ga = adj_[static_cast<std::size_t>(n.inputs[0])];
        std::vector<double>& gb = adj_[static_cast<std::size_t>(n.inputs[1])];
        bool trb = n.i0 != 0;
        int rows = n.value.shape[0], cols = n.value.shape[1], k = ta.shape[1];
        for (int i = 0; i < rows; ++i) {
          for (int j = 0; j < cols; ++j) {
            double go = g[static_cast<std::size_t>(i) * cols + j];
            if (go == 0.0) continue;
            for (int t = 0; t < k; ++t) {
              ga[static_cast<std::size_t>(i) * k + t] += go * (trb ? tb.at2(j, t) : tb.at2(t, j));
              if (trb)
                gb[static_cast<std::size_t>(j) * k + t] += go * ta.at2(i, t);
              else
                gb[static_cast<std::size_t>(t) * cols + j] += go * ta.at2(i, t);
            }
          }
        }
        break;
      }
      case Op::transpose2d: {
        const Tensor& tx = value_of(n.inputs[0]);
        std::vector<double>& gx = adj_[static_cast<std::size_t>(n.inputs[0])];
        int r = tx.shape[0], c = tx.shape[1];
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) gx[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j) * r + i];
        break;
      }
      case Op::reshape: {
        std::vector<double>& gx = adj_[static_cast<std::size_t>(n.inputs[0])];
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        break;
      }
      case Op::stack_rows: {
        int c = n.value.shape[1];
        for (std::size_t r = 0; r < n.inputs.size(); ++r) {
          std::vector<double>& gr = adj_[static_cast<std::size_t>(n.inputs[r])];
          for (int j = 0; j < c; ++j) gr[static_cast<std::size_t>(j)] += g[r * static_cast<std::size_t>(c) + j];
        }
        break;
      }
      case Op::row: {
        const Tensor& tm = value_of(n.inputs[0]);
        std::vector<double>& gm = adj_[static_cast<std::size_t>(n.inputs[0])];
        int c = tm.shape[1];
        for (int j = 0; j < c; ++j) gm[static_cast<std::size_t>(n.i0) * c + j] += g[static_cast<std::size_t>(j)];
        break;
      }
      case Op::slice1d: {
        std::vector<double>& gv = adj_[static_cast<std::size_t>(n.inputs[0])];
        for (int i = 0; i < n.i1; ++i) gv[static_cast<std::size_t>(n.i0 + i)] += g[static_cast<std::size_t>(i)];
        break;
      }
      case Op::add_outer: {
        std::vector<double>& gc = adj_[static_cast<std::size_t>(n.inputs[0])];
        std::vector<double>& gr = adj_[static_cast<std::size_t>(n.inputs[1])];
        int n_ = n.value.shape[0];
        for (int i = 0; i < n_; ++i) {
          for (int j = 0; j < n_; ++j) {
            double go = g[static_cast<std::size_t>(i) * n_ + j];
            gc[static_cast<std::size_t>(i)] += go;
            gr[static_cast<std::size_t>(j)] += go;
          }
        }
        break;
      }
      case Op::gat_pair_logits: {
        const Tensor& tv = value_of(n.inputs[0]);
        const Tensor& ta = value_of(n.inputs[1]);
        std::vector<double>& gv = adj_[static_cast<std::size_t>(n.inputs[0])];
        std::vector<double>& gat = adj_[static_cast<std::size_t>(n.inputs[1])];
        int n_ = tv.shape[0], c = tv.shape[1];
        for (int i = 0; i < n_; ++i) {
          for (int j = 0; j < n_; ++j) {
            double go = g[static_cast<std::size_t>(i) * n_ + j];
            if (go == 0.0) continue;
            for (int t = 0; t < c; ++t) {
              gv[static_cast<std::size_t>(i) * c + t] += go * ta.data[static_cast<std::size_t>(t)];
              gv[static_cast<std::size_t>(j) * c + t] += go * ta.data[static_cast<std::size_t>(c + t)];
              gat[static_cast<std::size_t>(t)] += go * tv.at2(i, t);
              gat[static_cast<std::size_t>(c + t)] += go * tv.at2(j, t);
            }
          }
        }
        break;
      }
      case Op::scale_channels: {
        const Tensor& tx = value_of(n.inputs[0]);
        const Tensor& tw = value_of(n.inputs[1]);
        std::vector<double>& gx = adj_[static_cast<std::size_t>(n.inputs[0])];
        std::vector<double>& gw = adj_[static_cast<std::size_t>(n.inputs[1])];
        std::int64_t hw = static_cast<std::int64_t>(tx.shape[1]) * tx.shape[2];
        for (int c = 0; c < tx.shape[0]; ++c) {
          double s = tw.data[static_cast<std::size_t>(c)];
          double acc = 0.0;
          for (std::int64_t i = 0; i < hw; ++i) {
            double go = g[static_cast<std::size_t>(c * hw + i)];
            gx[static_cast<std::size_t>(c * hw + i)] += go * s;
            acc += go * tx.data[static_cast<std::size_t>(c * hw + i)];
          }
          gw[static_cast<std::size_t>(c)] += acc;
        }
        break;
      }
      case Op::power_normalize: {
        const Tensor& tz = value_of(n.inputs[0]);
        std::vector<double>& gz = adj_[static_cast<std::size_t>(n.inputs[0])];
        double s = n.d0, q = n.d1;
        if (q == 0.0) {
          for (std::size_t i = 0; i < g.size(); ++i) gz[i] += g[i];
          break;
        }
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * tz.data[i];
        double coef = s / q * dot;
        for (std::size_t i = 0; i < g.size(); ++i) gz[i] += s * g[i] - coef * tz.data[i];
        break;
      }
      case Op::softmax_ce: {
        const Tensor& tl = value_of(n.inputs[0]);
        std::vector<double>& gl = adj_[static_cast<std::size_t>(n.inputs[0])];
        int k = tl.shape[0];
        std::int64_t hw = static_cast<std::int64_t>(tl.shape[1]) * tl.shape[2];
        std::int64_t valid = 0;
        for (std::int64_t p = 0; p < hw; ++p)
          if (n.ivec[static_cast<std::size_t>(p)] != n.i0) ++valid;
        double gscale = g[0] / static_cast<double>(valid);
        for (std::int64_t p = 0; p < hw; ++p) {
          int lab = n.ivec[static_cast<std::size_t>(p)];
          if (lab == n.i0) continue;
          double m = tl.data[static_cast<std::size_t>(p)];
          for (int c = 1; c < k; ++c) m = std::max(m, tl.data[static_cast<std::size_t>(c * hw + p)]);
          double z = 0.0;
          for (int c = 0; c < k; ++c) z += std::exp(tl.data[static_cast<std::size_t>(c * hw + p)] - m);
          for (int c = 0; c < k; ++c) {
            double prob = std::exp(tl.data[static_cast<std::size_t>(c * hw + p)] - m) / z;
            gl[static_cast<std::size_t>(c * hw + p)] += gscale * (prob - (c == lab ? 1.0 : 0.0));
          }
        }
        break;
      }
      case Op::l1_loss: {
        const Tensor& tp = value_of(n.inputs[0]);
        std::vector<double>& gp = adj_[static_cast<std::size_t>(n.inputs[0])];
        std::int64_t count = 0;
        for (std::size_t i = 0; i < tp.data.size(); ++i)
          if (n.bvec.empty() || n.bvec[i]) ++count;
        double gscale = g[0] / static_cast<double>(count);
        for (std::size_t i = 0; i < tp.data.size(); ++i) {
          if (!n.bvec.empty() && !n.bvec[i]) continue;
          double d = tp.data[i] - n.taux.data[i];
          gp[i] += gscale * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
        }
        break;
      }
      case Op::cosine_loss: {
        const Tensor& tp = value_of(n.inputs[0]);
        std::vector<double>& gp = adj_[static_cast<std::size_t>(n.inputs[0])];
        const double eps = 1e-8;
        std::int64_t hw = static_cast<std::int64_t>(tp.shape[1]) * tp.shape[2];
        double gscale = g[0] / static_cast<double>(hw);
        for (std::int64_t p = 0; p < hw; ++p) {
          double pv[3], gv[3];
          for (int c = 0; c < 3; ++c) {
            pv[c] = tp.data[static_cast<std::size_t>(c * hw + p)];
            gv[c] = n.taux.data[static_cast<std::size_t>(c * hw + p)];
          }
          double norm = std::sqrt(pv[0] * pv[0] + pv[1] * pv[1] + pv[2] * pv[2]);
          if (norm > eps) {
            double dot = pv[0] * gv[0] + pv[1] * gv[1] + pv[2] * gv[2];
            double inv = 1.0 / norm;
            for (int c = 0; c < 3; ++c)
              gp[static_cast<std::size_t>(c * hw + p)] += gscale * (-gv[c] * inv + dot * pv[c] * inv * inv * inv);
          } else {
            // norm floored: cosine is linear in the prediction here
            for (int c = 0; c < 3; ++c) gp[static_cast<std::size_t>(c * hw + p)] += gscale * (-gv[c] / eps);
          }
        }
        break;
      }
    }
  }
  adj_.clear();
}

double grad_check(const std::function<Var(Graph&, std::vector<Var>&)>& build,
                  std::vector<Tensor> point, double eps) {
  for (Tensor& t : point) {
    t.requires_grad = true;
    t.grad.clear();
  }
  auto eval = [&](bool with_grad) {
    Graph g;
    std::vector<Var> vars;
    vars.reserve(point.size());
    for (Tensor& t : point) vars.push_back(g.leaf(t));
    Var out = build(g, vars);
    const Tensor& tv = g.val(out);
    if (tv.numel() != 1) throw std::invalid_argument("grad_check: build must yield a scalar");
    double v = tv.data[0];
    if (with_grad) g.backward(out);
    return v;
  };

  eval(true);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(point.size());
  for (Tensor& t : point) {
    analytic.push_back(t.has_grad() ? t.grad : std::vector<double>(t.data.size(), 0.0));
    t.grad.clear();
    t.requires_grad = false;
  }

  double worst = 0.0;
  for (std::size_t ti = 0; ti < point.size(); ++ti) {
    for (std::size_t ci = 0; ci < point[ti].data.size(); ++ci) {
      double orig = point[ti].data[ci];
      point[ti].data[ci] = orig + eps;
      double fp = eval(false);
      point[ti].data[ci] = orig - eps;
      double fm = eval(false);
      point[ti].data[ci] = orig;
      double numeric = (fp - fm) / (2.0 * eps);
      double a = analytic[ti][ci];
      double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace gaisim
