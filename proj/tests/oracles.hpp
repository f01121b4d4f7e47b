#pragma once

// Reference implementations for the test suite, written as plain scalar
// loops with different accumulation orders and algebra than the library so
// the two sides can only agree by computing the same mathematics.

#include <cmath>
#include <random>
#include <vector>

#include "gaisim/tensor.hpp"

namespace oracle {

inline gaisim::Tensor conv2d(const gaisim::Tensor& x, const gaisim::Tensor& w,
                             const gaisim::Tensor* bias, int stride, int pad, int dil) {
  int cin = x.shape[0], h = x.shape[1], wd = x.shape[2];
  int cout = w.shape[0], k = w.shape[2];
  int span = dil * (k - 1) + 1;
  int oh = (h + 2 * pad - span) / stride + 1;
  int ow = (wd + 2 * pad - span) / stride + 1;
  gaisim::Tensor out({cout, oh, ow});
  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        // kernel-major accumulation, zero padding outside the input
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx)
            for (int ci = 0; ci < cin; ++ci) {
              int iy = oy * stride - pad + ky * dil;
              int ix = ox * stride - pad + kx * dil;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              acc += x.at3(ci, iy, ix) *
                     w.data[((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx];
            }
        out.at3(co, oy, ox) = acc + (bias ? bias->data[static_cast<std::size_t>(co)] : 0.0);
      }
  return out;
}

// half-pixel sampling written in the four-corner weight form
inline gaisim::Tensor bilinear(const gaisim::Tensor& x, int oh, int ow) {
  int c = x.shape[0], h = x.shape[1], w = x.shape[2];
  auto coord = [](int dst, int out_size, int in_size) {
    double s = (dst + 0.5) * static_cast<double>(in_size) / out_size - 0.5;
    if (s < 0.0) s = 0.0;
    if (s > in_size - 1.0) s = in_size - 1.0;
    return s;
  };
  gaisim::Tensor out({c, oh, ow});
  for (int ci = 0; ci < c; ++ci)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double sy = coord(oy, oh, h), sx = coord(ox, ow, w);
        int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
        int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
        double fy = sy - y0, fx = sx - x0;
        out.at3(ci, oy, ox) = (1.0 - fy) * (1.0 - fx) * x.at3(ci, y0, x0) +
                              (1.0 - fy) * fx * x.at3(ci, y0, x1) +
                              fy * (1.0 - fx) * x.at3(ci, y1, x0) +
                              fy * fx * x.at3(ci, y1, x1);
      }
  return out;
}

// y = x w^T + b for one row
inline std::vector<double> linear_row(const std::vector<double>& x, const gaisim::Tensor& w) {
  int dout = w.shape[0], din = w.shape[1];
  std::vector<double> y(static_cast<std::size_t>(dout), 0.0);
  for (int o = 0; o < dout; ++o)
    for (int i = 0; i < din; ++i)
      y[static_cast<std::size_t>(o)] += x[static_cast<std::size_t>(i)] * w.at2(o, i);
  return y;
}

// one inter-node attention update: states [n,c] -> relu(softmax(leaky(logits)) . (states p^T))
inline gaisim::Tensor gat_step(const gaisim::Tensor& states, const gaisim::Tensor& u,
                               const gaisim::Tensor& p, const gaisim::Tensor& att, double slope) {
  int n = states.shape[0], c = states.shape[1];
  std::vector<std::vector<double>> uv, pv;
  for (int i = 0; i < n; ++i) {
    std::vector<double> row(states.data.begin() + static_cast<std::size_t>(i) * c,
                            states.data.begin() + static_cast<std::size_t>(i + 1) * c);
    uv.push_back(linear_row(row, u));
    pv.push_back(linear_row(row, p));
  }
  gaisim::Tensor out({n, c});
  for (int i = 0; i < n; ++i) {
    std::vector<double> weights(static_cast<std::size_t>(n), 0.0);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      double logit = 0.0;
      for (int d = 0; d < c; ++d)
        logit += att.data[static_cast<std::size_t>(d)] * uv[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] +
                 att.data[static_cast<std::size_t>(c + d)] * uv[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)];
      if (logit < 0.0) logit *= slope;
      weights[static_cast<std::size_t>(j)] = std::exp(logit);  // no max shift: logits stay small here
      z += weights[static_cast<std::size_t>(j)];
    }
    for (int d = 0; d < c; ++d) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j)
        acc += weights[static_cast<std::size_t>(j)] / z * pv[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)];
      out.at2(i, d) = acc > 0.0 ? acc : 0.0;
    }
  }
  return out;
}

// scaled dot-product update: softmax(q k^T / sqrt(c)) v, no output activation
inline gaisim::Tensor simple_attention(const gaisim::Tensor& states, const gaisim::Tensor& wq,
                                       const gaisim::Tensor& wk, const gaisim::Tensor& wv) {
  int n = states.shape[0], c = states.shape[1];
  std::vector<std::vector<double>> q, k, v;
  for (int i = 0; i < n; ++i) {
    std::vector<double> row(states.data.begin() + static_cast<std::size_t>(i) * c,
                            states.data.begin() + static_cast<std::size_t>(i + 1) * c);
    q.push_back(linear_row(row, wq));
    k.push_back(linear_row(row, wk));
    v.push_back(linear_row(row, wv));
  }
  double inv = 1.0 / std::sqrt(static_cast<double>(c));
  gaisim::Tensor out({n, c});
  for (int i = 0; i < n; ++i) {
    std::vector<double> weights(static_cast<std::size_t>(n), 0.0);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      double logit = 0.0;
      for (int d = 0; d < c; ++d)
        logit += q[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] *
                 k[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)];
      weights[static_cast<std::size_t>(j)] = std::exp(logit * inv);
      z += weights[static_cast<std::size_t>(j)];
    }
    for (int d = 0; d < c; ++d) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j)
        acc += weights[static_cast<std::size_t>(j)] / z * v[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)];
      out.at2(i, d) = acc;
    }
  }
  return out;
}

inline gaisim::Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
  gaisim::Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data) v = dist(rng);
  return t;
}

inline double max_abs_diff(const gaisim::Tensor& a, const gaisim::Tensor& b) {
  double worst = a.shape == b.shape ? 0.0 : 1e300;
  for (std::size_t i = 0; i < a.data.size() && i < b.data.size(); ++i)
    worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
  return worst;
}

}  // namespace oracle
