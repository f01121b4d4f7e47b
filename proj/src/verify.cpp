#include "gaisim/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <vector>

#include "gaisim/channel.hpp"
#include "gaisim/gai.hpp"
#include "gaisim/harness.hpp"
#include "gaisim/random.hpp"

namespace gaisim {

namespace {

std::string fmt(const char* spec, double v) {
  char buf[128];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// plain quadruple-loop convolution, the reference the graph op is held to
Tensor conv_reference(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int padding,
                      int dilation) {
  int cin = x.shape[0], h = x.shape[1], wd = x.shape[2];
  int cout = w.shape[0], k = w.shape[2];
  int oh = (h + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
  int ow = (wd + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
  Tensor out({cout, oh, ow});
  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = b ? b->data[static_cast<std::size_t>(co)] : 0.0;
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              int iy = oy * stride - padding + ky * dilation;
              int ix = ox * stride - padding + kx * dilation;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              acc += x.at3(ci, iy, ix) * w.data[static_cast<std::size_t>(((co * cin + ci) * k + ky) * k + kx)];
            }
        out.at3(co, oy, ox) = acc;
      }
  return out;
}

CheckResult check_conv_oracle() {
  std::mt19937_64 rng(41);
  double worst = 0.0;
  struct Cfg { int cin, cout, h, w, k, stride, pad, dil; };
  for (Cfg c : {Cfg{1, 1, 5, 5, 3, 1, 1, 1}, Cfg{2, 3, 6, 7, 3, 2, 1, 1}, Cfg{3, 2, 9, 9, 3, 1, 2, 2},
                Cfg{2, 2, 8, 8, 1, 1, 0, 1}, Cfg{1, 2, 10, 10, 3, 1, 6, 6}}) {
    Tensor x = uniform_tensor({c.cin, c.h, c.w}, 1.0, rng);
    Tensor w = uniform_tensor({c.cout, c.cin, c.k, c.k}, 1.0, rng);
    Tensor b = uniform_tensor({c.cout}, 1.0, rng);
    Graph g;
    const Tensor& got = g.val(g.conv2d(g.constant(x), g.constant(w), g.constant(b), c.stride, c.pad, c.dil));
    Tensor want = conv_reference(x, w, &b, c.stride, c.pad, c.dil);
    for (std::size_t i = 0; i < want.data.size(); ++i)
      worst = std::max(worst, std::abs(got.data[i] - want.data[i]));
  }
  return {"conv_oracle", worst <= 1e-12, "max abs deviation " + fmt("%.3e", worst)};
}

CheckResult check_gradients() {
  std::mt19937_64 rng(42);
  Tensor x = uniform_tensor({2, 5, 5}, 0.8, rng);
  Tensor w1 = uniform_tensor({3, 2, 3, 3}, 0.5, rng);
  Tensor b1 = uniform_tensor({3}, 0.2, rng);
  Tensor w2 = uniform_tensor({4, 3}, 0.5, rng);
  double err = grad_check(
      [](Graph& g, std::vector<Var>& v) {
        Var y = g.relu(g.conv2d(v[0], v[1], v[2], 1, 1));
        Var p = g.global_avg_pool(y);
        return g.sum(g.softmax(g.linear(p, v[3])));
      },
      {x, w1, b1, w2});
  double err2 = grad_check(
      [](Graph& g, std::vector<Var>& v) {
        Var z = g.power_normalize(v[0], 1.0);
        return g.cosine_loss(g.conv2d(z, v[1], {}, 1, 1), Tensor({3, 5, 5}, 0.5));
      },
      {x, uniform_tensor({3, 2, 3, 3}, 0.5, rng)});
  double worst = std::max(err, err2);
  return {"gradient_fd", worst <= 1e-6, "max rel error " + fmt("%.3e", worst)};
}

CheckResult check_gat_oracle() {
  const int n = 3, c = 4;
  std::mt19937_64 rng(43);
  Tensor states = uniform_tensor({n, c}, 1.0, rng);
  Tensor u = identity_plus_noise(c, 0.3, rng);
  Tensor p = identity_plus_noise(c, 0.3, rng);
  Tensor att = uniform_tensor({2 * c}, 0.5, rng);
  const double slope = 0.2;

  Graph g;
  ParamBinder bind(g);
  Var attn;
  Var out = graph_attention_step(g, g.constant(states), u, p, att, slope, bind, nullptr, &attn);
  const Tensor& got = g.val(out);
  const Tensor& gattn = g.val(attn);

  // independent scalar recomputation
  std::vector<std::vector<double>> uv(n, std::vector<double>(c)), pv(n, std::vector<double>(c));
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < c; ++d) {
      double a = 0.0, bsum = 0.0;
      for (int k = 0; k < c; ++k) {
        a += states.at2(i, k) * u.at2(d, k);
        bsum += states.at2(i, k) * p.at2(d, k);
      }
      uv[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] = a;
      pv[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] = bsum;
    }
  double worst = 0.0, row_err = 0.0;
  for (int i = 0; i < n; ++i) {
    std::vector<double> logits(n);
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < c; ++k)
        s += att(k) * uv[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] +
             att(c + k) * uv[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
      logits[static_cast<std::size_t>(j)] = s >= 0.0 ? s : slope * s;
    }
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double z = 0.0;
    std::vector<double> wrow(n);
    for (int j = 0; j < n; ++j) z += (wrow[static_cast<std::size_t>(j)] = std::exp(logits[static_cast<std::size_t>(j)] - mx));
    double rowsum = 0.0;
    for (int j = 0; j < n; ++j) {
      wrow[static_cast<std::size_t>(j)] /= z;
      rowsum += gattn.at2(i, j);
      worst = std::max(worst, std::abs(wrow[static_cast<std::size_t>(j)] - gattn.at2(i, j)));
    }
    row_err = std::max(row_err, std::abs(rowsum - 1.0));
    for (int d = 0; d < c; ++d) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j)
        acc += wrow[static_cast<std::size_t>(j)] * pv[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)];
      acc = std::max(acc, 0.0);
      worst = std::max(worst, std::abs(acc - got.at2(i, d)));
    }
  }
  worst = std::max(worst, row_err);
  return {"attention_oracle", worst <= 1e-12,
          "max deviation " + fmt("%.3e", worst) + ", row sums off by " + fmt("%.3e", row_err)};
}

CheckResult check_snr() {
  const int samples = 1 << 18;
  ChannelConfig cfg;
  cfg.mode = ChannelMode::awgn;
  cfg.snr_db = 10.0;
  cfg.seed = 4242;
  ChannelSim sim(cfg);

  std::mt19937_64 rng(44);
  Tensor z = uniform_tensor({samples}, 2.0, rng);
  Graph g;
  Var zvar = g.constant(z);
  Var sent = g.power_normalize(zvar, cfg.power);
  Var received = sim.transmit(g, zvar);
  const Tensor& s = g.val(sent);
  const Tensor& r = g.val(received);
  double psig = 0.0, pnoise = 0.0;
  for (int i = 0; i < samples; ++i) {
    psig += s.data[static_cast<std::size_t>(i)] * s.data[static_cast<std::size_t>(i)];
    double d = r.data[static_cast<std::size_t>(i)] - s.data[static_cast<std::size_t>(i)];
    pnoise += d * d;
  }
  double snr_db = 10.0 * std::log10(psig / pnoise);
  double off = std::abs(snr_db - cfg.snr_db);
  return {"snr_calibration", off <= 0.1,
          fmt("%.4f", snr_db) + " dB measured at a 10 dB setting over " + std::to_string(samples) + " samples"};
}

CheckResult check_fading() {
  ChannelConfig cfg;
  cfg.mode = ChannelMode::rayleigh;
  cfg.snr_db = 10.0;
  cfg.rayleigh_scale = 0.2;
  cfg.seed = 4343;
  ChannelSim sim(cfg);
  const int draws = 200000;
  double sum_h2 = 0.0;
  for (int i = 0; i < draws; ++i) {
    Graph g;
    sim.transmit(g, g.constant(Tensor({4}, 1.0)));
    sum_h2 += sim.last_fading() * sim.last_fading();
  }
  double mean_h2 = sum_h2 / draws;
  double want = 2.0 * cfg.rayleigh_scale * cfg.rayleigh_scale;
  double rel = std::abs(mean_h2 - want) / want;
  return {"fading_statistics", rel <= 0.02,
          "mean squared gain " + fmt("%.5f", mean_h2) + " against " + fmt("%.5f", want)};
}

CheckResult check_bandwidth() {
  BandwidthInfo info = bandwidth_ratio(3, 224, 224, 512, 7, 7);
  bool pass = info.ratio.num == 1 && info.ratio.den == 12;
  CdsResult c = solve_cds(1.0 / 12.0, static_cast<long long>(3) * 224 * 224, 7, 7);
  pass = pass && c.c_ds == 512;
  return {"bandwidth_exact", pass,
          "ratio " + std::to_string(info.ratio.num) + "/" + std::to_string(info.ratio.den) +
              ", channel solve gives " + std::to_string(c.c_ds)};
}

CheckResult check_flops() {
  GaiConfig cfg;
  cfg.num_nodes = 4;
  cfg.num_tasks = 3;
  cfg.c_out = 8;
  cfg.c_rm = 16;
  cfg.iterations = 2;
  std::vector<std::array<int, 3>> shapes = {{5, 12, 12}, {6, 6, 6}, {7, 3, 3}, {8, 3, 3}};
  FlopReport rep = flop_report(cfg, shapes, 3, 3, 4545);
  return {"operation_counts", rep.match,
          "measured " + std::to_string(rep.measured.total()) + ", closed form " +
              std::to_string(rep.analytic.total())};
}

CheckResult check_checkpoint() {
  std::mt19937_64 rng(46);
  Tensor a = uniform_tensor({3, 4}, 1.0, rng);
  Tensor b = uniform_tensor({5}, 1.0, rng);
  Tensor a2 = a, b2 = b;
  for (double& v : a2.data) v = 0.0;
  for (double& v : b2.data) v = 0.0;
  std::vector<std::pair<std::string, Tensor*>> out = {{"a", &a}, {"b", &b}};
  std::vector<std::pair<std::string, Tensor*>> in = {{"a", &a2}, {"b", &b2}};
  auto path = (std::filesystem::temp_directory_path() / "gaisim_verify_ckpt.bin").string();
  save_checkpoint(path, out);
  load_checkpoint(path, in);
  std::filesystem::remove(path);
  bool same = a.data == a2.data && b.data == b2.data;
  return {"checkpoint_roundtrip", same, same ? "bit-exact round trip" : "payload mismatch"};
}

CheckResult check_power_norm() {
  std::mt19937_64 rng(47);
  Tensor z = uniform_tensor({7, 3, 3}, 3.0, rng);
  Graph g;
  const Tensor& out = g.val(g.power_normalize(g.constant(z), 0.5));
  double ms = 0.0;
  for (double v : out.data) ms += v * v;
  ms /= static_cast<double>(out.numel());
  double off = std::abs(ms - 0.5);
  return {"power_normalization", off <= 1e-12, "mean square off by " + fmt("%.3e", off)};
}

}  // namespace

std::vector<CheckResult> run_verification() {
  return {check_conv_oracle(), check_gradients(), check_gat_oracle(),  check_snr(),
          check_fading(),      check_bandwidth(), check_flops(),       check_checkpoint(),
          check_power_norm()};
}

bool all_passed(const std::vector<CheckResult>& checks) {
  for (const CheckResult& c : checks)
    if (!c.pass) return false;
  return true;
}

}  // namespace gaisim
