#include "gaisim/gai.hpp"

#include <cmath>
#include <stdexcept>

#include "gaisim/random.hpp"

namespace gaisim {

void GaiConfig::validate() const {
  if (num_nodes < 1) throw std::invalid_argument("gai: needs at least one node");
  if (num_tasks < 1) throw std::invalid_argument("gai: needs at least one task");
  if (c_out < 1 || c_rm < 1) throw std::invalid_argument("gai: widths must be positive");
  if (iterations < 0) throw std::invalid_argument("gai: iteration count must be nonnegative");
  if (leaky_slope <= 0.0 || leaky_slope >= 1.0) throw std::invalid_argument("gai: leaky slope must be in (0,1)");
}

GaiParams GaiParams::init(const GaiConfig& cfg, const std::vector<int>& node_channels,
                          std::mt19937_64& rng) {
  cfg.validate();
  if (static_cast<int>(node_channels.size()) != cfg.num_nodes)
    throw std::invalid_argument("gai: node channel list does not match node count");
  GaiParams p;
  p.cfg = cfg;
  for (int i = 0; i < cfg.num_nodes; ++i) {
    ConvParam proj;
    proj.weight = fan_uniform({cfg.c_out, node_channels[static_cast<std::size_t>(i)], 1, 1},
                              node_channels[static_cast<std::size_t>(i)], cfg.c_out, rng);
    proj.bias = Tensor({cfg.c_out});
    p.node_proj.push_back(std::move(proj));
  }
  int m = std::max(cfg.iterations, 1);
  for (int it = 0; it < m; ++it) {
    p.u.push_back(identity_plus_noise(cfg.c_out, 0.01, rng));
    p.p.push_back(identity_plus_noise(cfg.c_out, 0.01, rng));
  }
  int natt = cfg.per_iteration_attention ? m : 1;
  for (int it = 0; it < natt; ++it) p.att.push_back(Tensor({2 * cfg.c_out}));
  for (int it = 0; it < m; ++it) {
    p.wq.push_back(identity_plus_noise(cfg.c_out, 0.01, rng));
    p.wk.push_back(identity_plus_noise(cfg.c_out, 0.01, rng));
    p.wv.push_back(identity_plus_noise(cfg.c_out, 0.01, rng));
  }
  for (int t = 0; t < cfg.num_tasks; ++t) {
    std::vector<LinearParam> l1, l2;
    for (int i = 0; i < cfg.num_nodes; ++i) {
      LinearParam a;
      a.weight = fan_uniform({cfg.c_rm, cfg.c_out}, cfg.c_out, cfg.c_rm, rng);
      a.bias = Tensor({cfg.c_rm});
      LinearParam b;
      b.weight = fan_uniform({cfg.c_out, cfg.c_rm}, cfg.c_rm, cfg.c_out, rng);
      b.bias = Tensor({cfg.c_out});
      l1.push_back(std::move(a));
      l2.push_back(std::move(b));
    }
    p.rm1.push_back(std::move(l1));
    p.rm2.push_back(std::move(l2));
  }
  return p;
}

void GaiParams::register_params(std::vector<std::pair<std::string, Tensor*>>& out,
                                const std::string& prefix) {
  for (std::size_t i = 0; i < node_proj.size(); ++i) {
    out.emplace_back(prefix + "proj" + std::to_string(i) + ".weight", &node_proj[i].weight);
    out.emplace_back(prefix + "proj" + std::to_string(i) + ".bias", &node_proj[i].bias);
  }
  if (cfg.variant == GaiVariant::simple_attention) {
    for (std::size_t m = 0; m < wq.size(); ++m) {
      out.emplace_back(prefix + "wq" + std::to_string(m), &wq[m]);
      out.emplace_back(prefix + "wk" + std::to_string(m), &wk[m]);
      out.emplace_back(prefix + "wv" + std::to_string(m), &wv[m]);
    }
  } else if (cfg.variant == GaiVariant::full) {
    for (std::size_t m = 0; m < u.size(); ++m) {
      out.emplace_back(prefix + "u" + std::to_string(m), &u[m]);
      out.emplace_back(prefix + "p" + std::to_string(m), &p[m]);
    }
    for (std::size_t m = 0; m < att.size(); ++m)
      out.emplace_back(prefix + "att" + std::to_string(m), &att[m]);
  }
  for (std::size_t t = 0; t < rm1.size(); ++t) {
    for (std::size_t i = 0; i < rm1[t].size(); ++i) {
      std::string base = prefix + "rm.t" + std::to_string(t) + ".n" + std::to_string(i) + ".";
      out.emplace_back(base + "l1.weight", &rm1[t][i].weight);
      out.emplace_back(base + "l1.bias", &rm1[t][i].bias);
      out.emplace_back(base + "l2.weight", &rm2[t][i].weight);
      out.emplace_back(base + "l2.bias", &rm2[t][i].bias);
    }
  }
}

FeatureTransformOut feature_transform(Graph& g, const std::vector<Var>& features, GaiParams& params,
                                      ParamBinder& bind, int out_h, int out_w, GaiFlopCounts* counts) {
  if (static_cast<int>(features.size()) != params.cfg.num_nodes)
    throw std::invalid_argument("feature_transform: feature count does not match node count");
  FeatureTransformOut out;
  std::vector<Var> pooled;
  for (std::size_t i = 0; i < features.size(); ++i) {
    std::int64_t m0 = g.mult_count();
    Var proj = g.conv2d(features[i], bind(params.node_proj[i].weight), bind(params.node_proj[i].bias));
    if (counts) counts->conv += g.mult_count() - m0;
    pooled.push_back(g.global_avg_pool(proj));
    std::int64_t r0 = g.interp_op_count();
    out.k.push_back(g.bilinear_resize(proj, out_h, out_w));
    if (counts) counts->resize += g.interp_op_count() - r0;
  }
  out.v0 = g.stack_rows(pooled);
  return out;
}

Var graph_attention_step(Graph& g, Var states, Tensor& u, Tensor& p, Tensor& att,
                         double leaky_slope, ParamBinder& bind, GaiFlopCounts* counts,
                         Var* attention_out) {
  std::int64_t m0 = g.mult_count();
  Var uv = g.linear(states, bind(u));
  Var pv = g.linear(states, bind(p));
  if (counts) counts->transform += g.mult_count() - m0;

  m0 = g.mult_count();
  Var logits = g.gat_pair_logits(uv, bind(att));
  if (counts) counts->logits += g.mult_count() - m0;

  Var weights = g.softmax(g.leaky_relu(logits, leaky_slope));
  if (attention_out) *attention_out = weights;

  m0 = g.mult_count();
  Var agg = g.matmul(weights, pv);
  if (counts) counts->aggregate += g.mult_count() - m0;
  return g.relu(agg);
}

Var simple_attention_step(Graph& g, Var states, Tensor& wq, Tensor& wk, Tensor& wv,
                          ParamBinder& bind, Var* attention_out) {
  int c = g.val(states).shape[1];
  Var q = g.linear(states, bind(wq));
  Var k = g.linear(states, bind(wk));
  Var v = g.linear(states, bind(wv));
  Var logits = g.scale(g.matmul(q, k, true), 1.0 / std::sqrt(static_cast<double>(c)));
  Var weights = g.softmax(logits);
  if (attention_out) *attention_out = weights;
  return g.matmul(weights, v);
}

Var graph_attention_run(Graph& g, Var v0, GaiParams& params, ParamBinder& bind,
                        GaiFlopCounts* counts, std::vector<Var>* attention_out) {
  const GaiConfig& cfg = params.cfg;
  if (cfg.variant == GaiVariant::without_attention) return v0;
  Var states = v0;
  for (int m = 0; m < cfg.iterations; ++m) {
    Var attn;
    if (cfg.variant == GaiVariant::simple_attention) {
      states = simple_attention_step(g, states, params.wq[static_cast<std::size_t>(m)],
                                     params.wk[static_cast<std::size_t>(m)],
                                     params.wv[static_cast<std::size_t>(m)], bind, &attn);
    } else {
      Tensor& att = cfg.per_iteration_attention ? params.att[static_cast<std::size_t>(m)] : params.att[0];
      states = graph_attention_step(g, states, params.u[static_cast<std::size_t>(m)],
                                    params.p[static_cast<std::size_t>(m)], att, cfg.leaky_slope,
                                    bind, counts, &attn);
    }
    if (attention_out) attention_out->push_back(attn);
  }
  return states;
}

std::vector<std::vector<Var>> relation_mapping(Graph& g, Var states, GaiParams& params,
                                               ParamBinder& bind, GaiFlopCounts* counts) {
  const GaiConfig& cfg = params.cfg;
  std::vector<std::vector<Var>> e(static_cast<std::size_t>(cfg.num_tasks));
  std::vector<Var> node_states;
  for (int i = 0; i < cfg.num_nodes; ++i) node_states.push_back(g.row(states, i));
  for (int t = 0; t < cfg.num_tasks; ++t) {
    for (int i = 0; i < cfg.num_nodes; ++i) {
      LinearParam& l1 = params.rm1[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
      LinearParam& l2 = params.rm2[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
      std::int64_t m0 = g.mult_count();
      Var h = g.relu(g.linear(node_states[static_cast<std::size_t>(i)], bind(l1.weight), bind(l1.bias)));
      Var ei = g.linear(h, bind(l2.weight), bind(l2.bias));
      if (counts) counts->relation += g.mult_count() - m0;
      e[static_cast<std::size_t>(t)].push_back(ei);
    }
  }
  if (cfg.normalize_task_weights) {
    for (int t = 0; t < cfg.num_tasks; ++t) {
      // softmax across nodes, independently per channel
      Var mat = g.stack_rows(e[static_cast<std::size_t>(t)]);       // [N,C]
      Var sm = g.transpose2d(g.softmax(g.transpose2d(mat)));        // over the node axis
      for (int i = 0; i < cfg.num_nodes; ++i)
        e[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] = g.row(sm, i);
    }
  }
  return e;
}

Var fuse_task_feature(Graph& g, const std::vector<Var>& e_t, const std::vector<Var>& k,
                      GaiFlopCounts* counts) {
  if (e_t.size() != k.size() || e_t.empty())
    throw std::invalid_argument("fuse_task_feature: weight/feature count mismatch");
  std::int64_t m0 = g.mult_count();
  Var z = g.scale_channels(k[0], e_t[0]);
  for (std::size_t i = 1; i < k.size(); ++i) z = g.add(z, g.scale_channels(k[i], e_t[i]));
  if (counts) counts->fusion += g.mult_count() - m0;
  return z;
}

std::vector<Var> gai_forward(Graph& g, const std::vector<Var>& features, GaiParams& params,
                             ParamBinder& bind, int out_h, int out_w, GaiFlopCounts* counts) {
  FeatureTransformOut ft = feature_transform(g, features, params, bind, out_h, out_w, counts);
  Var states = graph_attention_run(g, ft.v0, params, bind, counts);
  std::vector<std::vector<Var>> e = relation_mapping(g, states, params, bind, counts);
  std::vector<Var> z;
  for (int t = 0; t < params.cfg.num_tasks; ++t)
    z.push_back(fuse_task_feature(g, e[static_cast<std::size_t>(t)], ft.k, counts));
  return z;
}

GaiFlopCounts gai_flop_formula(const GaiConfig& cfg, const std::vector<std::array<int, 3>>& block_shapes,
                               int out_h, int out_w) {
  if (static_cast<int>(block_shapes.size()) != cfg.num_nodes)
    throw std::invalid_argument("gai_flop_formula: shape list does not match node count");
  GaiFlopCounts f;
  std::int64_t n = cfg.num_nodes, t = cfg.num_tasks, c = cfg.c_out;
  std::int64_t m = cfg.iterations, hw = static_cast<std::int64_t>(out_h) * out_w;
  for (const auto& s : block_shapes)
    f.conv += c * static_cast<std::int64_t>(s[0]) * s[1] * s[2];
  f.resize = 9 * n * c * hw;
  f.transform = 2 * m * n * c * c;
  f.logits = m * n * n * 2 * c;
  f.aggregate = m * n * n * c;
  f.relation = 2 * n * t * c * static_cast<std::int64_t>(cfg.c_rm);
  f.fusion = n * t * c * hw;
  return f;
}

}  // namespace gaisim
