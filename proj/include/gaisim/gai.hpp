#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gaisim/autodiff.hpp"
#include "gaisim/encoder.hpp"

namespace gaisim {

enum class GaiVariant { full, without_attention, simple_attention };

struct GaiConfig {
  int num_nodes = 0;  // one graph node per encoder block
  int num_tasks = 0;
  int c_out = 64;     // common node-state width
  int c_rm = 256;     // hidden width of the task-relevance mapping
  int iterations = 1;
  double leaky_slope = 0.2;
  GaiVariant variant = GaiVariant::full;
  bool per_iteration_attention = false;  // fresh attention vector per iteration
  bool normalize_task_weights = false;   // softmax over nodes per channel

  void validate() const;
};

/// Multiply counts per stage of the inter-block forward pass. The resize
/// field tallies all nine interpolation ops per output sample; every other
/// field counts multiplications.
struct GaiFlopCounts {
  std::int64_t conv = 0;       // per-node 1x1 projections
  std::int64_t resize = 0;     // feature resampling to the common grid
  std::int64_t transform = 0;  // state transforms inside attention
  std::int64_t logits = 0;     // pairwise attention logits
  std::int64_t aggregate = 0;  // attention-weighted neighbor sums
  std::int64_t relation = 0;   // task-relevance mapping
  std::int64_t fusion = 0;     // per-task feature weighting

  std::int64_t total() const {
    return conv + resize + transform + logits + aggregate + relation + fusion;
  }
  bool operator==(const GaiFlopCounts&) const = default;
};

struct LinearParam {
  Tensor weight;
  Tensor bias;
};

struct GaiParams {
  GaiConfig cfg;
  std::vector<ConvParam> node_proj;           // per node: 1x1 conv to c_out channels
  std::vector<Tensor> u;                      // per iteration [c_out,c_out]
  std::vector<Tensor> p;                      // per iteration [c_out,c_out]
  std::vector<Tensor> att;                    // [2*c_out]; one entry, or one per iteration
  std::vector<Tensor> wq, wk, wv;             // simple-attention alternative, per iteration
  std::vector<std::vector<LinearParam>> rm1;  // [task][node]: c_out -> c_rm
  std::vector<std::vector<LinearParam>> rm2;  // [task][node]: c_rm -> c_out

  static GaiParams init(const GaiConfig& cfg, const std::vector<int>& node_channels,
                        std::mt19937_64& rng);
  void register_params(std::vector<std::pair<std::string, Tensor*>>& out, const std::string& prefix);
};

struct FeatureTransformOut {
  Var v0;              // [N,c_out] initial node states (pooled projections)
  std::vector<Var> k;  // per node: [c_out,out_h,out_w] resampled projections
};

FeatureTransformOut feature_transform(Graph& g, const std::vector<Var>& features, GaiParams& params,
                                      ParamBinder& bind, int out_h, int out_w,
                                      GaiFlopCounts* counts = nullptr);

/// One attention update over the fully connected node graph (self-loops
/// included): states -> relu(A . (P states)) with A row-softmaxed from
/// leaky-relu pairwise logits.
Var graph_attention_step(Graph& g, Var states, Tensor& u, Tensor& p, Tensor& att,
                         double leaky_slope, ParamBinder& bind, GaiFlopCounts* counts = nullptr,
                         Var* attention_out = nullptr);

/// Dot-product attention alternative; no output activation.
Var simple_attention_step(Graph& g, Var states, Tensor& wq, Tensor& wk, Tensor& wv,
                          ParamBinder& bind, Var* attention_out = nullptr);

/// Runs the configured number of state-update iterations. The
/// without-attention variant returns the input states untouched.
Var graph_attention_run(Graph& g, Var v0, GaiParams& params, ParamBinder& bind,
                        GaiFlopCounts* counts = nullptr, std::vector<Var>* attention_out = nullptr);

/// Per-task, per-node relevance vectors e[t][i] of length c_out.
std::vector<std::vector<Var>> relation_mapping(Graph& g, Var states, GaiParams& params,
                                               ParamBinder& bind, GaiFlopCounts* counts = nullptr);

/// z_t = sum_i e[t][i] (x) k[i], channel weights broadcast over the grid.
Var fuse_task_feature(Graph& g, const std::vector<Var>& e_t, const std::vector<Var>& k,
                      GaiFlopCounts* counts = nullptr);

/// Full pipeline: per-node projection, state iterations, relevance mapping,
/// fusion. Returns one feature map per task.
std::vector<Var> gai_forward(Graph& g, const std::vector<Var>& features, GaiParams& params,
                             ParamBinder& bind, int out_h, int out_w,
                             GaiFlopCounts* counts = nullptr);

/// Closed-form stage counts for the same pipeline on the given block shapes.
GaiFlopCounts gai_flop_formula(const GaiConfig& cfg, const std::vector<std::array<int, 3>>& block_shapes,
                               int out_h, int out_w);

}  // namespace gaisim
