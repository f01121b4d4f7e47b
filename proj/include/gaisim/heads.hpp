#pragma once

#include <random>
#include <string>
#include <vector>

#include "gaisim/autodiff.hpp"
#include "gaisim/encoder.hpp"

namespace gaisim {

enum class TaskKind { segmentation, depth, surface_normal, keypoint, edge, classification };

TaskKind task_kind_from_string(const std::string& s);
std::string task_kind_name(TaskKind k);

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::segmentation;
  int num_classes = 0;   // segmentation / classification
  int hidden = 64;       // decoder width
  int dilation = 6;      // first decoder conv, one of {6,12,18,24}
  double loss_weight = 1.0;

  int out_channels() const;
  void validate() const;
};

/// Three-layer task decoder: dilated 3x3 conv, then two 1x1 stages. Dense
/// tasks are resampled to label resolution; classification pools before a
/// final linear layer.
struct TaskDecoderParams {
  ConvParam layer1;  // 3x3, dilated
  ConvParam layer2;  // 1x1
  ConvParam layer3;  // 1x1 (dense tasks)
  Tensor cls_weight; // classification head
  Tensor cls_bias;

  static TaskDecoderParams init(const TaskSpec& spec, int in_channels, std::mt19937_64& rng);
  void register_params(std::vector<std::pair<std::string, Tensor*>>& out, const std::string& prefix,
                       const TaskSpec& spec);
};

Var decode_task(Graph& g, Var feature, TaskDecoderParams& dec, const TaskSpec& spec,
                int label_h, int label_w, ParamBinder& bind);

/// Weighted sum of per-task losses.
Var total_loss(Graph& g, const std::vector<Var>& task_losses, const std::vector<double>& weights);

}  // namespace gaisim
