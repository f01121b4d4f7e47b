#include "gaisim/heads.hpp"

#include <stdexcept>

#include "gaisim/random.hpp"

namespace gaisim {

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "segmentation") return TaskKind::segmentation;
  if (s == "depth") return TaskKind::depth;
  if (s == "surface_normal") return TaskKind::surface_normal;
  if (s == "keypoint") return TaskKind::keypoint;
  if (s == "edge") return TaskKind::edge;
  if (s == "classification") return TaskKind::classification;
  throw std::invalid_argument("unknown task kind '" + s + "'");
}

std::string task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::segmentation: return "segmentation";
    case TaskKind::depth: return "depth";
    case TaskKind::surface_normal: return "surface_normal";
    case TaskKind::keypoint: return "keypoint";
    case TaskKind::edge: return "edge";
    case TaskKind::classification: return "classification";
  }
  return "?";
}

int TaskSpec::out_channels() const {
  switch (kind) {
    case TaskKind::segmentation: return num_classes;
    case TaskKind::classification: return num_classes;
    case TaskKind::surface_normal: return 3;
    default: return 1;
  }
}

void TaskSpec::validate() const {
  if (name.empty()) throw std::invalid_argument("task: needs a name");
  if ((kind == TaskKind::segmentation || kind == TaskKind::classification) && num_classes < 2)
    throw std::invalid_argument("task " + name + ": needs at least two classes");
  if (hidden < 1) throw std::invalid_argument("task " + name + ": decoder width must be positive");
  if (dilation != 6 && dilation != 12 && dilation != 18 && dilation != 24)
    throw std::invalid_argument("task " + name + ": dilation must be one of 6, 12, 18, 24");
  if (!(loss_weight > 0.0)) throw std::invalid_argument("task " + name + ": loss weight must be positive");
}

TaskDecoderParams TaskDecoderParams::init(const TaskSpec& spec, int in_channels, std::mt19937_64& rng) {
  spec.validate();
  TaskDecoderParams d;
  d.layer1.weight = fan_uniform({spec.hidden, in_channels, 3, 3}, in_channels * 9, spec.hidden * 9, rng);
  d.layer1.bias = Tensor({spec.hidden});
  d.layer2.weight = fan_uniform({spec.hidden, spec.hidden, 1, 1}, spec.hidden, spec.hidden, rng);
  d.layer2.bias = Tensor({spec.hidden});
  if (spec.kind == TaskKind::classification) {
    d.cls_weight = fan_uniform({spec.num_classes, spec.hidden}, spec.hidden, spec.num_classes, rng);
    d.cls_bias = Tensor({spec.num_classes});
  } else {
    int k = spec.out_channels();
    d.layer3.weight = fan_uniform({k, spec.hidden, 1, 1}, spec.hidden, k, rng);
    d.layer3.bias = Tensor({k});
  }
  return d;
}

void TaskDecoderParams::register_params(std::vector<std::pair<std::string, Tensor*>>& out,
                                        const std::string& prefix, const TaskSpec& spec) {
  out.emplace_back(prefix + "layer1.weight", &layer1.weight);
  out.emplace_back(prefix + "layer1.bias", &layer1.bias);
  out.emplace_back(prefix + "layer2.weight", &layer2.weight);
  out.emplace_back(prefix + "layer2.bias", &layer2.bias);
  if (spec.kind == TaskKind::classification) {
    out.emplace_back(prefix + "cls.weight", &cls_weight);
    out.emplace_back(prefix + "cls.bias", &cls_bias);
  } else {
    out.emplace_back(prefix + "layer3.weight", &layer3.weight);
    out.emplace_back(prefix + "layer3.bias", &layer3.bias);
  }
}

Var decode_task(Graph& g, Var feature, TaskDecoderParams& dec, const TaskSpec& spec,
                int label_h, int label_w, ParamBinder& bind) {
  Var h = g.conv2d(feature, bind(dec.layer1.weight), bind(dec.layer1.bias), 1, spec.dilation, spec.dilation);
  h = g.relu(h);
  h = g.conv2d(h, bind(dec.layer2.weight), bind(dec.layer2.bias));
  h = g.relu(h);
  if (spec.kind == TaskKind::classification)
    return g.linear(g.global_avg_pool(h), bind(dec.cls_weight), bind(dec.cls_bias));
  Var out = g.conv2d(h, bind(dec.layer3.weight), bind(dec.layer3.bias));
  const Tensor& t = g.val(out);
  if (t.shape[1] == label_h && t.shape[2] == label_w) return out;
  return g.bilinear_resize(out, label_h, label_w);
}

Var total_loss(Graph& g, const std::vector<Var>& task_losses, const std::vector<double>& weights) {
  if (task_losses.empty() || task_losses.size() != weights.size())
    throw std::invalid_argument("total_loss: loss/weight count mismatch");
  Var acc = g.scale(task_losses[0], weights[0]);
  for (std::size_t t = 1; t < task_losses.size(); ++t)
    acc = g.add(acc, g.scale(task_losses[t], weights[t]));
  return acc;
}

}  // namespace gaisim
