#pragma once

#include <string>
#include <vector>

#include "gaisim/tensor.hpp"

namespace gaisim {

struct MetricRecord {
  std::string task;
  std::string name;
  double value = 0.0;
  bool higher_better = true;
};

/// Streaming confusion matrix for label maps.
class SegAccumulator {
 public:
  explicit SegAccumulator(int num_classes);
  void add(const std::vector<int>& pred, const std::vector<int>& gt);
  double mean_iou() const;    // averaged over classes present in gt or pred, x100
  double pixel_acc() const;   // x100

 private:
  int k_;
  std::vector<long long> confusion_;  // k x k, [gt][pred]
};

struct DepthScores {
  double abs_err = 0.0;
  double rel_err = 0.0;
  double delta1 = 0.0;  // fraction under 1.25, x100
  double delta2 = 0.0;  // 1.25^2
  double delta3 = 0.0;  // 1.25^3
};

/// Accumulates over valid pixels (gt > 0); predictions are floored at a tiny
/// positive value for the ratio thresholds.
class DepthAccumulator {
 public:
  void add(const std::vector<double>& pred, const std::vector<double>& gt);
  DepthScores scores() const;

 private:
  double abs_sum_ = 0.0, rel_sum_ = 0.0;
  long long d1_ = 0, d2_ = 0, d3_ = 0, count_ = 0;
};

struct NormalScores {
  double mean_deg = 0.0;
  double median_deg = 0.0;
  double within_1125 = 0.0;  // fraction under 11.25 degrees, x100
  double within_225 = 0.0;   // 22.5
  double within_30 = 0.0;    // 30
};

/// Collects per-pixel angular errors in degrees; both fields are normalized
/// per pixel before comparison.
class NormalAccumulator {
 public:
  void add(const Tensor& pred, const Tensor& gt);  // [3,H,W] each
  NormalScores scores() const;

 private:
  std::vector<double> angles_;
};

/// Mean signed per-task relative change against a baseline, in percent:
/// each metric contributes (value - base) / base, negated for lower-better
/// metrics, averaged within a task. Metric sets must match pairwise.
struct TaskDelta {
  std::string task;
  double delta_percent = 0.0;
};

struct ImprovementSummary {
  std::vector<TaskDelta> per_task;
  double overall_percent = 0.0;
};

ImprovementSummary relative_improvement(const std::vector<MetricRecord>& model,
                                        const std::vector<MetricRecord>& baseline);

}  // namespace gaisim
