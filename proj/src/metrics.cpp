#include "gaisim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace gaisim {

SegAccumulator::SegAccumulator(int num_classes) : k_(num_classes) {
  if (num_classes < 2) throw std::invalid_argument("seg metrics: need at least two classes");
  confusion_.assign(static_cast<std::size_t>(k_) * k_, 0);
}

void SegAccumulator::add(const std::vector<int>& pred, const std::vector<int>& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("seg metrics: map size mismatch");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    int p = pred[i], g = gt[i];
    if (p < 0 || p >= k_ || g < 0 || g >= k_) throw std::invalid_argument("seg metrics: label out of range");
    ++confusion_[static_cast<std::size_t>(g) * k_ + p];
  }
}

double SegAccumulator::mean_iou() const {
  double iou_sum = 0.0;
  int present = 0;
  for (int c = 0; c < k_; ++c) {
    long long tp = confusion_[static_cast<std::size_t>(c) * k_ + c];
    long long in_gt = 0, in_pred = 0;
    for (int j = 0; j < k_; ++j) {
      in_gt += confusion_[static_cast<std::size_t>(c) * k_ + j];
      in_pred += confusion_[static_cast<std::size_t>(j) * k_ + c];
    }
    long long uni = in_gt + in_pred - tp;
    if (uni == 0) continue;  // class absent from both maps
    ++present;
    iou_sum += static_cast<double>(tp) / static_cast<double>(uni);
  }
  if (present == 0) throw std::runtime_error("seg metrics: no labels seen");
  return 100.0 * iou_sum / present;
}

double SegAccumulator::pixel_acc() const {
  long long correct = 0, total = 0;
  for (int g = 0; g < k_; ++g)
    for (int p = 0; p < k_; ++p) {
      long long c = confusion_[static_cast<std::size_t>(g) * k_ + p];
      total += c;
      if (g == p) correct += c;
    }
  if (total == 0) throw std::runtime_error("seg metrics: no labels seen");
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

void DepthAccumulator::add(const std::vector<double>& pred, const std::vector<double>& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("depth metrics: map size mismatch");
  const double floor = 1e-6;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!(gt[i] > 0.0)) continue;
    double p = pred[i];
    abs_sum_ += std::abs(p - gt[i]);
    rel_sum_ += std::abs(p - gt[i]) / gt[i];
    double pc = std::max(p, floor);
    double ratio = std::max(pc / gt[i], gt[i] / pc);
    if (ratio < 1.25) ++d1_;
    if (ratio < 1.25 * 1.25) ++d2_;
    if (ratio < 1.25 * 1.25 * 1.25) ++d3_;
    ++count_;
  }
}

DepthScores DepthAccumulator::scores() const {
  if (count_ == 0) throw std::runtime_error("depth metrics: no valid pixels");
  DepthScores s;
  double n = static_cast<double>(count_);
  s.abs_err = abs_sum_ / n;
  s.rel_err = rel_sum_ / n;
  s.delta1 = 100.0 * static_cast<double>(d1_) / n;
  s.delta2 = 100.0 * static_cast<double>(d2_) / n;
  s.delta3 = 100.0 * static_cast<double>(d3_) / n;
  return s;
}

void NormalAccumulator::add(const Tensor& pred, const Tensor& gt) {
  if (!same_shape(pred, gt) || pred.ndim() != 3 || pred.shape[0] != 3)
    throw std::invalid_argument("normal metrics: fields must be [3,H,W] and matching");
  const double eps = 1e-12;
  std::int64_t hw = static_cast<std::int64_t>(pred.shape[1]) * pred.shape[2];
  for (std::int64_t i = 0; i < hw; ++i) {
    double dot = 0.0, np = 0.0, ng = 0.0;
    for (int c = 0; c < 3; ++c) {
      double pv = pred.data[static_cast<std::size_t>(c * hw + i)];
      double gv = gt.data[static_cast<std::size_t>(c * hw + i)];
      dot += pv * gv;
      np += pv * pv;
      ng += gv * gv;
    }
    double denom = std::sqrt(np) * std::sqrt(ng);
    double cosv = denom > eps ? dot / denom : 0.0;
    cosv = std::clamp(cosv, -1.0, 1.0);
    angles_.push_back(std::acos(cosv) * 180.0 / 3.14159265358979323846);
  }
}

NormalScores NormalAccumulator::scores() const {
  if (angles_.empty()) throw std::runtime_error("normal metrics: no pixels");
  NormalScores s;
  std::vector<double> sorted = angles_;
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  long long c1 = 0, c2 = 0, c3 = 0;
  for (double a : sorted) {
    sum += a;
    if (a < 11.25) ++c1;
    if (a < 22.5) ++c2;
    if (a < 30.0) ++c3;
  }
  double n = static_cast<double>(sorted.size());
  s.mean_deg = sum / n;
  std::size_t mid = sorted.size() / 2;
  s.median_deg = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  s.within_1125 = 100.0 * static_cast<double>(c1) / n;
  s.within_225 = 100.0 * static_cast<double>(c2) / n;
  s.within_30 = 100.0 * static_cast<double>(c3) / n;
  return s;
}

ImprovementSummary relative_improvement(const std::vector<MetricRecord>& model,
                                        const std::vector<MetricRecord>& baseline) {
  std::map<std::pair<std::string, std::string>, const MetricRecord*> base_index;
  for (const MetricRecord& r : baseline) base_index[{r.task, r.name}] = &r;

  std::map<std::string, std::pair<double, int>> by_task;  // task -> (sum, count)
  std::vector<std::string> task_order;
  for (const MetricRecord& r : model) {
    auto it = base_index.find({r.task, r.name});
    if (it == base_index.end())
      throw std::invalid_argument("relative_improvement: baseline lacks " + r.task + "/" + r.name);
    const MetricRecord* b = it->second;
    if (b->higher_better != r.higher_better)
      throw std::invalid_argument("relative_improvement: direction mismatch for " + r.task + "/" + r.name);
    if (b->value == 0.0) throw std::invalid_argument("relative_improvement: zero baseline for " + r.task + "/" + r.name);
    double sign = r.higher_better ? 1.0 : -1.0;
    double term = sign * (r.value - b->value) / b->value;
    auto [slot, inserted] = by_task.try_emplace(r.task, std::make_pair(0.0, 0));
    if (inserted) task_order.push_back(r.task);
    slot->second.first += term;
    slot->second.second += 1;
  }
  if (by_task.empty()) throw std::invalid_argument("relative_improvement: no metrics");

  ImprovementSummary out;
  double total = 0.0;
  for (const std::string& task : task_order) {
    auto& [sum, count] = by_task[task];
    TaskDelta d;
    d.task = task;
    d.delta_percent = 100.0 * sum / count;
    total += d.delta_percent;
    out.per_task.push_back(d);
  }
  out.overall_percent = total / static_cast<double>(out.per_task.size());
  return out;
}

}  // namespace gaisim
