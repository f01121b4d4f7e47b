#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <stdexcept>

#include "gaisim/heads.hpp"
#include "gaisim/metrics.hpp"
#include "oracles.hpp"

using namespace gaisim;

namespace {

TaskSpec make_spec(const std::string& name, TaskKind kind, int classes = 0, int hidden = 8) {
  TaskSpec s;
  s.name = name;
  s.kind = kind;
  s.num_classes = classes;
  s.hidden = hidden;
  return s;
}

Var decode_random(Graph& g, ParamBinder& bind, const TaskSpec& spec, int label_h, int label_w,
                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TaskDecoderParams dec = TaskDecoderParams::init(spec, 6, rng);
  Var feature = g.constant(oracle::random_tensor({6, 4, 4}, rng));
  return decode_task(g, feature, dec, spec, label_h, label_w, bind);
}

std::vector<MetricRecord> table_row(double miou, double pixacc, double abs_e, double rel_e,
                                    double d1, double d2, double d3) {
  return {
      {"seg", "miou", miou, true},        {"seg", "pixel_acc", pixacc, true},
      {"depth", "abs_err", abs_e, false}, {"depth", "rel_err", rel_e, false},
      {"depth", "delta_125", d1, true},   {"depth", "delta_125_2", d2, true},
      {"depth", "delta_125_3", d3, true},
  };
}

}  // namespace

TEST_CASE("decoder output shapes track the task kind") {
  Graph g;
  ParamBinder bind(g);
  CHECK(g.val(decode_random(g, bind, make_spec("s", TaskKind::segmentation, 3), 8, 8, 1)).shape ==
        std::vector<int>{3, 8, 8});
  CHECK(g.val(decode_random(g, bind, make_spec("d", TaskKind::depth), 8, 8, 2)).shape ==
        std::vector<int>{1, 8, 8});
  CHECK(g.val(decode_random(g, bind, make_spec("n", TaskKind::surface_normal), 8, 8, 3)).shape ==
        std::vector<int>{3, 8, 8});
  CHECK(g.val(decode_random(g, bind, make_spec("c", TaskKind::classification, 4), 8, 8, 4)).shape ==
        std::vector<int>{4});
  // label already at feature resolution: no resampling stage
  CHECK(g.val(decode_random(g, bind, make_spec("k", TaskKind::keypoint), 4, 4, 5)).shape ==
        std::vector<int>{1, 4, 4});
  CHECK(g.val(decode_random(g, bind, make_spec("e", TaskKind::edge), 8, 8, 6)).shape ==
        std::vector<int>{1, 8, 8});
}

TEST_CASE("task validation rejects bad settings") {
  TaskSpec s = make_spec("seg", TaskKind::segmentation, 3);
  s.dilation = 7;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  CHECK_THROWS_AS(make_spec("seg", TaskKind::segmentation, 1).validate(), std::invalid_argument);
  CHECK_THROWS_AS(make_spec("cls", TaskKind::classification, 1).validate(), std::invalid_argument);
  CHECK_THROWS_AS(make_spec("", TaskKind::depth).validate(), std::invalid_argument);
  TaskSpec w = make_spec("d", TaskKind::depth);
  w.loss_weight = 0.0;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  CHECK_NOTHROW(make_spec("d", TaskKind::depth).validate());
  for (TaskKind k : {TaskKind::segmentation, TaskKind::depth, TaskKind::surface_normal,
                     TaskKind::keypoint, TaskKind::edge, TaskKind::classification})
    CHECK(task_kind_from_string(task_kind_name(k)) == k);
  CHECK_THROWS_AS(task_kind_from_string("pose"), std::invalid_argument);
}

TEST_CASE("uniform logits cost the log of the class count") {
  Graph g;
  Var logits = g.constant(Tensor({3, 2, 2}, 0.7));
  Var loss = g.softmax_cross_entropy(logits, {0, 2, 1, -1}, -1);
  CHECK(g.val(loss)(0) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("masked absolute error averages the kept elements only") {
  Graph g;
  Var pred = g.constant(Tensor::from({4}, {1.0, 100.0, 4.0, 2.0}));
  Tensor target({4}, 0.0);
  Var loss = g.l1_loss(pred, target, {1, 0, 1, 1});
  CHECK(g.val(loss)(0) == doctest::Approx((1.0 + 4.0 + 2.0) / 3.0).epsilon(1e-12));
}

TEST_CASE("cosine loss hits its three landmark values") {
  Tensor up({3, 1, 2}, 0.0);
  up.at3(2, 0, 0) = 1.0;
  up.at3(2, 0, 1) = 1.0;

  Tensor aligned = up;
  aligned.data[4] = 3.0;  // same direction, different length
  aligned.data[5] = 3.0;
  Tensor opposed({3, 1, 2}, 0.0);
  opposed.at3(2, 0, 0) = -1.0;
  opposed.at3(2, 0, 1) = -1.0;
  Tensor ortho({3, 1, 2}, 0.0);
  ortho.at3(0, 0, 0) = 2.0;
  ortho.at3(0, 0, 1) = 2.0;

  Graph g;
  CHECK(g.val(g.cosine_loss(g.constant(aligned), up))(0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(g.val(g.cosine_loss(g.constant(opposed), up))(0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(g.val(g.cosine_loss(g.constant(ortho), up))(0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("total loss applies the per-task weights") {
  Graph g;
  Var a = g.constant(Tensor::scalar(2.0));
  Var b = g.constant(Tensor::scalar(3.0));
  CHECK(g.val(total_loss(g, {a, b}, {0.5, 2.0}))(0) == 7.0);
  CHECK_THROWS_AS(total_loss(g, {a, b}, {0.5}), std::invalid_argument);
}

TEST_CASE("decoder registration distinguishes dense and pooled heads") {
  std::mt19937_64 rng(7);
  TaskSpec seg = make_spec("s", TaskKind::segmentation, 3);
  TaskDecoderParams d1 = TaskDecoderParams::init(seg, 6, rng);
  std::vector<std::pair<std::string, Tensor*>> names;
  d1.register_params(names, "dec0.", seg);
  REQUIRE(names.size() == 6);
  CHECK(names[0].first == "dec0.layer1.weight");
  CHECK(names[4].first == "dec0.layer3.weight");

  TaskSpec cls = make_spec("c", TaskKind::classification, 4);
  TaskDecoderParams d2 = TaskDecoderParams::init(cls, 6, rng);
  names.clear();
  d2.register_params(names, "dec1.", cls);
  REQUIRE(names.size() == 6);
  CHECK(names[4].first == "dec1.cls.weight");
  CHECK(names[5].first == "dec1.cls.bias");
}

TEST_CASE("decoder backward reaches every registered parameter") {
  for (TaskSpec spec : {make_spec("s", TaskKind::segmentation, 3, 4),
                        make_spec("c", TaskKind::classification, 3, 4)}) {
    std::mt19937_64 rng(8);
    TaskDecoderParams dec = TaskDecoderParams::init(spec, 3, rng);
    std::vector<std::pair<std::string, Tensor*>> named;
    dec.register_params(named, "dec.", spec);
    for (auto& [name, t] : named) {
      t->requires_grad = true;
      t->ensure_grad();
      t->zero_grad();
    }
    Graph g;
    ParamBinder bind(g);
    Var feature = g.constant(oracle::random_tensor({3, 4, 4}, rng));
    Var out = decode_task(g, feature, dec, spec, 6, 6, bind);
    g.backward(g.sum(g.mul(out, out)));
    for (auto& [name, t] : named) {
      INFO(name);
      double mag = 0.0;
      for (double v : t->grad) mag += std::abs(v);
      CHECK(mag > 0.0);
    }
  }
}

TEST_CASE("segmentation scores on a worked example") {
  SegAccumulator acc(3);
  acc.add({0, 1, 1, 2}, {0, 1, 2, 2});
  CHECK(acc.pixel_acc() == doctest::Approx(75.0).epsilon(1e-12));
  CHECK(acc.mean_iou() == doctest::Approx(200.0 / 3.0).epsilon(1e-12));

  // class 2 never appears: averaged over the two classes that do
  SegAccumulator sparse(3);
  sparse.add({0, 1}, {0, 0});
  CHECK(sparse.mean_iou() == doctest::Approx((0.5 + 0.0) / 2.0 * 100.0).epsilon(1e-12));
  CHECK(sparse.pixel_acc() == doctest::Approx(50.0).epsilon(1e-12));
}

TEST_CASE("depth scores on a worked example") {
  DepthAccumulator acc;
  acc.add({1.2, 2.0, 5.5}, {1.0, 2.0, 4.0});
  DepthScores s = acc.scores();
  CHECK(s.abs_err == doctest::Approx((0.2 + 0.0 + 1.5) / 3.0).epsilon(1e-12));
  CHECK(s.rel_err == doctest::Approx((0.2 + 0.0 + 0.375) / 3.0).epsilon(1e-12));
  CHECK(s.delta1 == doctest::Approx(200.0 / 3.0).epsilon(1e-12));
  CHECK(s.delta2 == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(s.delta3 == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("depth thresholds are strict and invalid pixels are skipped") {
  DepthAccumulator edge;
  edge.add({1.25}, {1.0});  // ratio exactly 1.25 does not count as delta1
  CHECK(edge.scores().delta1 == 0.0);
  CHECK(edge.scores().delta2 == 100.0);

  DepthAccumulator masked;
  masked.add({9.0, 2.0}, {0.0, 2.0});  // first pixel has no ground truth
  CHECK(masked.scores().abs_err == 0.0);
  CHECK(masked.scores().delta1 == 100.0);

  DepthAccumulator neg;
  neg.add({-1.0, 1.0}, {1.0, 1.0});  // negative prediction is floored for the ratio
  CHECK(neg.scores().abs_err == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(neg.scores().delta3 == 50.0);
}

TEST_CASE("normal angles on a worked example") {
  Tensor gt({3, 1, 2}, 0.0);
  gt.at3(2, 0, 0) = 1.0;
  gt.at3(2, 0, 1) = 1.0;
  Tensor pred({3, 1, 2}, 0.0);
  pred.at3(2, 0, 0) = 4.0;               // aligned, longer: still zero degrees
  pred.at3(0, 0, 1) = 1.0;
  pred.at3(2, 0, 1) = 1.0;               // 45 degrees off

  NormalAccumulator acc;
  acc.add(pred, gt);
  NormalScores s = acc.scores();
  CHECK(s.mean_deg == doctest::Approx(22.5).epsilon(1e-9));
  CHECK(s.median_deg == doctest::Approx(22.5).epsilon(1e-9));
  CHECK(s.within_1125 == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(s.within_225 == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(s.within_30 == doctest::Approx(50.0).epsilon(1e-12));
}

TEST_CASE("reference two-task comparison reproduces from the raw numbers") {
  auto single = table_row(40.2, 74.7, 0.017, 0.33, 70.3, 86.3, 93.3);
  auto multi = table_row(37.7, 73.8, 0.018, 0.34, 72.4, 88.3, 94.2);
  auto gai = table_row(46.2, 75.4, 0.015, 0.30, 76.9, 90.7, 95.3);

  ImprovementSummary mt = relative_improvement(multi, single);
  REQUIRE(mt.per_task.size() == 2);
  CHECK(mt.per_task[0].task == "seg");
  CHECK(std::abs(mt.per_task[0].delta_percent - (-3.71)) < 0.01);
  CHECK(std::abs(mt.per_task[1].delta_percent - (-0.53)) < 0.01);
  CHECK(std::abs(mt.overall_percent - (-2.12)) < 0.01);

  ImprovementSummary gi = relative_improvement(gai, single);
  CHECK(std::abs(gi.per_task[0].delta_percent - 7.92) < 0.05);
}

TEST_CASE("improvement accounting flips sign for lower-better metrics") {
  std::vector<MetricRecord> base = {{"d", "abs_err", 10.0, false}};
  std::vector<MetricRecord> model = {{"d", "abs_err", 8.0, false}};
  ImprovementSummary s = relative_improvement(model, base);
  CHECK(s.overall_percent == doctest::Approx(20.0).epsilon(1e-12));
}

TEST_CASE("improvement accounting rejects mismatched inputs") {
  std::vector<MetricRecord> base = {{"d", "abs_err", 10.0, false}};
  std::vector<MetricRecord> extra = {{"d", "abs_err", 8.0, false}, {"d", "rel_err", 1.0, false}};
  CHECK_THROWS_AS(relative_improvement(extra, base), std::invalid_argument);

  std::vector<MetricRecord> flipped = {{"d", "abs_err", 8.0, true}};
  CHECK_THROWS_AS(relative_improvement(flipped, base), std::invalid_argument);

  std::vector<MetricRecord> zero = {{"d", "abs_err", 0.0, false}};
  CHECK_THROWS_AS(relative_improvement(base, zero), std::invalid_argument);

  CHECK_THROWS_AS(relative_improvement({}, {}), std::invalid_argument);
}
