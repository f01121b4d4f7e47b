#include "gaisim/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>

#include "gaisim/random.hpp"

namespace gaisim {

namespace {

std::string fmt_double(double v, const char* spec = "%.12g") {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

ModelVariant variant_from_string(const std::string& s) {
  if (s == "single_task") return ModelVariant::single_task;
  if (s == "basic_multitask") return ModelVariant::basic_multitask;
  if (s == "gai_w") return ModelVariant::gai_without_attention;
  if (s == "simp_att") return ModelVariant::gai_simple_attention;
  if (s == "full") return ModelVariant::gai_full;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

std::string variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::single_task: return "single_task";
    case ModelVariant::basic_multitask: return "basic_multitask";
    case ModelVariant::gai_without_attention: return "gai_w";
    case ModelVariant::gai_simple_attention: return "simp_att";
    case ModelVariant::gai_full: return "full";
  }
  return "?";
}

void RunConfig::validate() {
  encoder.validate();
  if (tasks.empty()) throw std::invalid_argument("config: needs at least one task");
  for (TaskSpec& t : tasks) {
    t.validate();
    if (t.kind == TaskKind::segmentation && t.num_classes != data.classes)
      throw std::invalid_argument("config: segmentation classes must match the dataset");
  }
  gai.num_nodes = static_cast<int>(encoder.blocks.size());
  gai.num_tasks = static_cast<int>(tasks.size());
  gai.validate();
  if (optim.lr <= 0.0 || optim.batch_size < 1 || optim.max_epochs < 1 || optim.patience < 1)
    throw std::invalid_argument("config: bad optimizer settings");
  if (data.h != encoder.in_h || data.w != encoder.in_w)
    throw std::invalid_argument("config: dataset resolution must match the encoder input");
  if (data.classes < 2 || data.train_scenes < 1 || data.val_scenes < 1)
    throw std::invalid_argument("config: bad dataset settings");
  if (bandwidth.target_ratio < 0.0) throw std::invalid_argument("config: bandwidth ratio must be positive");
}

AdapterParams make_adapter(int feature_channels, int c_ds, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  AdapterParams a;
  a.c_ds = c_ds;
  a.down.weight = fan_uniform({c_ds, feature_channels, 1, 1}, feature_channels, c_ds, rng);
  a.down.bias = Tensor({c_ds});
  a.up.weight = fan_uniform({feature_channels, c_ds, 1, 1}, c_ds, feature_channels, rng);
  a.up.bias = Tensor({feature_channels});
  return a;
}

bool Model::uses_gai() const {
  return kind == ModelVariant::gai_full || kind == ModelVariant::gai_without_attention ||
         kind == ModelVariant::gai_simple_attention;
}

Model Model::build(const RunConfig& cfg_in, ModelVariant variant, int single_task_index) {
  Model m;
  m.cfg = cfg_in;
  m.cfg.validate();
  m.kind = variant;
  m.task_index = variant == ModelVariant::single_task ? single_task_index : -1;
  if (variant == ModelVariant::single_task) {
    if (single_task_index < 0 || single_task_index >= static_cast<int>(m.cfg.tasks.size()))
      throw std::invalid_argument("model: single-task index out of range");
    m.specs = {m.cfg.tasks[static_cast<std::size_t>(single_task_index)]};
  } else {
    m.specs = m.cfg.tasks;
  }

  auto shapes = m.cfg.encoder.block_shapes();
  m.out_h = shapes.back()[1];
  m.out_w = shapes.back()[2];

  std::uint64_t stream = 0x5150 + 16 * static_cast<std::uint64_t>(variant) +
                         static_cast<std::uint64_t>(std::max(single_task_index, 0));
  std::mt19937_64 rng(mix_seed(m.cfg.seed, stream));
  m.encoder = EncoderParams::init(m.cfg.encoder, rng);

  if (m.uses_gai()) {
    GaiConfig gcfg = m.cfg.gai;
    gcfg.num_tasks = static_cast<int>(m.specs.size());
    switch (variant) {
      case ModelVariant::gai_without_attention: gcfg.variant = GaiVariant::without_attention; break;
      case ModelVariant::gai_simple_attention: gcfg.variant = GaiVariant::simple_attention; break;
      default: gcfg.variant = GaiVariant::full; break;
    }
    std::vector<int> node_channels;
    for (const auto& s : shapes) node_channels.push_back(s[0]);
    m.gai = GaiParams::init(gcfg, node_channels, rng);
    m.feature_channels = gcfg.c_out;
  } else {
    m.feature_channels = m.cfg.encoder.blocks.back().channels;
  }

  for (const TaskSpec& spec : m.specs)
    m.decoders.push_back(TaskDecoderParams::init(spec, m.feature_channels, rng));

  if (m.cfg.bandwidth.enabled()) {
    long long n = static_cast<long long>(m.cfg.encoder.in_channels) * m.cfg.encoder.in_h * m.cfg.encoder.in_w;
    CdsResult c = solve_cds(m.cfg.bandwidth.target_ratio, n, m.out_h, m.out_w);
    if (c.c_ds != m.feature_channels)
      m.adapter = make_adapter(m.feature_channels, c.c_ds, mix_seed(m.cfg.seed, 0xADA0 + static_cast<std::uint64_t>(c.c_ds)));
  }
  return m;
}

std::vector<std::pair<std::string, Tensor*>> Model::named_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  encoder.register_params(out, "encoder.");
  if (uses_gai()) gai.register_params(out, "gai.");
  for (std::size_t t = 0; t < decoders.size(); ++t)
    decoders[t].register_params(out, "dec" + std::to_string(t) + ".", specs[t]);
  if (adapter) {
    out.emplace_back("adapter.down.weight", &adapter->down.weight);
    out.emplace_back("adapter.down.bias", &adapter->down.bias);
    out.emplace_back("adapter.up.weight", &adapter->up.weight);
    out.emplace_back("adapter.up.bias", &adapter->up.bias);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

std::vector<Tensor> Model::snapshot_params() {
  std::vector<Tensor> snap;
  for (auto& [name, t] : named_params()) snap.push_back(*t);
  return snap;
}

void Model::restore_params(const std::vector<Tensor>& snap) {
  auto params = named_params();
  if (snap.size() != params.size()) throw std::invalid_argument("model: snapshot size mismatch");
  for (std::size_t i = 0; i < snap.size(); ++i) {
    if (snap[i].shape != params[i].second->shape) throw std::invalid_argument("model: snapshot shape mismatch");
    params[i].second->data = snap[i].data;
  }
}

Var Model::transmit_one(Graph& g, Var z, ChannelSim& sim, ParamBinder& bind) {
  if (adapter) z = g.conv2d(z, bind(adapter->down.weight), bind(adapter->down.bias));
  Var zh = sim.transmit(g, z);
  if (adapter) zh = g.conv2d(zh, bind(adapter->up.weight), bind(adapter->up.bias));
  return zh;
}

Var Model::task_loss(Graph& g, Var pred, const TaskSpec& spec, const Scene& scene) {
  switch (spec.kind) {
    case TaskKind::segmentation:
      return g.softmax_cross_entropy(pred, scene.seg);
    case TaskKind::depth:
      return g.l1_loss(pred, scene.depth);
    case TaskKind::keypoint:
      return g.l1_loss(pred, scene.keypoints);
    case TaskKind::edge: {
      Tensor target({1, scene.h, scene.w});
      for (std::size_t i = 0; i < scene.edges.size(); ++i) target.data[i] = scene.edges[i];
      return g.l1_loss(pred, std::move(target));
    }
    case TaskKind::surface_normal:
      return g.cosine_loss(pred, scene.normals);
    case TaskKind::classification:
      return g.softmax_cross_entropy(g.reshape(pred, {spec.num_classes, 1, 1}), {scene.class_label});
  }
  throw std::logic_error("task_loss: unhandled kind");
}

Model::Forward Model::forward(Graph& g, const Scene& scene, ChannelSim& sim,
                              const std::vector<double>& weights, bool want_predictions) {
  if (scene.h != cfg.encoder.in_h || scene.w != cfg.encoder.in_w)
    throw std::invalid_argument("forward: scene resolution does not match the encoder");
  sim.begin_sample();
  ParamBinder bind(g);
  Var image = g.constant(scene.image);
  std::vector<Var> features = encode_collect(g, image, encoder, bind);

  std::vector<Var> received(specs.size());
  if (uses_gai()) {
    std::vector<Var> z = gai_forward(g, features, gai, bind, out_h, out_w);
    for (std::size_t t = 0; t < specs.size(); ++t) received[t] = transmit_one(g, z[t], sim, bind);
  } else {
    Var zh = transmit_one(g, features.back(), sim, bind);
    for (std::size_t t = 0; t < specs.size(); ++t) received[t] = zh;
  }

  Forward out;
  for (std::size_t t = 0; t < specs.size(); ++t) {
    Var pred = decode_task(g, received[t], decoders[t], specs[t], scene.h, scene.w, bind);
    if (want_predictions) out.predictions.push_back(g.val(pred));
    out.task_losses.push_back(task_loss(g, pred, specs[t], scene));
  }
  out.total = total_loss(g, out.task_losses, weights);
  return out;
}

Adam::Adam(const OptimConfig& cfg) : lr_(cfg.lr), b1_(cfg.beta1), b2_(cfg.beta2), eps_(cfg.eps) {}

void Adam::step(const std::vector<std::pair<std::string, Tensor*>>& params) {
  ++t_;
  double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (const auto& [name, t] : params) {
    if (!t->has_grad()) throw std::runtime_error("adam: no gradient for " + name);
    auto& [m, v] = slots_[t];
    if (m.empty()) {
      m.assign(t->data.size(), 0.0);
      v.assign(t->data.size(), 0.0);
    }
    for (std::size_t i = 0; i < t->data.size(); ++i) {
      double g = t->grad[i];
      m[i] = b1_ * m[i] + (1.0 - b1_) * g;
      v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      t->data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

namespace {

std::vector<double> calibrate_weights(Model& model, const std::vector<Scene>& train_scenes,
                                      ChannelSim& sim) {
  int batch = std::min<int>(model.cfg.optim.batch_size, static_cast<int>(train_scenes.size()));
  std::vector<double> sums(model.specs.size(), 0.0);
  std::vector<double> ones(model.specs.size(), 1.0);
  for (int i = 0; i < batch; ++i) {
    Graph g;
    auto fwd = model.forward(g, train_scenes[static_cast<std::size_t>(i)], sim, ones, false);
    for (std::size_t t = 0; t < sums.size(); ++t) sums[t] += g.val(fwd.task_losses[t])(0);
  }
  std::vector<double> weights(model.specs.size());
  for (std::size_t t = 0; t < weights.size(); ++t)
    weights[t] = 1.0 / std::max(sums[t] / batch, 1e-8);
  return weights;
}

}  // namespace

double evaluate_total_loss(Model& model, const std::vector<Scene>& scenes, ChannelSim& sim,
                           const std::vector<double>& weights) {
  double acc = 0.0;
  for (const Scene& s : scenes) {
    Graph g;
    auto fwd = model.forward(g, s, sim, weights, false);
    acc += g.val(fwd.total)(0);
  }
  return acc / static_cast<double>(scenes.size());
}

TrainResult train_model(Model& model, const std::vector<Scene>& train_scenes,
                        const std::vector<Scene>& val_scenes,
                        const std::vector<double>* preset_weights) {
  if (train_scenes.empty() || val_scenes.empty())
    throw std::invalid_argument("train: empty dataset");
  const OptimConfig& opt = model.cfg.optim;
  ChannelConfig train_ch = model.cfg.channel;
  train_ch.seed = mix_seed(model.cfg.seed, 0x7EA1);
  ChannelSim train_sim(train_ch);
  ChannelConfig val_ch = model.cfg.channel;
  std::uint64_t val_seed = mix_seed(model.cfg.seed, 0x7EA2);
  val_ch.seed = val_seed;
  ChannelSim val_sim(val_ch);

  TrainResult res;
  if (preset_weights) {
    if (preset_weights->size() != model.specs.size())
      throw std::invalid_argument("train: weight count mismatch");
    res.weights = *preset_weights;
  } else if (opt.auto_balance) {
    res.weights = calibrate_weights(model, train_scenes, train_sim);
  } else {
    for (const TaskSpec& s : model.specs) res.weights.push_back(s.loss_weight);
  }

  auto params = model.named_params();
  Adam adam(opt);

  val_sim.reseed(val_seed);
  res.initial_val_loss = evaluate_total_loss(model, val_scenes, val_sim, res.weights);
  res.best_val_loss = res.initial_val_loss;
  std::vector<Tensor> best = model.snapshot_params();
  int since_best = 0;

  std::vector<std::size_t> order(train_scenes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < opt.max_epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(mix_seed(model.cfg.seed, 0xE000 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
      Graph g;
      Var acc;
      for (std::size_t i = start; i < stop; ++i) {
        auto fwd = model.forward(g, train_scenes[order[i]], train_sim, res.weights, false);
        acc = acc.valid() ? g.add(acc, fwd.total) : fwd.total;
      }
      Var loss = g.scale(acc, 1.0 / static_cast<double>(stop - start));
      for (auto& [name, t] : params) {
        t->requires_grad = true;
        t->ensure_grad();
        t->zero_grad();
      }
      try {
        g.backward(loss);
      } catch (const std::exception& e) {
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      adam.step(params);
      res.step_loss.push_back(g.val(loss)(0));
      if (!std::isfinite(res.step_loss.back()))
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch));
    }

    val_sim.reseed(val_seed);
    double vloss = evaluate_total_loss(model, val_scenes, val_sim, res.weights);
    res.epoch_val_loss.push_back(vloss);
    res.epochs_run = epoch + 1;
    if (vloss < res.best_val_loss) {
      res.best_val_loss = vloss;
      res.best_epoch = epoch;
      best = model.snapshot_params();
      since_best = 0;
    } else if (++since_best >= opt.patience) {
      break;
    }
  }

  model.restore_params(best);
  return res;
}

std::vector<MetricRecord> evaluate_model_metrics(Model& model, const std::vector<Scene>& scenes,
                                                 ChannelSim& sim, const std::vector<double>& weights) {
  if (scenes.empty()) throw std::invalid_argument("evaluate: empty scene set");
  std::vector<SegAccumulator> seg_acc;
  std::vector<DepthAccumulator> depth_acc(model.specs.size());
  std::vector<NormalAccumulator> normal_acc(model.specs.size());
  std::vector<long long> cls_hits(model.specs.size(), 0);
  std::vector<double> loss_sums(model.specs.size(), 0.0);
  for (const TaskSpec& s : model.specs)
    seg_acc.emplace_back(s.kind == TaskKind::segmentation ? s.num_classes : 2);

  for (const Scene& scene : scenes) {
    Graph g;
    auto fwd = model.forward(g, scene, sim, weights, true);
    for (std::size_t t = 0; t < model.specs.size(); ++t) {
      loss_sums[t] += g.val(fwd.task_losses[t])(0);
      const TaskSpec& spec = model.specs[t];
      const Tensor& pred = fwd.predictions[t];
      switch (spec.kind) {
        case TaskKind::segmentation: {
          std::vector<int> labels(static_cast<std::size_t>(scene.h) * scene.w);
          std::int64_t hw = static_cast<std::int64_t>(scene.h) * scene.w;
          for (std::int64_t p = 0; p < hw; ++p) {
            int bestc = 0;
            double bestv = pred.data[static_cast<std::size_t>(p)];
            for (int c = 1; c < spec.num_classes; ++c) {
              double v = pred.data[static_cast<std::size_t>(c * hw + p)];
              if (v > bestv) {
                bestv = v;
                bestc = c;
              }
            }
            labels[static_cast<std::size_t>(p)] = bestc;
          }
          seg_acc[t].add(labels, scene.seg);
          break;
        }
        case TaskKind::depth:
          depth_acc[t].add(pred.data, scene.depth.data);
          break;
        case TaskKind::surface_normal:
          normal_acc[t].add(pred, scene.normals);
          break;
        case TaskKind::classification: {
          int bestc = 0;
          for (int c = 1; c < spec.num_classes; ++c)
            if (pred.data[static_cast<std::size_t>(c)] > pred.data[static_cast<std::size_t>(bestc)]) bestc = c;
          if (bestc == scene.class_label) ++cls_hits[t];
          break;
        }
        default:
          break;  // keypoint and edge report their loss
      }
    }
  }

  std::vector<MetricRecord> records;
  double n = static_cast<double>(scenes.size());
  for (std::size_t t = 0; t < model.specs.size(); ++t) {
    const TaskSpec& spec = model.specs[t];
    const std::string& task = spec.name;
    switch (spec.kind) {
      case TaskKind::segmentation:
        records.push_back({task, "miou", seg_acc[t].mean_iou(), true});
        records.push_back({task, "pixel_acc", seg_acc[t].pixel_acc(), true});
        break;
      case TaskKind::depth: {
        DepthScores s = depth_acc[t].scores();
        records.push_back({task, "abs_err", s.abs_err, false});
        records.push_back({task, "rel_err", s.rel_err, false});
        records.push_back({task, "delta_125", s.delta1, true});
        records.push_back({task, "delta_125_2", s.delta2, true});
        records.push_back({task, "delta_125_3", s.delta3, true});
        break;
      }
      case TaskKind::surface_normal: {
        NormalScores s = normal_acc[t].scores();
        records.push_back({task, "mean_deg", s.mean_deg, false});
        records.push_back({task, "median_deg", s.median_deg, false});
        records.push_back({task, "within_11_25", s.within_1125, true});
        records.push_back({task, "within_22_5", s.within_225, true});
        records.push_back({task, "within_30", s.within_30, true});
        break;
      }
      case TaskKind::classification:
        records.push_back({task, "accuracy", 100.0 * static_cast<double>(cls_hits[t]) / n, true});
        break;
      default:
        break;
    }
    records.push_back({task, "loss", loss_sums[t] / n, false});
  }
  return records;
}

std::vector<ResultRow> evaluate_sweep(Model& model, const std::vector<Scene>& val_scenes,
                                      const SweepSpec& sweep, const std::vector<double>& weights,
                                      const std::string& run_id) {
  if (sweep.modes.empty()) throw std::invalid_argument("sweep: no channel modes");
  long long n_source = static_cast<long long>(model.cfg.encoder.in_channels) * model.cfg.encoder.in_h *
                       model.cfg.encoder.in_w;
  std::vector<ResultRow> rows;
  std::uint64_t cell = 0;
  std::optional<AdapterParams> original = model.adapter;

  for (ChannelMode mode : sweep.modes) {
    std::vector<double> snrs = mode == ChannelMode::noiseless
                                   ? std::vector<double>{std::numeric_limits<double>::infinity()}
                                   : sweep.snrs_db;
    if (snrs.empty()) throw std::invalid_argument("sweep: no SNR points");
    for (double snr : snrs) {
      std::vector<double> ratios = sweep.ratios.empty() ? std::vector<double>{0.0} : sweep.ratios;
      for (double target : ratios) {
        double achieved;
        if (target > 0.0) {
          CdsResult c = solve_cds(target, n_source, model.out_h, model.out_w);
          achieved = c.achieved.to_double();
          if (c.c_ds == model.feature_channels) {
            model.adapter.reset();
          } else if (original && original->c_ds == c.c_ds) {
            model.adapter = original;
          } else {
            model.adapter = make_adapter(model.feature_channels, c.c_ds,
                                         mix_seed(model.cfg.seed, 0xADA0 + static_cast<std::uint64_t>(c.c_ds)));
          }
        } else {
          model.adapter = original;
          int c_tx = original ? original->c_ds : model.feature_channels;
          achieved = bandwidth_ratio(model.cfg.encoder.in_channels, model.cfg.encoder.in_h,
                                     model.cfg.encoder.in_w, c_tx, model.out_h, model.out_w)
                         .ratio.to_double();
        }

        ChannelConfig ch = model.cfg.channel;
        ch.mode = mode;
        ch.snr_db = snr;
        ch.seed = mix_seed(sweep.eval_seed, cell++);
        ChannelSim sim(ch);
        auto records = evaluate_model_metrics(model, val_scenes, sim, weights);
        for (const MetricRecord& r : records) {
          ResultRow row;
          row.run_id = run_id;
          row.variant = variant_name(model.kind);
          row.task = r.task;
          row.metric = r.name;
          row.direction = r.higher_better ? "higher_better" : "lower_better";
          row.snr_db = snr;
          row.bandwidth_ratio = achieved;
          row.channel_mode = channel_mode_name(mode);
          row.seed = model.cfg.seed;
          row.value = r.value;
          rows.push_back(std::move(row));
        }
      }
    }
  }
  model.adapter = original;
  return rows;
}

AblationOutcome run_ablation(const RunConfig& cfg_in, const std::vector<ModelVariant>& variants,
                             const std::string& run_id) {
  RunConfig cfg = cfg_in;
  cfg.validate();
  if (variants.empty()) throw std::invalid_argument("ablation: no variants");

  auto train_scenes = generate_dataset(mix_seed(cfg.data.seed, 1), cfg.data.train_scenes,
                                       cfg.data.h, cfg.data.w, cfg.data.classes);
  auto val_scenes = generate_dataset(mix_seed(cfg.data.seed, 2), cfg.data.val_scenes,
                                     cfg.data.h, cfg.data.w, cfg.data.classes);

  AblationOutcome out;
  // one calibration pass shared by every variant keeps the losses comparable
  if (cfg.optim.auto_balance) {
    Model probe = Model::build(cfg, ModelVariant::gai_full);
    ChannelConfig ch = cfg.channel;
    ch.seed = mix_seed(cfg.seed, 0x7EA1);
    ChannelSim sim(ch);
    std::vector<double> ones(cfg.tasks.size(), 1.0);
    std::vector<double> sums(cfg.tasks.size(), 0.0);
    int batch = std::min<int>(cfg.optim.batch_size, static_cast<int>(train_scenes.size()));
    for (int i = 0; i < batch; ++i) {
      Graph g;
      auto fwd = probe.forward(g, train_scenes[static_cast<std::size_t>(i)], sim, ones, false);
      for (std::size_t t = 0; t < sums.size(); ++t) sums[t] += g.val(fwd.task_losses[t])(0);
    }
    for (std::size_t t = 0; t < sums.size(); ++t)
      out.shared_weights.push_back(1.0 / std::max(sums[t] / batch, 1e-8));
  } else {
    for (const TaskSpec& t : cfg.tasks) out.shared_weights.push_back(t.loss_weight);
  }

  std::vector<MetricRecord> single_records;
  for (ModelVariant v : variants) {
    VariantRun run;
    run.variant = v;
    std::vector<MetricRecord> records;
    ChannelConfig eval_ch = cfg.channel;
    eval_ch.seed = mix_seed(cfg.seed, 0xE7A1);

    if (v == ModelVariant::single_task) {
      for (std::size_t t = 0; t < cfg.tasks.size(); ++t) {
        Model m = Model::build(cfg, v, static_cast<int>(t));
        std::vector<double> w = {out.shared_weights[t]};
        run.trains.push_back(train_model(m, train_scenes, val_scenes, &w));
        ChannelSim sim(eval_ch);
        auto recs = evaluate_model_metrics(m, val_scenes, sim, w);
        records.insert(records.end(), recs.begin(), recs.end());
      }
    } else {
      Model m = Model::build(cfg, v);
      run.trains.push_back(train_model(m, train_scenes, val_scenes, &out.shared_weights));
      ChannelSim sim(eval_ch);
      records = evaluate_model_metrics(m, val_scenes, sim, out.shared_weights);
    }
    run.metrics = records;
    if (v == ModelVariant::single_task) single_records = records;

    for (const MetricRecord& r : records) {
      ResultRow row;
      row.run_id = run_id;
      row.variant = variant_name(v);
      row.task = r.task;
      row.metric = r.name;
      row.direction = r.higher_better ? "higher_better" : "lower_better";
      row.snr_db = cfg.channel.mode == ChannelMode::noiseless ? std::numeric_limits<double>::infinity()
                                                              : cfg.channel.snr_db;
      row.bandwidth_ratio = 0.0;
      row.channel_mode = channel_mode_name(cfg.channel.mode);
      row.seed = cfg.seed;
      row.value = r.value;
      out.rows.push_back(std::move(row));
    }
    out.runs.push_back(std::move(run));
  }

  if (!single_records.empty()) {
    // tasks with real metrics drop the generic loss row from the comparison
    auto comparison_set = [](const std::vector<MetricRecord>& recs) {
      std::vector<MetricRecord> kept;
      for (const MetricRecord& r : recs) {
        if (r.name != "loss") {
          kept.push_back(r);
          continue;
        }
        bool only_loss = true;
        for (const MetricRecord& o : recs)
          if (o.task == r.task && o.name != "loss") only_loss = false;
        if (only_loss) kept.push_back(r);
      }
      return kept;
    };
    auto base = comparison_set(single_records);
    for (const VariantRun& run : out.runs) {
      if (run.variant == ModelVariant::single_task) continue;
      out.deltas.emplace_back(variant_name(run.variant),
                              relative_improvement(comparison_set(run.metrics), base));
    }
  }
  return out;
}

std::vector<std::vector<double>> task_node_weights(Model& model, const std::vector<Scene>& batch) {
  if (model.kind != ModelVariant::gai_full && model.kind != ModelVariant::gai_without_attention &&
      model.kind != ModelVariant::gai_simple_attention)
    throw std::invalid_argument("task_node_weights: model has no inter-block module");
  if (batch.empty()) throw std::invalid_argument("task_node_weights: empty batch");
  int tcount = static_cast<int>(model.specs.size());
  int ncount = model.gai.cfg.num_nodes;
  std::vector<std::vector<double>> acc(static_cast<std::size_t>(tcount),
                                       std::vector<double>(static_cast<std::size_t>(ncount), 0.0));
  for (const Scene& scene : batch) {
    Graph g;
    ParamBinder bind(g);
    Var image = g.constant(scene.image);
    auto features = encode_collect(g, image, model.encoder, bind);
    auto ft = feature_transform(g, features, model.gai, bind, model.out_h, model.out_w);
    Var states = graph_attention_run(g, ft.v0, model.gai, bind);
    auto e = relation_mapping(g, states, model.gai, bind);
    for (int t = 0; t < tcount; ++t)
      for (int i = 0; i < ncount; ++i) {
        const Tensor& v = g.val(e[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)]);
        double mean = 0.0;
        for (double x : v.data) mean += x;
        acc[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] += mean / static_cast<double>(v.numel());
      }
  }
  for (auto& row : acc)
    for (double& v : row) v /= static_cast<double>(batch.size());
  return acc;
}

FlopReport flop_report(const GaiConfig& cfg, const std::vector<std::array<int, 3>>& block_shapes,
                       int out_h, int out_w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<int> channels;
  for (const auto& s : block_shapes) channels.push_back(s[0]);
  GaiParams params = GaiParams::init(cfg, channels, rng);

  Graph g;
  ParamBinder bind(g);
  std::vector<Var> features;
  for (const auto& s : block_shapes) features.push_back(g.constant(uniform_tensor({s[0], s[1], s[2]}, 1.0, rng)));

  FlopReport report;
  gai_forward(g, features, params, bind, out_h, out_w, &report.measured);
  report.analytic = gai_flop_formula(cfg, block_shapes, out_h, out_w);
  report.match = report.measured == report.analytic;
  return report;
}

// ---- file output ----

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  return f;
}

}  // namespace

void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::ofstream f = open_out(path);
  f << "run_id,variant,task,metric,direction,snr_db,bandwidth_ratio,channel_mode,seed,value\n";
  for (const ResultRow& r : rows) {
    f << r.run_id << ',' << r.variant << ',' << r.task << ',' << r.metric << ',' << r.direction << ','
      << fmt_double(r.snr_db) << ',' << fmt_double(r.bandwidth_ratio) << ',' << r.channel_mode << ','
      << r.seed << ',' << fmt_double(r.value, "%.17g") << '\n';
  }
}

void write_loss_csv(const std::string& path, const TrainResult& result) {
  std::ofstream f = open_out(path);
  f << "step,epoch,kind,loss\n";
  std::size_t step = 0;
  std::size_t steps_per_epoch = result.epochs_run > 0 ? result.step_loss.size() / static_cast<std::size_t>(result.epochs_run) : 0;
  for (std::size_t i = 0; i < result.step_loss.size(); ++i) {
    std::size_t epoch = steps_per_epoch > 0 ? i / steps_per_epoch : 0;
    f << step++ << ',' << epoch << ",train," << fmt_double(result.step_loss[i], "%.17g") << '\n';
  }
  for (std::size_t e = 0; e < result.epoch_val_loss.size(); ++e)
    f << step++ << ',' << e << ",val," << fmt_double(result.epoch_val_loss[e], "%.17g") << '\n';
}

void write_task_node_csv(const std::string& path, const std::vector<TaskSpec>& tasks,
                         const std::vector<std::vector<double>>& weights) {
  if (tasks.size() != weights.size()) throw std::invalid_argument("task weight export: task count mismatch");
  std::ofstream f = open_out(path);
  f << "task,node,weight\n";
  for (std::size_t t = 0; t < weights.size(); ++t)
    for (std::size_t i = 0; i < weights[t].size(); ++i)
      f << tasks[t].name << ',' << i << ',' << fmt_double(weights[t][i], "%.17g") << '\n';
}

}  // namespace gaisim
