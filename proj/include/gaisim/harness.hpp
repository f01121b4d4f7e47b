#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gaisim/channel.hpp"
#include "gaisim/encoder.hpp"
#include "gaisim/gai.hpp"
#include "gaisim/heads.hpp"
#include "gaisim/metrics.hpp"
#include "gaisim/synth.hpp"

namespace gaisim {

struct DataConfig {
  int h = 32, w = 32;
  int classes = 4;
  int train_scenes = 512;
  int val_scenes = 64;
  std::uint64_t seed = 1234;
};

struct OptimConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 8;
  int max_epochs = 30;
  int patience = 10;
  bool auto_balance = true;
};

struct BandwidthTarget {
  double target_ratio = 0.0;  // <= 0: transmit at native width
  bool enabled() const { return target_ratio > 0.0; }
};

enum class ModelVariant { single_task, basic_multitask, gai_without_attention, gai_simple_attention, gai_full };

ModelVariant variant_from_string(const std::string& s);
std::string variant_name(ModelVariant v);

struct RunConfig {
  std::uint64_t seed = 0;
  EncoderConfig encoder = default_desk_encoder();
  GaiConfig gai;
  std::vector<TaskSpec> tasks;
  ChannelConfig channel;  // training-time channel
  BandwidthTarget bandwidth;
  OptimConfig optim;
  DataConfig data;

  void validate();  // cross-checks shapes and fills the gai node/task counts
};

struct AdapterParams {
  int c_ds = 0;
  ConvParam down;  // feature channels -> c_ds, applied before the channel
  ConvParam up;    // c_ds -> feature channels, applied after
};

AdapterParams make_adapter(int feature_channels, int c_ds, std::uint64_t seed);

/// One trainable system: shared encoder, optional inter-block module,
/// per-task decoders, optional bandwidth adapter.
class Model {
 public:
  static Model build(const RunConfig& cfg, ModelVariant variant, int single_task_index = -1);

  struct Forward {
    std::vector<Var> task_losses;  // unweighted
    Var total;
    std::vector<Tensor> predictions;  // filled when requested
  };
  Forward forward(Graph& g, const Scene& scene, ChannelSim& sim,
                  const std::vector<double>& weights, bool want_predictions);

  // name -> tensor, sorted by name
  std::vector<std::pair<std::string, Tensor*>> named_params();
  std::vector<Tensor> snapshot_params();
  void restore_params(const std::vector<Tensor>& snap);

  ModelVariant kind = ModelVariant::gai_full;
  int task_index = -1;  // >= 0 for a one-task model
  RunConfig cfg;
  std::vector<TaskSpec> specs;  // the tasks this model decodes
  EncoderParams encoder;
  GaiParams gai;  // used by the gai_* variants only
  std::vector<TaskDecoderParams> decoders;
  std::optional<AdapterParams> adapter;
  int out_h = 0, out_w = 0;   // transmit grid
  int feature_channels = 0;   // width the decoders consume

 private:
  bool uses_gai() const;
  Var transmit_one(Graph& g, Var z, ChannelSim& sim, ParamBinder& bind);
  Var task_loss(Graph& g, Var pred, const TaskSpec& spec, const Scene& scene);
};

/// Plain Adam with bias correction; per-tensor first/second moment slots.
class Adam {
 public:
  explicit Adam(const OptimConfig& cfg);
  void step(const std::vector<std::pair<std::string, Tensor*>>& params);
  long long steps_taken() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  long long t_ = 0;
  std::unordered_map<Tensor*, std::pair<std::vector<double>, std::vector<double>>> slots_;
};

struct TrainResult {
  std::vector<double> step_loss;       // weighted batch loss per optimizer step
  std::vector<double> epoch_val_loss;  // weighted validation loss per epoch
  double initial_val_loss = 0.0;
  double best_val_loss = 0.0;
  int best_epoch = -1;
  int epochs_run = 0;
  std::vector<double> weights;  // resolved task loss weights
};

/// Mini-batch training with early stopping on validation loss; the best
/// parameter snapshot is restored before returning.
TrainResult train_model(Model& model, const std::vector<Scene>& train_scenes,
                        const std::vector<Scene>& val_scenes,
                        const std::vector<double>* preset_weights = nullptr);

/// Mean weighted loss over a scene set, deterministic for a given sim seed.
double evaluate_total_loss(Model& model, const std::vector<Scene>& scenes, ChannelSim& sim,
                           const std::vector<double>& weights);

/// Task metrics plus a mean unweighted "loss" record per task.
std::vector<MetricRecord> evaluate_model_metrics(Model& model, const std::vector<Scene>& scenes,
                                                 ChannelSim& sim, const std::vector<double>& weights);

struct ResultRow {
  std::string run_id;
  std::string variant;
  std::string task;
  std::string metric;
  std::string direction;
  double snr_db = 0.0;
  double bandwidth_ratio = 0.0;
  std::string channel_mode;
  std::uint64_t seed = 0;
  double value = 0.0;
};

struct SweepSpec {
  std::vector<ChannelMode> modes;
  std::vector<double> snrs_db;
  std::vector<double> ratios;  // empty: native width only
  std::uint64_t eval_seed = 99;
};

/// Evaluates every (mode, SNR, ratio) cell on the validation set. Ratios that
/// need a different channel width than the model was built with run through a
/// deterministic fresh adapter pair.
std::vector<ResultRow> evaluate_sweep(Model& model, const std::vector<Scene>& val_scenes,
                                      const SweepSpec& sweep, const std::vector<double>& weights,
                                      const std::string& run_id);

struct VariantRun {
  ModelVariant variant = ModelVariant::gai_full;
  std::vector<TrainResult> trains;      // one entry, or one per task for single_task
  std::vector<MetricRecord> metrics;    // training-channel evaluation
};

struct AblationOutcome {
  std::vector<VariantRun> runs;
  std::vector<ResultRow> rows;
  // against single_task, when it was part of the run set
  std::vector<std::pair<std::string, ImprovementSummary>> deltas;
  std::vector<double> shared_weights;
};

/// Trains the requested variants on one shared dataset and compares them.
AblationOutcome run_ablation(const RunConfig& cfg, const std::vector<ModelVariant>& variants,
                             const std::string& run_id);

/// Mean relevance weight per (task, node) over a batch of scenes.
std::vector<std::vector<double>> task_node_weights(Model& model, const std::vector<Scene>& batch);

struct FlopReport {
  GaiFlopCounts measured;
  GaiFlopCounts analytic;
  bool match = false;
};

/// Runs an instrumented forward on synthetic features and compares the stage
/// counters with the closed-form counts.
FlopReport flop_report(const GaiConfig& cfg, const std::vector<std::array<int, 3>>& block_shapes,
                       int out_h, int out_w, std::uint64_t seed);

// ---- file output ----

void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows);
void write_loss_csv(const std::string& path, const TrainResult& result);
void write_task_node_csv(const std::string& path, const std::vector<TaskSpec>& tasks,
                         const std::vector<std::vector<double>>& weights);

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor*>>& params);
void load_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor*>>& params);

}  // namespace gaisim
