#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gaisim/config_json.hpp"
#include "gaisim/harness.hpp"
#include "gaisim/random.hpp"
#include "gaisim/verify.hpp"

namespace {

using namespace gaisim;

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.seed = 7;
  cfg.encoder.in_channels = 3;
  cfg.encoder.in_h = 32;
  cfg.encoder.in_w = 32;
  cfg.encoder.blocks = {{16, 1}, {32, 2}, {64, 2}, {128, 2}};
  cfg.gai.c_out = 64;
  cfg.gai.c_rm = 64;
  cfg.tasks = {TaskSpec{"seg", TaskKind::segmentation, 4, 32, 6, 1.0},
               TaskSpec{"depth", TaskKind::depth, 0, 32, 6, 1.0},
               TaskSpec{"normal", TaskKind::surface_normal, 0, 32, 6, 1.0}};
  cfg.channel.mode = ChannelMode::awgn;
  cfg.channel.snr_db = 10.0;
  cfg.optim.lr = 1e-3;
  cfg.optim.batch_size = 8;
  cfg.optim.max_epochs = 10;
  cfg.data.train_scenes = 96;
  cfg.data.val_scenes = 24;
  return cfg;
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> snr_db;
  std::optional<std::string> mode;
  std::optional<int> epochs;
  std::optional<int> train_scenes;
  std::optional<int> val_scenes;
  std::optional<int> batch_size;
  std::optional<double> lr;
  std::optional<double> target_ratio;
};

RunConfig resolve_config(const std::string& path, const Overrides& ov) {
  RunConfig cfg = path.empty() ? default_run_config() : run_config_from_file(path);
  if (ov.seed) cfg.seed = *ov.seed;
  if (ov.snr_db) cfg.channel.snr_db = *ov.snr_db;
  if (ov.mode) cfg.channel.mode = channel_mode_from_string(*ov.mode);
  if (ov.epochs) cfg.optim.max_epochs = *ov.epochs;
  if (ov.train_scenes) cfg.data.train_scenes = *ov.train_scenes;
  if (ov.val_scenes) cfg.data.val_scenes = *ov.val_scenes;
  if (ov.batch_size) cfg.optim.batch_size = *ov.batch_size;
  if (ov.lr) cfg.optim.lr = *ov.lr;
  if (ov.target_ratio) cfg.bandwidth.target_ratio = *ov.target_ratio;
  cfg.validate();
  return cfg;
}

std::vector<double> parse_values(const std::string& text, const char* what) {
  std::vector<double> out;
  if (text.empty()) return out;
  if (text.find(':') != std::string::npos) {
    double lo, hi, step;
    if (std::sscanf(text.c_str(), "%lf:%lf:%lf", &lo, &hi, &step) != 3 || step <= 0.0)
      throw std::invalid_argument(std::string(what) + ": expected lo:hi:step with step > 0");
    for (double v = lo; v <= hi + 1e-9; v += step) out.push_back(v);
    return out;
  }
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t comma = text.find(',', pos);
    std::string piece = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      out.push_back(std::stod(piece));
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string(what) + ": bad number '" + piece + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t comma = text.find(',', pos);
    if (comma == std::string::npos) {
      if (pos < text.size()) out.push_back(text.substr(pos));
      break;
    }
    if (comma > pos) out.push_back(text.substr(pos, comma - pos));
    pos = comma + 1;
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

void echo_config(const RunConfig& cfg, const std::string& variant) {
  std::cout << "variant: " << variant << "\n"
            << "config:\n"
            << run_config_to_json(cfg).dump(2) << "\n";
}

std::vector<ResultRow> metric_rows(Model& model, const std::vector<MetricRecord>& records,
                                   const std::string& run_id) {
  std::vector<ResultRow> rows;
  for (const MetricRecord& r : records) {
    ResultRow row;
    row.run_id = run_id;
    row.variant = variant_name(model.kind);
    row.task = r.task;
    row.metric = r.name;
    row.direction = r.higher_better ? "higher_better" : "lower_better";
    row.snr_db = model.cfg.channel.mode == ChannelMode::noiseless
                     ? std::numeric_limits<double>::infinity()
                     : model.cfg.channel.snr_db;
    row.bandwidth_ratio = 0.0;
    row.channel_mode = channel_mode_name(model.cfg.channel.mode);
    row.seed = model.cfg.seed;
    row.value = r.value;
    rows.push_back(std::move(row));
  }
  return rows;
}

int cmd_train(const RunConfig& cfg, ModelVariant variant, int task_index, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  echo_config(cfg, variant_name(variant));

  Model model = Model::build(cfg, variant, task_index);
  auto train_scenes = generate_dataset(mix_seed(cfg.data.seed, 1), cfg.data.train_scenes, cfg.data.h,
                                       cfg.data.w, cfg.data.classes);
  auto val_scenes = generate_dataset(mix_seed(cfg.data.seed, 2), cfg.data.val_scenes, cfg.data.h,
                                     cfg.data.w, cfg.data.classes);
  TrainResult tr = train_model(model, train_scenes, val_scenes);

  std::string run_id = "train-" + variant_name(variant) + "-s" + std::to_string(cfg.seed);
  write_text(out_dir + "/config.json", run_config_to_json(cfg).dump(2) + "\n");
  write_loss_csv(out_dir + "/losses.csv", tr);
  save_checkpoint(out_dir + "/model.ckpt", model.named_params());

  ChannelConfig eval_ch = cfg.channel;
  eval_ch.seed = mix_seed(cfg.seed, 0xE7A1);
  ChannelSim sim(eval_ch);
  auto records = evaluate_model_metrics(model, val_scenes, sim, tr.weights);
  write_results_csv(out_dir + "/metrics.csv", metric_rows(model, records, run_id));

  if (variant != ModelVariant::single_task && variant != ModelVariant::basic_multitask) {
    std::vector<Scene> probe(val_scenes.begin(),
                             val_scenes.begin() + std::min<std::size_t>(8, val_scenes.size()));
    write_task_node_csv(out_dir + "/task_nodes.csv", model.specs, task_node_weights(model, probe));
  }

  std::cout << "epochs run: " << tr.epochs_run << "\n"
            << "validation loss: " << tr.initial_val_loss << " -> " << tr.best_val_loss
            << " (best epoch " << tr.best_epoch << ")\n"
            << "task weights:";
  for (double w : tr.weights) std::cout << ' ' << w;
  std::cout << "\nwrote " << out_dir << "/{config.json,losses.csv,model.ckpt,metrics.csv}\n";
  return 0;
}

int cmd_sweep(const RunConfig& cfg, ModelVariant variant, int task_index, const std::string& ckpt,
              const std::string& snr_text, const std::string& ratio_text, const std::string& modes_text,
              std::uint64_t eval_seed, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  echo_config(cfg, variant_name(variant));

  Model model = Model::build(cfg, variant, task_index);
  auto val_scenes = generate_dataset(mix_seed(cfg.data.seed, 2), cfg.data.val_scenes, cfg.data.h,
                                     cfg.data.w, cfg.data.classes);
  std::vector<double> weights;
  if (ckpt.empty()) {
    auto train_scenes = generate_dataset(mix_seed(cfg.data.seed, 1), cfg.data.train_scenes, cfg.data.h,
                                         cfg.data.w, cfg.data.classes);
    TrainResult tr = train_model(model, train_scenes, val_scenes);
    weights = tr.weights;
    std::cout << "trained for " << tr.epochs_run << " epochs, best validation loss "
              << tr.best_val_loss << "\n";
  } else {
    load_checkpoint(ckpt, model.named_params());
    for (const TaskSpec& t : model.specs) weights.push_back(t.loss_weight);
    std::cout << "loaded " << ckpt << "\n";
  }

  SweepSpec sweep;
  sweep.eval_seed = eval_seed;
  if (modes_text.empty()) {
    sweep.modes = {cfg.channel.mode};
  } else {
    for (const std::string& m : split_csv(modes_text)) sweep.modes.push_back(channel_mode_from_string(m));
  }
  sweep.snrs_db = parse_values(snr_text, "--snr");
  if (sweep.snrs_db.empty()) sweep.snrs_db = {cfg.channel.snr_db};
  sweep.ratios = parse_values(ratio_text, "--ratios");

  std::string run_id = "sweep-" + variant_name(variant) + "-s" + std::to_string(cfg.seed);
  auto rows = evaluate_sweep(model, val_scenes, sweep, weights, run_id);
  write_results_csv(out_dir + "/results.csv", rows);
  std::cout << rows.size() << " result rows -> " << out_dir << "/results.csv\n";
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const std::string& variants_text, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<ModelVariant> variants;
  std::string vt = variants_text.empty() ? "single_task,basic_multitask,gai_w,simp_att,full" : variants_text;
  for (const std::string& v : split_csv(vt)) variants.push_back(variant_from_string(v));
  echo_config(cfg, vt);

  std::string run_id = "ablate-s" + std::to_string(cfg.seed);
  AblationOutcome outcome = run_ablation(cfg, variants, run_id);
  write_results_csv(out_dir + "/results.csv", outcome.rows);

  std::string summary;
  summary += "task weights:";
  for (double w : outcome.shared_weights) summary += ' ' + std::to_string(w);
  summary += '\n';
  for (const auto& [name, imp] : outcome.deltas) {
    summary += name + " vs single_task: overall " + std::to_string(imp.overall_percent) + "%\n";
    for (const TaskDelta& d : imp.per_task)
      summary += "  " + d.task + ": " + std::to_string(d.delta_percent) + "%\n";
  }
  write_text(out_dir + "/summary.txt", summary);
  std::cout << summary << outcome.rows.size() << " result rows -> " << out_dir << "/results.csv\n";
  return 0;
}

int cmd_verify() {
  auto checks = run_verification();
  for (const CheckResult& c : checks)
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
  if (!all_passed(checks)) {
    std::cout << "verification FAILED\n";
    return 1;
  }
  std::cout << "verification passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-task feature transmission simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "run_out", variant_text = "full", ckpt_path;
  std::string snr_text, ratio_text, modes_text, variants_text;
  int task_index = 0;
  std::uint64_t eval_seed = 99;
  bool inject_fault = false;
  Overrides ov;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON configuration file");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", ov.seed, "run seed");
    sub->add_option("--snr-db", ov.snr_db, "channel SNR in dB");
    sub->add_option("--mode", ov.mode, "channel mode: noiseless, awgn, rayleigh");
    sub->add_option("--epochs", ov.epochs, "training epoch cap");
    sub->add_option("--train-scenes", ov.train_scenes, "training set size");
    sub->add_option("--val-scenes", ov.val_scenes, "validation set size");
    sub->add_option("--batch", ov.batch_size, "batch size");
    sub->add_option("--lr", ov.lr, "learning rate");
    sub->add_option("--bandwidth", ov.target_ratio, "target compression ratio");
  };

  CLI::App* train = app.add_subcommand("train", "train one model and save it");
  add_common(train);
  train->add_option("--variant", variant_text, "single_task, basic_multitask, gai_w, simp_att, full");
  train->add_option("--task-index", task_index, "task to train for the single_task variant");

  CLI::App* sweep = app.add_subcommand("sweep", "evaluate over channel conditions");
  add_common(sweep);
  sweep->add_option("--variant", variant_text, "model variant");
  sweep->add_option("--task-index", task_index, "task for the single_task variant");
  sweep->add_option("--ckpt", ckpt_path, "checkpoint to evaluate instead of training");
  sweep->add_option("--snr", snr_text, "SNR grid: lo:hi:step or comma list");
  sweep->add_option("--ratios", ratio_text, "target compression ratios, comma list");
  sweep->add_option("--modes", modes_text, "channel modes, comma list");
  sweep->add_option("--eval-seed", eval_seed, "evaluation noise seed");

  CLI::App* ablate = app.add_subcommand("ablate", "train and compare variants");
  add_common(ablate);
  ablate->add_option("--variants", variants_text, "comma list of variants to compare");

  CLI::App* verify = app.add_subcommand("verify", "run the numerical self-checks");
  verify->add_flag("--inject-backward-fault", inject_fault)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand(verify)) {
      gaisim::g_backward_fault_injection = inject_fault;
      return cmd_verify();
    }
    RunConfig cfg = resolve_config(config_path, ov);
    if (app.got_subcommand(train))
      return cmd_train(cfg, variant_from_string(variant_text), task_index, out_dir);
    if (app.got_subcommand(sweep))
      return cmd_sweep(cfg, variant_from_string(variant_text), task_index, ckpt_path, snr_text,
                       ratio_text, modes_text, eval_seed, out_dir);
    if (app.got_subcommand(ablate)) return cmd_ablate(cfg, variants_text, out_dir);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
