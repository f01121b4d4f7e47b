#include "gaisim/config_json.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>

namespace gaisim {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& path) {
  if (!j.is_object()) throw std::invalid_argument("config: " + path + " must be an object");
  for (const auto& [key, val] : j.items())
    if (!allowed.count(key)) throw std::invalid_argument("config: unknown key " + path + "." + key);
}

template <typename T>
void pick(const json& j, const char* key, T& out, const std::string& path) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config: bad value for " + path + "." + key);
  }
}

void parse_encoder(const json& j, EncoderConfig& cfg, const std::string& path) {
  reject_unknown(j, {"in_channels", "in_h", "in_w", "blocks"}, path);
  pick(j, "in_channels", cfg.in_channels, path);
  pick(j, "in_h", cfg.in_h, path);
  pick(j, "in_w", cfg.in_w, path);
  if (j.contains("blocks")) {
    const json& arr = j.at("blocks");
    if (!arr.is_array() || arr.empty())
      throw std::invalid_argument("config: " + path + ".blocks must be a non-empty array");
    cfg.blocks.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      std::string bpath = path + ".blocks[" + std::to_string(i) + "]";
      reject_unknown(arr[i], {"channels", "stride"}, bpath);
      BlockSpec b;
      pick(arr[i], "channels", b.channels, bpath);
      pick(arr[i], "stride", b.stride, bpath);
      cfg.blocks.push_back(b);
    }
  }
}

void parse_gai(const json& j, GaiConfig& cfg, const std::string& path) {
  reject_unknown(j, {"c_out", "c_rm", "iterations", "leaky_slope", "per_iteration_attention",
                     "normalize_task_weights"},
                 path);
  pick(j, "c_out", cfg.c_out, path);
  pick(j, "c_rm", cfg.c_rm, path);
  pick(j, "iterations", cfg.iterations, path);
  pick(j, "leaky_slope", cfg.leaky_slope, path);
  pick(j, "per_iteration_attention", cfg.per_iteration_attention, path);
  pick(j, "normalize_task_weights", cfg.normalize_task_weights, path);
}

void parse_tasks(const json& arr, std::vector<TaskSpec>& tasks, const std::string& path) {
  if (!arr.is_array() || arr.empty())
    throw std::invalid_argument("config: " + path + " must be a non-empty array");
  tasks.clear();
  for (std::size_t i = 0; i < arr.size(); ++i) {
    std::string tpath = path + "[" + std::to_string(i) + "]";
    reject_unknown(arr[i], {"name", "kind", "num_classes", "hidden", "dilation", "loss_weight"}, tpath);
    TaskSpec t;
    pick(arr[i], "name", t.name, tpath);
    std::string kind;
    pick(arr[i], "kind", kind, tpath);
    if (kind.empty()) throw std::invalid_argument("config: " + tpath + " needs a kind");
    t.kind = task_kind_from_string(kind);
    if (t.name.empty()) t.name = kind;
    pick(arr[i], "num_classes", t.num_classes, tpath);
    pick(arr[i], "hidden", t.hidden, tpath);
    pick(arr[i], "dilation", t.dilation, tpath);
    pick(arr[i], "loss_weight", t.loss_weight, tpath);
    tasks.push_back(std::move(t));
  }
}

void parse_channel(const json& j, ChannelConfig& cfg, const std::string& path) {
  reject_unknown(j, {"mode", "snr_db", "power", "rayleigh_scale", "share_fading"}, path);
  if (j.contains("mode")) {
    std::string mode;
    pick(j, "mode", mode, path);
    cfg.mode = channel_mode_from_string(mode);
  }
  if (j.contains("snr_db") && j.at("snr_db").is_string()) {
    if (j.at("snr_db") != "inf")
      throw std::invalid_argument("config: bad value for " + path + ".snr_db");
    cfg.snr_db = std::numeric_limits<double>::infinity();
  } else {
    pick(j, "snr_db", cfg.snr_db, path);
  }
  pick(j, "power", cfg.power, path);
  pick(j, "rayleigh_scale", cfg.rayleigh_scale, path);
  pick(j, "share_fading", cfg.share_fading, path);
}

void parse_data(const json& j, DataConfig& cfg, const std::string& path) {
  reject_unknown(j, {"h", "w", "classes", "train_scenes", "val_scenes", "seed"}, path);
  pick(j, "h", cfg.h, path);
  pick(j, "w", cfg.w, path);
  pick(j, "classes", cfg.classes, path);
  pick(j, "train_scenes", cfg.train_scenes, path);
  pick(j, "val_scenes", cfg.val_scenes, path);
  pick(j, "seed", cfg.seed, path);
}

void parse_train(const json& j, OptimConfig& opt, DataConfig& data, const std::string& path) {
  reject_unknown(j, {"lr", "beta1", "beta2", "eps", "batch_size", "max_epochs", "patience",
                     "auto_balance", "data"},
                 path);
  pick(j, "lr", opt.lr, path);
  pick(j, "beta1", opt.beta1, path);
  pick(j, "beta2", opt.beta2, path);
  pick(j, "eps", opt.eps, path);
  pick(j, "batch_size", opt.batch_size, path);
  pick(j, "max_epochs", opt.max_epochs, path);
  pick(j, "patience", opt.patience, path);
  pick(j, "auto_balance", opt.auto_balance, path);
  if (j.contains("data")) parse_data(j.at("data"), data, path + ".data");
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  reject_unknown(j, {"seed", "encoder", "gai", "tasks", "channel", "bandwidth", "train"}, "$");
  pick(j, "seed", cfg.seed, "$");
  if (j.contains("encoder")) parse_encoder(j.at("encoder"), cfg.encoder, "$.encoder");
  if (j.contains("gai")) parse_gai(j.at("gai"), cfg.gai, "$.gai");
  if (j.contains("tasks")) parse_tasks(j.at("tasks"), cfg.tasks, "$.tasks");
  if (j.contains("channel")) parse_channel(j.at("channel"), cfg.channel, "$.channel");
  if (j.contains("bandwidth")) {
    reject_unknown(j.at("bandwidth"), {"target_ratio"}, "$.bandwidth");
    pick(j.at("bandwidth"), "target_ratio", cfg.bandwidth.target_ratio, "$.bandwidth");
  }
  if (j.contains("train")) parse_train(j.at("train"), cfg.optim, cfg.data, "$.train");
  return cfg;
}

RunConfig run_config_from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config: " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

json run_config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  json enc;
  enc["in_channels"] = cfg.encoder.in_channels;
  enc["in_h"] = cfg.encoder.in_h;
  enc["in_w"] = cfg.encoder.in_w;
  enc["blocks"] = json::array();
  for (const BlockSpec& b : cfg.encoder.blocks)
    enc["blocks"].push_back({{"channels", b.channels}, {"stride", b.stride}});
  j["encoder"] = std::move(enc);
  j["gai"] = {{"c_out", cfg.gai.c_out},
              {"c_rm", cfg.gai.c_rm},
              {"iterations", cfg.gai.iterations},
              {"leaky_slope", cfg.gai.leaky_slope},
              {"per_iteration_attention", cfg.gai.per_iteration_attention},
              {"normalize_task_weights", cfg.gai.normalize_task_weights}};
  j["tasks"] = json::array();
  for (const TaskSpec& t : cfg.tasks)
    j["tasks"].push_back({{"name", t.name},
                          {"kind", task_kind_name(t.kind)},
                          {"num_classes", t.num_classes},
                          {"hidden", t.hidden},
                          {"dilation", t.dilation},
                          {"loss_weight", t.loss_weight}});
  json snr = std::isinf(cfg.channel.snr_db) ? json("inf") : json(cfg.channel.snr_db);
  j["channel"] = {{"mode", channel_mode_name(cfg.channel.mode)},
                  {"snr_db", std::move(snr)},
                  {"power", cfg.channel.power},
                  {"rayleigh_scale", cfg.channel.rayleigh_scale},
                  {"share_fading", cfg.channel.share_fading}};
  j["bandwidth"] = {{"target_ratio", cfg.bandwidth.target_ratio}};
  j["train"] = {{"lr", cfg.optim.lr},
                {"beta1", cfg.optim.beta1},
                {"beta2", cfg.optim.beta2},
                {"eps", cfg.optim.eps},
                {"batch_size", cfg.optim.batch_size},
                {"max_epochs", cfg.optim.max_epochs},
                {"patience", cfg.optim.patience},
                {"auto_balance", cfg.optim.auto_balance},
                {"data",
                 {{"h", cfg.data.h},
                  {"w", cfg.data.w},
                  {"classes", cfg.data.classes},
                  {"train_scenes", cfg.data.train_scenes},
                  {"val_scenes", cfg.data.val_scenes},
                  {"seed", cfg.data.seed}}}};
  return j;
}

}  // namespace gaisim
