#include "pmq/config.hpp"

#include <algorithm>
#include <fstream>

#include "pmq/common.hpp"


namespace pmq::cfg {

using nlohmann::json;

Config::Config() {
  values_ = {
      {"data.manifest", std::string("")},
      {"data.sample_len", int64_t(300)},
      {"data.stratified_subsample", false},

      {"aug.timestamp_p", 0.5},
      {"aug.freq_frac", 0.1},
      {"aug.enable_time_mask", true},
      {"aug.enable_freq_mask", true},
      {"aug.enable_neighbor", true},
      {"aug.per_channel_freq", false},

      {"model.input_leads", int64_t(12)},
      {"model.hidden_dim", int64_t(64)},
      {"model.output_dim", int64_t(320)},
      {"model.num_blocks", int64_t(10)},
      {"model.kernel_size", int64_t(3)},
      {"model.linear_dilation", false},
      {"model.mean_pool", false},
      {"model.classifier_hidden", int64_t(0)},  // 0 -> output_dim
      {"model.dropout", 0.1},

      {"pcl.tau", 0.1},
      {"pcl.momentum_m", 0.999},
      {"pcl.queue_size", int64_t(16384)},
      {"pcl.enable_queue", true},
      {"pcl.separate_batch_term", false},

      {"train.epochs", int64_t(0)},  // 0 -> phase default
      {"train.lr", 0.0},             // 0 -> phase default
      {"train.batch_size", int64_t(256)},
      {"train.warmup_frac", 0.05},
      {"train.weight_decay", 0.01},
      {"train.seed", int64_t(41)},
      {"train.label_ratio", 1.0},
      {"train.select", std::string("best")},
      {"train.checkpoint_every", int64_t(10)},
      {"train.stop_after_epoch", int64_t(0)},  // testing hook: halt after this epoch

      {"synth.num_patients", int64_t(20)},
      {"synth.trials_per_patient", int64_t(4)},
      {"synth.trial_len", int64_t(600)},
      {"synth.leads", int64_t(4)},
      {"synth.num_classes", int64_t(4)},
      {"synth.noise_sigma", 0.1},
      {"synth.train_frac", 0.8},
      {"synth.valid_frac", 0.1},
      {"synth.test_frac", 0.1},
  };
}

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace

void Config::load_file(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), Err::MissingFile, "config file not found: " + path);
  std::string line;
  size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    require(eq != std::string::npos, Err::BadConfig,
            "expected key = value at " + path + ":" + std::to_string(line_no));
    set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  require(it != values_.end(), Err::BadConfig, "unknown config key: " + key);
  try {
    if (std::holds_alternative<bool>(it->second)) {
      if (value == "true" || value == "1") it->second = true;
      else if (value == "false" || value == "0") it->second = false;
      else fail(Err::BadConfig, "expected bool for " + key + ", got '" + value + "'");
    } else if (std::holds_alternative<int64_t>(it->second)) {
      size_t pos = 0;
      int64_t v = std::stoll(value, &pos);
      require(pos == value.size(), Err::BadConfig, "expected integer for " + key);
      it->second = v;
    } else if (std::holds_alternative<double>(it->second)) {
      size_t pos = 0;
      double v = std::stod(value, &pos);
      require(pos == value.size(), Err::BadConfig, "expected real for " + key);
      it->second = v;
    } else {
      it->second = value;
    }
  } catch (const Error&) {
    throw;
  } catch (...) {
    fail(Err::BadConfig, "cannot parse value for " + key + ": '" + value + "'");
  }
}

const Config::Value& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  require(it != values_.end(), Err::BadConfig, "unknown config key: " + key);
  return it->second;
}

bool Config::get_bool(const std::string& key) const {
  const Value& v = get(key);
  require(std::holds_alternative<bool>(v), Err::BadConfig, key + " is not a bool");
  return std::get<bool>(v);
}

int64_t Config::get_int(const std::string& key) const {
  const Value& v = get(key);
  require(std::holds_alternative<int64_t>(v), Err::BadConfig, key + " is not an integer");
  return std::get<int64_t>(v);
}

double Config::get_real(const std::string& key) const {
  const Value& v = get(key);
  if (std::holds_alternative<int64_t>(v)) return static_cast<double>(std::get<int64_t>(v));
  require(std::holds_alternative<double>(v), Err::BadConfig, key + " is not a real");
  return std::get<double>(v);
}

const std::string& Config::get_string(const std::string& key) const {
  const Value& v = get(key);
  require(std::holds_alternative<std::string>(v), Err::BadConfig, key + " is not a string");
  return std::get<std::string>(v);
}

std::string value_to_string(const Config::Value& v) {
  if (std::holds_alternative<bool>(v)) return std::get<bool>(v) ? "true" : "false";
  if (std::holds_alternative<int64_t>(v)) return std::to_string(std::get<int64_t>(v));
  if (std::holds_alternative<double>(v)) return json(std::get<double>(v)).dump();
  return std::get<std::string>(v);
}

json Config::to_json() const {
  json out = json::object();
  for (const auto& [k, v] : values_) {
    if (std::holds_alternative<bool>(v)) out[k] = std::get<bool>(v);
    else if (std::holds_alternative<int64_t>(v)) out[k] = std::get<int64_t>(v);
    else if (std::holds_alternative<double>(v)) out[k] = std::get<double>(v);
    else out[k] = std::get<std::string>(v);
  }
  return out;
}

std::string Config::resolved_text() const {
  std::string out;
  for (const auto& [k, v] : values_) {
    out += k;
    out += " = ";
    out += value_to_string(v);
    out += '\n';
  }
  return out;
}

uint64_t Config::hash() const {
  const std::string text = resolved_text();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

model::EncoderConfig Config::encoder_config() const {
  model::EncoderConfig e;
  e.input_leads = static_cast<int>(get_int("model.input_leads"));
  e.hidden_dim = static_cast<int>(get_int("model.hidden_dim"));
  e.output_dim = static_cast<int>(get_int("model.output_dim"));
  e.num_blocks = static_cast<int>(get_int("model.num_blocks"));
  e.kernel_size = static_cast<int>(get_int("model.kernel_size"));
  e.linear_dilation = get_bool("model.linear_dilation");
  e.mean_pool = get_bool("model.mean_pool");
  require(e.input_leads >= 1 && e.hidden_dim >= 1 && e.output_dim >= 1 && e.num_blocks >= 0 &&
              e.kernel_size >= 1 && e.kernel_size % 2 == 1,
          Err::BadConfig, "model.* dimensions must be positive (odd kernel)");
  return e;
}

aug::MaskConfig Config::mask_config() const {
  aug::MaskConfig m;
  m.timestamp_p = get_real("aug.timestamp_p");
  m.freq_frac = get_real("aug.freq_frac");
  m.enable_time_mask = get_bool("aug.enable_time_mask");
  m.enable_freq_mask = get_bool("aug.enable_freq_mask");
  m.enable_neighbor = get_bool("aug.enable_neighbor");
  m.per_channel_freq = get_bool("aug.per_channel_freq");
  return m;
}

pcl::PclConfig Config::pcl_config() const {
  pcl::PclConfig p;
  p.tau = get_real("pcl.tau");
  p.momentum_m = get_real("pcl.momentum_m");
  p.queue_size = static_cast<int>(get_int("pcl.queue_size"));
  p.enable_queue = get_bool("pcl.enable_queue");
  p.separate_batch_term = get_bool("pcl.separate_batch_term");
  require(p.tau > 0.0 && p.tau <= 1.0, Err::BadConfig, "pcl.tau must be in (0,1]");
  require(p.momentum_m >= 0.0 && p.momentum_m <= 1.0, Err::BadConfig,
          "pcl.momentum_m must be in [0,1]");
  require(p.queue_size >= 1, Err::BadConfig, "pcl.queue_size must be >= 1");
  return p;
}

int64_t Config::resolved_epochs(bool pretrain_phase) const {
  int64_t e = get_int("train.epochs");
  if (e > 0) return e;
  return pretrain_phase ? 100 : 50;
}

double Config::resolved_lr(bool pretrain_phase) const {
  double lr = get_real("train.lr");
  if (lr > 0.0) return lr;
  return pretrain_phase ? 1e-3 : 1e-4;
}

}  // namespace pmq::cfg
