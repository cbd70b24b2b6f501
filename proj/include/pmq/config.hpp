#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>

#include <json.hpp>

#include "pmq/augment.hpp"
#include "pmq/model.hpp"
#include "pmq/pcl.hpp"

namespace pmq::cfg {

// Flat key=value run configuration. Keys are namespaced (data.*, aug.*,
// model.*, pcl.*, train.*, synth.*); unknown keys and type mismatches are
// rejected. Every run echoes the resolved configuration next to its outputs.
class Config {
 public:
  using Value = std::variant<bool, int64_t, double, std::string>;

  Config();  // all defaults

  // `# comment` and blank lines allowed; each other line is `key = value`.
  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);

  bool get_bool(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;

  nlohmann::json to_json() const;
  std::string resolved_text() const;  // sorted `key = value` lines
  uint64_t hash() const;              // FNV-1a over resolved_text()

  model::EncoderConfig encoder_config() const;
  aug::MaskConfig mask_config() const;
  pcl::PclConfig pcl_config() const;

  // Phase defaults: epochs 100/50 and lr 1e-3/1e-4 for pretrain/finetune
  // unless overridden (train.epochs / train.lr of 0 means "phase default").
  int64_t resolved_epochs(bool pretrain_phase) const;
  double resolved_lr(bool pretrain_phase) const;

 private:
  const Value& get(const std::string& key) const;
  std::map<std::string, Value> values_;
};

std::string value_to_string(const Config::Value& v);

}  // namespace pmq::cfg
