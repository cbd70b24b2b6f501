#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmq/model.hpp"
#include "pmq/optim.hpp"
#include "pmq/pcl.hpp"

namespace pmq::io {

// Checkpoint container:
//   8-byte magic "PMQCKPT1"
//   4-byte little-endian JSON length
//   JSON metadata {"format":1, ..., "arrays":[{"name","offset","shape"}]}
//   concatenated raw little-endian float32 arrays (offsets in bytes from the
//   start of the data section).
inline constexpr char kCheckpointMagic[8] = {'P', 'M', 'Q', 'C', 'K', 'P', 'T', '1'};

class CheckpointWriter {
 public:
  void add(const std::string& name, std::vector<int64_t> shape, const float* data, size_t n);
  void add_vector(const std::string& name, const std::vector<float>& v);
  void add_scalar(const std::string& name, double v);

  nlohmann::json& meta() { return meta_; }

  // Atomic: writes to <path>.tmp then renames.
  void save(const std::string& path) const;

 private:
  struct Entry {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<float> data;
  };
  std::vector<Entry> entries_;
  nlohmann::json meta_ = nlohmann::json::object();
};

class Checkpoint {
 public:
  static Checkpoint load(const std::string& path);

  bool has(const std::string& name) const { return arrays_.count(name) > 0; }
  const std::vector<float>& array(const std::string& name) const;
  const std::vector<int64_t>& shape(const std::string& name) const;
  double scalar(const std::string& name) const;
  const nlohmann::json& meta() const { return meta_; }
  std::vector<std::string> names() const;

 private:
  struct Stored {
    std::vector<int64_t> shape;
    std::vector<float> data;
  };
  std::map<std::string, Stored> arrays_;
  nlohmann::json meta_;
};

// Branch / optimizer / queue serialization, float pipeline only. Patient IDs
// are stored as float32 payloads; loaders re-validate the exact-integer range.
void add_branch(CheckpointWriter& w, model::Branch<float>& b, const std::string& prefix);
void load_branch(const Checkpoint& c, model::Branch<float>& b, const std::string& prefix);

void add_optimizer(CheckpointWriter& w, optim::AdamW<float>& opt);
void load_optimizer(const Checkpoint& c, optim::AdamW<float>& opt);

void add_queue(CheckpointWriter& w, const pcl::PatientMemoryQueue<float>& q);
void load_queue(const Checkpoint& c, pcl::PatientMemoryQueue<float>& q);

}  // namespace pmq::io
