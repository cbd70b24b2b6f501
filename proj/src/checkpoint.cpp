#include "pmq/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "pmq/common.hpp"

namespace pmq::io {

using nlohmann::json;

void CheckpointWriter::add(const std::string& name, std::vector<int64_t> shape, const float* data,
                           size_t n) {
  size_t expect = 1;
  for (int64_t d : shape) expect *= static_cast<size_t>(d);
  require(expect == n, Err::ShapeMismatch, "array size does not match shape: " + name);
  Entry e;
  e.name = name;
  e.shape = std::move(shape);
  e.data.assign(data, data + n);
  entries_.push_back(std::move(e));
}

void CheckpointWriter::add_vector(const std::string& name, const std::vector<float>& v) {
  add(name, {static_cast<int64_t>(v.size())}, v.data(), v.size());
}

void CheckpointWriter::add_scalar(const std::string& name, double v) {
  const float f = static_cast<float>(v);
  add(name, {1}, &f, 1);
}

void CheckpointWriter::save(const std::string& path) const {
  json meta = meta_;
  meta["format"] = 1;
  json arrays = json::array();
  int64_t offset = 0;
  for (const Entry& e : entries_) {
    arrays.push_back({{"name", e.name}, {"offset", offset}, {"shape", e.shape}});
    offset += static_cast<int64_t>(e.data.size() * sizeof(float));
  }
  meta["arrays"] = arrays;
  const std::string hs = meta.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    require(f.good(), Err::IoError, "cannot open for write: " + tmp);
    f.write(kCheckpointMagic, 8);
    uint32_t hlen = static_cast<uint32_t>(hs.size());
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const Entry& e : entries_) {
      f.write(reinterpret_cast<const char*>(e.data.data()),
              static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    }
    require(f.good(), Err::IoError, "write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, Err::IoError, "rename failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Err::MissingFile, "checkpoint not found: " + path);
  char magic[8];
  f.read(magic, 8);
  require(f.good() && std::memcmp(magic, kCheckpointMagic, 8) == 0, Err::IoError,
          "bad checkpoint magic: " + path);
  uint32_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 4);
  require(f.good() && hlen > 0 && hlen < (1u << 26), Err::IoError,
          "bad checkpoint header length: " + path);
  std::string hs(hlen, '\0');
  f.read(hs.data(), hlen);
  require(f.good(), Err::IoError, "truncated checkpoint header: " + path);
  json meta = json::parse(hs, nullptr, false);
  require(!meta.is_discarded() && meta.contains("arrays"), Err::IoError,
          "malformed checkpoint header: " + path);

  Checkpoint c;
  const std::streampos data_start = f.tellg();
  for (const auto& a : meta["arrays"]) {
    Stored s;
    s.shape = a["shape"].get<std::vector<int64_t>>();
    size_t n = 1;
    for (int64_t d : s.shape) n *= static_cast<size_t>(d);
    s.data.resize(n);
    f.seekg(data_start + static_cast<std::streamoff>(a["offset"].get<int64_t>()));
    f.read(reinterpret_cast<char*>(s.data.data()),
           static_cast<std::streamsize>(n * sizeof(float)));
    require(f.good(), Err::IoError,
            "truncated checkpoint array " + a["name"].get<std::string>() + ": " + path);
    c.arrays_.emplace(a["name"].get<std::string>(), std::move(s));
  }
  meta.erase("arrays");
  c.meta_ = std::move(meta);
  return c;
}

const std::vector<float>& Checkpoint::array(const std::string& name) const {
  auto it = arrays_.find(name);
  require(it != arrays_.end(), Err::IoError, "checkpoint array missing: " + name);
  return it->second.data;
}

const std::vector<int64_t>& Checkpoint::shape(const std::string& name) const {
  auto it = arrays_.find(name);
  require(it != arrays_.end(), Err::IoError, "checkpoint array missing: " + name);
  return it->second.shape;
}

double Checkpoint::scalar(const std::string& name) const {
  const auto& a = array(name);
  require(a.size() == 1, Err::ShapeMismatch, "not a scalar: " + name);
  return static_cast<double>(a[0]);
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  out.reserve(arrays_.size());
  for (const auto& [k, v] : arrays_) out.push_back(k);
  return out;
}

// ---------------------------------------------------------------------------

void add_branch(CheckpointWriter& w, model::Branch<float>& b, const std::string& prefix) {
  b.visit(prefix, [&](const std::string& name, std::vector<float>& p, std::vector<float>&) {
    w.add_vector(name, p);
  });
  b.visit_buffers(prefix, [&](const std::string& name, std::vector<float>& buf) {
    w.add_vector(name, buf);
  });
}

void load_branch(const Checkpoint& c, model::Branch<float>& b, const std::string& prefix) {
  b.visit(prefix, [&](const std::string& name, std::vector<float>& p, std::vector<float>&) {
    const auto& a = c.array(name);
    require(a.size() == p.size(), Err::ShapeMismatch, "checkpoint size mismatch: " + name);
    p = a;
  });
  b.visit_buffers(prefix, [&](const std::string& name, std::vector<float>& buf) {
    const auto& a = c.array(name);
    require(a.size() == buf.size(), Err::ShapeMismatch, "checkpoint size mismatch: " + name);
    buf = a;
  });
}

void add_optimizer(CheckpointWriter& w, optim::AdamW<float>& opt) {
  opt.visit_state([&](const std::string& name, std::vector<float>& s) { w.add_vector(name, s); });
  w.add_scalar("opt.step", static_cast<double>(opt.step_count()));
}

void load_optimizer(const Checkpoint& c, optim::AdamW<float>& opt) {
  opt.visit_state([&](const std::string& name, std::vector<float>& s) {
    const auto& a = c.array(name);
    require(a.size() == s.size(), Err::ShapeMismatch, "checkpoint size mismatch: " + name);
    s = a;
  });
  opt.set_step_count(static_cast<int64_t>(c.scalar("opt.step")));
}

void add_queue(CheckpointWriter& w, const pcl::PatientMemoryQueue<float>& q) {
  std::vector<float> ids(static_cast<size_t>(q.size()));
  std::vector<float> keys(static_cast<size_t>(q.size()) * q.dim());
  for (int i = 0; i < q.size(); ++i) {
    ids[static_cast<size_t>(i)] = static_cast<float>(q.id_at(i));
    std::copy(q.key_at(i), q.key_at(i) + q.dim(), keys.begin() + static_cast<size_t>(i) * q.dim());
  }
  w.add("queue.patient_ids", {q.size()}, ids.data(), ids.size());
  w.add("queue.keys", {q.size(), q.dim()}, keys.data(), keys.size());
  w.add_scalar("queue.cursor", static_cast<double>(q.total_enqueued()));
}

void load_queue(const Checkpoint& c, pcl::PatientMemoryQueue<float>& q) {
  const auto& ids_f = c.array("queue.patient_ids");
  const auto& keys_f = c.array("queue.keys");
  const auto& ks = c.shape("queue.keys");
  require(ks.size() == 2 && ks[1] == q.dim() &&
              ids_f.size() == static_cast<size_t>(ks[0]),
          Err::ShapeMismatch, "queue arrays do not match queue dim");
  std::vector<int64_t> ids(ids_f.size());
  for (size_t i = 0; i < ids_f.size(); ++i) ids[i] = static_cast<int64_t>(ids_f[i]);
  Matrix<float> keys(static_cast<int>(ks[0]), static_cast<int>(ks[1]));
  std::copy(keys_f.begin(), keys_f.end(), keys.v.begin());
  q.restore(ids, keys, static_cast<int64_t>(c.scalar("queue.cursor")));
}

}  // namespace pmq::io
