#include "pmq/record_io.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "pmq/common.hpp"

namespace pmq::io {

using nlohmann::json;

void write_record(const std::string& path, const MatF& values) {
  for (float x : values.v) {
    require(std::isfinite(x), Err::IoError, "record contains NaN/Inf: " + path);
  }
  json header = {{"shape", {values.rows, values.cols}}, {"dtype", "f32"}};
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), Err::IoError, "cannot open for write: " + path);
  f.write(kRecordMagic, 8);
  uint32_t hlen = static_cast<uint32_t>(hs.size());
  f.write(reinterpret_cast<const char*>(&hlen), 4);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  f.write(reinterpret_cast<const char*>(values.v.data()),
          static_cast<std::streamsize>(values.v.size() * sizeof(float)));
  require(f.good(), Err::IoError, "write failed: " + path);
}

namespace {

json read_header(std::ifstream& f, const std::string& path) {
  char magic[8];
  f.read(magic, 8);
  require(f.good() && std::memcmp(magic, kRecordMagic, 8) == 0, Err::IoError,
          "bad record magic: " + path);
  uint32_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 4);
  require(f.good() && hlen > 0 && hlen < (1u << 20), Err::IoError,
          "bad record header length: " + path);
  std::string hs(hlen, '\0');
  f.read(hs.data(), hlen);
  require(f.good(), Err::IoError, "truncated record header: " + path);
  json h = json::parse(hs, nullptr, false);
  require(!h.is_discarded() && h.contains("shape") && h["shape"].is_array() &&
              h["shape"].size() == 2 && h.value("dtype", "") == "f32",
          Err::IoError, "malformed record header: " + path);
  return h;
}

std::ifstream open_record(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Err::MissingFile, "record file not found: " + path);
  return f;
}

}  // namespace

MatF read_record(const std::string& path) {
  std::ifstream f = open_record(path);
  json h = read_header(f, path);
  int rows = h["shape"][0].get<int>();
  int cols = h["shape"][1].get<int>();
  require(rows > 0 && cols > 0, Err::IoError, "bad record shape: " + path);

  MatF m(rows, cols);
  f.read(reinterpret_cast<char*>(m.v.data()),
         static_cast<std::streamsize>(m.v.size() * sizeof(float)));
  require(f.gcount() == static_cast<std::streamsize>(m.v.size() * sizeof(float)), Err::IoError,
          "truncated record data: " + path);
  for (float x : m.v) {
    require(std::isfinite(x), Err::IoError, "record contains NaN/Inf: " + path);
  }
  return m;
}

std::pair<int, int> read_record_shape(const std::string& path) {
  std::ifstream f = open_record(path);
  json h = read_header(f, path);
  return {h["shape"][0].get<int>(), h["shape"][1].get<int>()};
}

}  // namespace pmq::io
