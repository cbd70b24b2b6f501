#pragma once

#include <string>
#include <utility>

#include "pmq/tensor.hpp"

namespace pmq::io {

// Record file layout:
//   8-byte magic "PMQREC01"
//   4-byte little-endian unsigned header length
//   UTF-8 JSON header {"shape":[S,L],"dtype":"f32"}
//   S*L little-endian float32, row-major (time-major, leads contiguous).
inline constexpr char kRecordMagic[8] = {'P', 'M', 'Q', 'R', 'E', 'C', '0', '1'};

void write_record(const std::string& path, const MatF& values);

MatF read_record(const std::string& path);

// Parses only the header; cheap manifest-wide shape validation.
std::pair<int, int> read_record_shape(const std::string& path);

}  // namespace pmq::io
