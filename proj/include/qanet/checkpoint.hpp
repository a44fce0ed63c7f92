#pragma once

// Checkpoint container:
//
//   bytes 0..7    magic "QANETCKP"
//   bytes 8..15   header length H, unsigned 64-bit little endian
//   next H bytes  UTF-8 JSON header {"format_version", "tensors": [{name, shape, dtype}], "meta"}
//   remainder     each tensor's values as little-endian IEEE-754 float64, in header order

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qanet/error.hpp"
#include "qanet/random.hpp"
#include "qanet/tensor.hpp"

namespace qanet {

inline constexpr std::array<char, 8> kCheckpointMagic = {'Q', 'A', 'N', 'E', 'T', 'C', 'K', 'P'};
inline constexpr int kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor& get(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return t;
    }
    throw Error(ErrorCode::kCheckpointMismatch, "checkpoint has no tensor " + name);
  }

  bool contains(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return true;
    }
    return false;
  }
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["meta"] = ckpt.meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : ckpt.tensors) {
    if (shape_size(t.shape) != t.values.size()) {
      throw Error(ErrorCode::kDimensionMismatch, "checkpoint tensor " + t.name + " shape/value count");
    }
    header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"dtype", "float64"}});
  }
  const std::string text = header.dump();
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u64(out, text.size());
  out += text;
  for (const auto& t : ckpt.tensors) {
    for (double v : t.values) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& source = "checkpoint") {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic.data(), 8) != 0) {
    throw Error(ErrorCode::kCheckpointMismatch, source + " is not a checkpoint file");
  }
  const std::uint64_t header_len = detail::get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw Error(ErrorCode::kCheckpointMismatch, source + " header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kMalformedJson, source + " header: " + e.what());
  }
  if (header.value("format_version", 0) != kCheckpointVersion) {
    throw Error(ErrorCode::kCheckpointMismatch, source + " has unsupported format version");
  }
  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  std::size_t offset = 16 + header_len;
  for (const auto& entry : header.at("tensors")) {
    CheckpointTensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<Shape>();
    if (entry.value("dtype", "") != "float64") throw Error(ErrorCode::kCheckpointMismatch, t.name + " dtype");
    const std::size_t n = shape_size(t.shape);
    if (offset + 8 * n > bytes.size()) throw Error(ErrorCode::kCheckpointMismatch, source + " data truncated at " + t.name);
    t.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.values[i] = std::bit_cast<double>(detail::get_u64(bytes.data() + offset + 8 * i));
    offset += 8 * n;
    ckpt.tensors.push_back(std::move(t));
  }
  if (offset != bytes.size()) throw Error(ErrorCode::kCheckpointMismatch, source + " has trailing bytes");
  return ckpt;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write checkpoint " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "failed writing checkpoint " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open checkpoint " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str(), path);
}

}  // namespace qanet
