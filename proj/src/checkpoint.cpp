#include "icmf/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "icmf/errors.hpp"

namespace icmf {

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

const CheckpointEntry& Checkpoint::at(const std::string& name) const {
  if (const auto* e = find(name)) return *e;
  throw DataError("checkpoint has no tensor named '" + name + "'");
}

void Checkpoint::add(std::string name, Shape shape, std::span<const double> data) {
  entries.push_back({std::move(name), std::move(shape), {data.begin(), data.end()}});
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format"] = kCheckpointFormat;
  header["meta"] = ckpt.meta;
  auto manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : ckpt.entries) {
    manifest.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", offset},
                        {"count", e.data.size()}});
    offset += e.data.size() * 8;
  }
  header["tensors"] = manifest;
  header["blob_bytes"] = offset;

  std::string out = header.dump();
  out.push_back('\n');
  out.reserve(out.size() + offset);
  for (const auto& e : ckpt.entries)
    for (double v : e.data) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw DataError("checkpoint: missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad header: ") + e.what());
  }
  if (header.value("format", "") != kCheckpointFormat)
    throw DataError("checkpoint: unsupported format '" + header.value("format", "") + "'");
  const std::size_t blob_start = nl + 1;
  const auto blob_bytes = header.at("blob_bytes").get<std::uint64_t>();
  if (bytes.size() - blob_start != blob_bytes)
    throw DataError("checkpoint: expected " + std::to_string(blob_bytes) + " blob bytes, found " +
                    std::to_string(bytes.size() - blob_start));

  Checkpoint ckpt;
  ckpt.meta = header.at("meta");
  for (const auto& t : header.at("tensors")) {
    CheckpointEntry e;
    e.name = t.at("name").get<std::string>();
    e.shape = t.at("shape").get<Shape>();
    const auto offset = t.at("offset").get<std::uint64_t>();
    const auto count = t.at("count").get<std::uint64_t>();
    if (shape_numel(e.shape) != count || offset + count * 8 > blob_bytes)
      throw DataError("checkpoint: inconsistent manifest entry '" + e.name + "'");
    e.data.resize(count);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + blob_start + offset);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[i * 8 + b]) << (8 * b);
      e.data[i] = std::bit_cast<double>(bits);
    }
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  const auto bytes = serialize_checkpoint(ckpt);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed for '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace icmf
