#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "icmf/tensor.hpp"

namespace icmf {

inline constexpr const char* kCheckpointFormat = "icmf-v1";

/// Checkpoint file layout:
///   line 1: compact JSON header terminated by '\n'
///           {"format":"icmf-v1","meta":{...},"tensors":[{"name","shape","offset","count"}],
///            "blob_bytes":N}
///   rest:   raw little-endian IEEE-754 doubles; offsets are bytes from the
///           first byte after the newline.
struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

struct Checkpoint {
  nlohmann::json meta;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
  const CheckpointEntry& at(const std::string& name) const;

  void add(std::string name, Shape shape, std::span<const double> data);
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace icmf
