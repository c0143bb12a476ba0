#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "exlm/encoder.hpp"

namespace exlm {

// Checkpoints are a JSON manifest (prefix.json) naming each tensor with its
// shape and byte offset, plus one raw file (prefix.bin) of little-endian
// 64-bit floats concatenated in manifest order. Tensor payloads use Eigen's
// column-major element order. meta carries free-form strings (model config,
// training step, ...).
struct CheckpointTensor {
  std::string name;
  std::array<std::int64_t, 2> shape;
  std::vector<double> data;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& prefix);
Checkpoint load_checkpoint(const std::filesystem::path& prefix);

// Weight <-> checkpoint conversion; the manifest order is the parameter
// visiting order. Extra tensors (e.g. optimizer state) survive round trips
// untouched.
Checkpoint weights_to_checkpoint(const ModelWeights& w);
ModelWeights weights_from_checkpoint(const Checkpoint& ckpt);

}  // namespace exlm
