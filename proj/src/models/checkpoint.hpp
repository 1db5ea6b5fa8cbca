#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "models/layers.hpp"

namespace tap::models {

struct Checkpoint {
  nlohmann::json config;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

// Layout: "TAPCKPT1", u32 config length, config JSON, u32 tensor count, then per tensor
// u32 name length, name, u32 rank, u64 dims, f64 little-endian values.
void write_checkpoint(const std::string& path, const nlohmann::json& config,
                      const std::vector<const ParamStore*>& stores);
Checkpoint read_checkpoint(const std::string& path);

// Copies values into every parameter of store; names and shapes must match.
void load_parameters(const Checkpoint& ckpt, ParamStore& store);

}  // namespace tap::models
