#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vlif/tensor.hpp"

namespace vlif {

// Flat named-tensor container: "SPKC" magic, u32 version, a JSON manifest
// describing the topology/config, then name -> SPKT blob entries.
struct Checkpoint {
  std::string manifest_json;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace vlif
