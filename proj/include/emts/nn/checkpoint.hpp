#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "emts/nn/mlp.hpp"

namespace emts::nn {

struct NamedNet {
  std::string name;
  Mlp net;
};

struct Checkpoint {
  nlohmann::json meta;
  std::vector<NamedNet> nets;

  /// Throws ConfigError when no net has this name.
  const Mlp& net(const std::string& name) const;
};

/// Binary weight file:
///   "EMTSW1" | u32 meta length | meta JSON | u32 net count |
///   per net: u32 name length | name | u32 layer count | per layer: u32 rows | u32 cols |
///   then every weight (row-major) and bias of every layer as little-endian f64.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

}  // namespace emts::nn
