#pragma once

#include <filesystem>
#include <string>

#include "imbal/market_model.hpp"

namespace imbal {

/// Binary checkpoint: magic line, a JSON header (format version, model
/// config, tensor names and shapes, nonnegativity masks, normalization
/// constants, config hash, free-form metadata), then little-endian doubles.
struct Checkpoint {
  IcnnParams params;
  std::string config_hash;
  std::string metadata_json = "{}";
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Model configuration as canonical JSON text.
std::string model_config_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace imbal
