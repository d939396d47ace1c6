#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sgf/spn.hpp"

namespace sgf {

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// A named set of tensors stored as `<prefix>.json` (manifest: name, shape,
/// dtype, byte offset) plus `<prefix>.bin` (flat little-endian float64 blob).
/// `meta` is carried verbatim in the manifest.
void write_tensor_set(const std::string& prefix, const std::vector<std::pair<std::string, const Mat*>>& tensors,
                      const nlohmann::json& meta);

struct TensorSet {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Mat>> tensors;
};

TensorSet read_tensor_set(const std::string& prefix);

void save_checkpoint(const std::string& prefix, const SpnParameters& params);
/// Rebuilds the parameter structure from the stored config and checks every
/// tensor name and shape against it.
SpnParameters load_checkpoint(const std::string& prefix);

}  // namespace sgf
