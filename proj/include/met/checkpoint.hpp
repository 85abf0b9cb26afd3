#pragma once

#include <filesystem>

#include "json.hpp"
#include "met/model.hpp"

namespace met {

inline constexpr int kCheckpointFormatVersion = 1;

nlohmann::json model_config_json(const ModelConfig& cfg);
/// Every field is required; unknown keys raise ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Writes `dir/params.bin` (little-endian float32 parameter blobs in
/// registration order) and `dir/manifest.json` (format version, model config,
/// name -> shape/offset table, and `extra` under "run").
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& dir, const MetModel<Scalar>& model,
                     const nlohmann::json& extra = nlohmann::json::object());

/// The manifest's "run" object is returned through `extra` when given.
template <typename Scalar>
MetModel<Scalar> load_checkpoint(const std::filesystem::path& dir, nlohmann::json* extra = nullptr);

}  // namespace met
