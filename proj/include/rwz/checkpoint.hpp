#pragma once

#include <json.hpp>
#include <string>

#include "rwz/features.hpp"
#include "rwz/model.hpp"

namespace rwz {

nlohmann::json to_json(const ModelConfig& config);
/// Missing keys keep their defaults; throws ConfigError on unknown keys or bad values.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Trained parameters plus what is needed to turn predictions back into MPH.
struct Checkpoint {
    ModelParams params;
    MinMaxScaler scaler;
    nlohmann::json meta = nlohmann::json::object();  // free-form, e.g. epoch and validation MAE
};

/// Layout (little endian):
///   8 bytes  magic "RWZCKPT\0"
///   u32      format version (1)
///   string   JSON header {"model": ModelConfig, "scaler": {vmin, vmax}, "meta": {...}}
///   u64      tensor count, then per tensor: string name, u64 rank, u64 dims..., f64 values (row major)
/// Strings are a u64 byte length followed by the bytes.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
/// Throws FormatError on a damaged file and ShapeError when the tensors do not fit the echoed config.
Checkpoint load_checkpoint(const std::string& path);

/// Hex FNV-1a digest of the parameter names, shapes and values.
std::string checkpoint_id(const ModelParams& params);

}  // namespace rwz
