#pragma once

#include <json.hpp>
#include <string>

#include "rwz/features.hpp"
#include "rwz/model.hpp"
#include "rwz/training.hpp"

namespace rwz {

struct DataPaths {
    std::string speeds;      // speeds.csv
    std::string workzones;   // workzones.csv, optional
    std::string distances;   // distances.csv; or
    std::string segments;    // segments.csv (lat/lon)
    std::string cache;       // feature cache written by `ingest`, optional
};

/// Everything a CLI run needs. Relative paths are resolved against the
/// directory of the config file.
struct AppConfig {
    DataPaths data;
    FeatureConfig features;
    ModelConfig model;        // segments and slots are filled from the data
    TrainConfig training;
    double eval_radius = 0.0; // miles; work-zone condition radius
    std::string output_dir = "out";
};

/// Parses the JSON config; missing keys keep their defaults. Throws
/// ConfigError on syntax errors, unknown keys and out-of-range values.
AppConfig config_from_json(const nlohmann::json& j, const std::string& base_dir = ".");
AppConfig load_config(const std::string& path);
nlohmann::json to_json(const AppConfig& config);

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// The feature bundle of a config: the cache when it exists, else built from the CSV files.
FeatureBundle load_bundle(const AppConfig& config);
/// Copies segment count and weekly slot count from the data into the model config.
ModelConfig fit_model_to(const ModelConfig& model, const FeatureBundle& bundle);

}  // namespace rwz
