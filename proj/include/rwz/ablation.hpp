#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "rwz/evaluation.hpp"
#include "rwz/hypergraph.hpp"
#include "rwz/training.hpp"

namespace rwz {

/// Neighbour counts and fusion formulas to sweep. Each table varies one
/// factor and keeps the other at the base model config.
struct AblationGrid {
    std::vector<int> neighbors{1, 5, 10, kAllNeighbors};
    std::vector<SpeedWave> waves = all_speed_waves();
    std::size_t horizon = 6;
    Condition condition = Condition::All;
};

/// Keys: neighbors (integers or "all"), waves (names), horizon, condition.
AblationGrid ablation_grid_from_json(const nlohmann::json& j);

struct AblationCell {
    std::string label;   // "k=5", "k=all" or the formula text
    ModelConfig model;
    bool ok = false;
    std::string error;   // set when training or evaluation failed
    MetricReport report; // test split at the grid horizon
    std::size_t best_epoch = 0;
};

struct AblationTable {
    std::vector<AblationCell> neighbors;
    std::vector<AblationCell> speed_wave;
};

/// Trains one model per distinct cell (shared seed) and evaluates it on the
/// test split. Failures are recorded in the cell and the sweep continues.
AblationTable run_ablation(const FeatureBundle& bundle, const ModelConfig& base, const TrainConfig& train_config,
                           const AblationGrid& grid, double radius = 0.0);

nlohmann::json to_json(const AblationTable& table);

}  // namespace rwz
