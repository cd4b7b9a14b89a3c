#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "rwz/checkpoint.hpp"
#include "rwz/features.hpp"

namespace rwz {

struct ScenarioRequest {
    std::vector<WorkZoneEvent> injected_events;
    Timestamp anchor;
    std::size_t horizon = 0;  // 0 = the model's full horizon
};

/// Throws FormatError (malformed body) or SchemaError (unknown segment).
ScenarioRequest parse_scenario_request(const nlohmann::json& body, const RoadNetwork& network);

struct SegmentImpact {
    std::string segment_id;
    double mean_delta = 0.0;
    double max_slowdown = 0.0;  // largest drop below baseline, >= 0
};

/// N x horizon speed matrices in MPH.
struct ScenarioResponse {
    Timestamp anchor;
    std::size_t horizon = 0;
    std::vector<std::string> segment_ids;
    std::vector<Timestamp> times;
    Eigen::MatrixXd baseline;
    Eigen::MatrixXd scenario;
    Eigen::MatrixXd delta;
    std::vector<SegmentImpact> impacts;
    std::size_t injected_window_cells = 0;  // (segment, step) cells of the input window an injected event covers
};

/// A loaded checkpoint with its operator. Immutable once built.
struct ScenarioModel {
    Checkpoint checkpoint;
    Eigen::MatrixXd g_op;
    std::string id;
};

std::shared_ptr<const ScenarioModel> make_scenario_model(Checkpoint checkpoint, const FeatureBundle& bundle);

/// Forecasts with and without the injected events. Injected events enter the
/// construction window ungated (raw RBF value), merged with the real map by
/// maximum. Speeds are raw model output; see clamp_for_api.
/// Throws OutOfRangeError when the anchor lacks H steps of history or lies
/// outside the data, FormatError/SchemaError/ParameterError for bad requests.
ScenarioResponse predict_scenario(const ScenarioRequest& req, const ScenarioModel& model, const FeatureBundle& bundle);

/// Clamps speeds at 0 and recomputes delta and impacts from the clamped values.
ScenarioResponse clamp_for_api(ScenarioResponse r);

nlohmann::json to_json(const ScenarioResponse& r);

/// Read-only queries and inference over one bundle, with an atomically
/// swappable checkpoint. Safe for concurrent use.
class ScenarioService {
public:
    ScenarioService(FeatureBundle bundle, Checkpoint checkpoint);

    const FeatureBundle& bundle() const { return bundle_; }
    std::shared_ptr<const ScenarioModel> model() const;

    /// Replaces the checkpoint. Requests already running keep the old one.
    void reload(Checkpoint checkpoint);
    void reload(const std::string& path);

    /// Segments, distances, the last H observed speeds before `at` and the
    /// real events active at `at` (default: the last step of the data).
    nlohmann::json network_snapshot(std::optional<Timestamp> at = std::nullopt) const;
    /// Observed speed (null when missing), X_AS and work-zone flag over [from, to),
    /// clipped to the data span. Throws SchemaError for an unknown segment.
    nlohmann::json history(const std::string& segment, Timestamp from, Timestamp to) const;
    nlohmann::json health() const;
    /// Clamped response; asserts the identity case.
    ScenarioResponse scenario(const ScenarioRequest& req) const;

private:
    const FeatureBundle bundle_;
    mutable std::mutex mu_;
    std::shared_ptr<const ScenarioModel> model_;
};

}  // namespace rwz
