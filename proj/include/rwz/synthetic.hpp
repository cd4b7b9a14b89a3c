#pragma once

#include <cstdint>
#include <vector>

#include "rwz/features.hpp"

namespace rwz {

/// A straight corridor of equally spaced segments with a daily speed cycle,
/// Gaussian noise, scheduled work zones and unscheduled incidents.
///
/// Work zones and incidents both lower the speed of their segment by a fixed
/// drop while active. Only work zones are reported as events; incidents are
/// the confounder a speed-only model cannot tell apart from a work zone.
struct SyntheticConfig {
    std::size_t segments = 8;
    double spacing_miles = 0.5;
    std::size_t days = 14;
    int step_minutes = 15;
    double base_speed = 60.0;
    double segment_spread = 4.0;   // per-segment offsets drawn from [-spread, spread]
    double daily_amplitude = 10.0;
    double noise = 1.0;            // standard deviation, MPH
    std::size_t workzones = 0;
    std::size_t workzone_min_steps = 24;
    std::size_t workzone_max_steps = 48;
    double workzone_drop = 20.0;
    std::size_t incidents = 0;
    std::size_t incident_min_steps = 2;
    std::size_t incident_max_steps = 12;
    double incident_drop = 20.0;
    double missing_rate = 0.0;     // fraction of cells left unobserved
    std::uint64_t seed = 1;
};

struct SyntheticCorridor {
    RoadNetwork network;
    SpeedTable table;
    std::vector<WorkZoneEvent> events;     // reported work zones
    std::vector<WorkZoneEvent> incidents;  // unreported, for diagnostics
};

/// Starts on Monday 2024-01-01T00:00. Deterministic in the config.
SyntheticCorridor make_synthetic(const SyntheticConfig& config);

}  // namespace rwz
