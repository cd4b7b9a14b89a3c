#include "rwz/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "rwz/errors.hpp"
#include "rwz/hypergraph.hpp"

namespace rwz {

namespace {

std::vector<WorkZoneEvent> schedule(std::mt19937_64& rng, const RoadNetwork& network, const Calendar& cal,
                                    std::size_t count, std::size_t min_steps, std::size_t max_steps) {
    std::vector<WorkZoneEvent> out;
    if (count == 0) return out;
    if (min_steps == 0 || max_steps < min_steps || max_steps >= cal.length) {
        throw ParameterError("event durations must satisfy 0 < min <= max < series length");
    }
    std::uniform_int_distribution<std::size_t> seg(0, network.size() - 1);
    std::uniform_int_distribution<std::size_t> len(min_steps, max_steps);
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t i = seg(rng);
        const std::size_t l = len(rng);
        std::uniform_int_distribution<std::size_t> start(0, cal.length - l);
        const std::size_t s = start(rng);
        out.push_back({network.segment_ids[i], cal.time_at(s), cal.time_at(s + l)});
    }
    return out;
}

}  // namespace

SyntheticCorridor make_synthetic(const SyntheticConfig& c) {
    if (c.segments < 2) throw ParameterError("synthetic corridor needs at least two segments");
    if (c.days == 0) throw ParameterError("synthetic corridor needs at least one day");
    if (c.step_minutes <= 0 || 1440 % c.step_minutes != 0) throw ParameterError("step must divide a day");
    if (!(c.spacing_miles > 0.0) || !(c.noise >= 0.0) || !(c.missing_rate >= 0.0 && c.missing_rate < 1.0)) {
        throw ParameterError("invalid synthetic corridor parameters");
    }
    std::mt19937_64 rng(c.seed);
    const auto n = static_cast<Eigen::Index>(c.segments);

    std::vector<std::string> ids;
    Eigen::MatrixXd dist(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        ids.push_back("S" + std::to_string(i + 1));
        for (Eigen::Index j = 0; j < n; ++j) dist(i, j) = c.spacing_miles * static_cast<double>(std::abs(i - j));
    }
    SyntheticCorridor out;
    out.network = make_network(ids, dist);

    const std::size_t steps = c.days * 1440 / static_cast<std::size_t>(c.step_minutes);
    const Calendar cal = make_calendar(parse_timestamp("2024-01-01T00:00"), c.step_minutes, steps);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> offset(c.segments);
    std::vector<double> phase(c.segments);
    for (std::size_t i = 0; i < c.segments; ++i) {
        offset[i] = c.segment_spread * (2.0 * unit(rng) - 1.0);
        phase[i] = 0.5 * unit(rng);
    }
    out.events = schedule(rng, out.network, cal, c.workzones, c.workzone_min_steps, c.workzone_max_steps);
    out.incidents = schedule(rng, out.network, cal, c.incidents, c.incident_min_steps, c.incident_max_steps);

    const auto t_len = static_cast<Eigen::Index>(steps);
    Eigen::MatrixXd drop = Eigen::MatrixXd::Zero(n, t_len);
    auto apply = [&](const std::vector<WorkZoneEvent>& events, double amount) {
        for (const auto& e : events) {
            const auto i = static_cast<Eigen::Index>(out.network.index_of(e.segment_id));
            const auto [lo, hi] = active_steps(e, cal);
            for (std::size_t t = lo; t < hi; ++t) {
                double& d = drop(i, static_cast<Eigen::Index>(t));
                d = std::max(d, amount);
            }
        }
    };
    apply(out.events, c.workzone_drop);
    apply(out.incidents, c.incident_drop);

    std::normal_distribution<double> noise(0.0, 1.0);
    SpeedSeries& s = out.table.series;
    s.segment_ids = ids;
    s.values.resize(n, t_len);
    s.mask.resize(n, t_len);
    for (Eigen::Index t = 0; t < t_len; ++t) {
        const double day = static_cast<double>(minute_of_day(cal.time_at(static_cast<std::size_t>(t)))) / 1440.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto iu = static_cast<std::size_t>(i);
            const double cycle = std::sin(2.0 * M_PI * (day + phase[iu]));
            double v = c.base_speed + offset[iu] + c.daily_amplitude * cycle - drop(i, t) + c.noise * noise(rng);
            v = std::max(v, 1.0);
            const bool missing = c.missing_rate > 0.0 && unit(rng) < c.missing_rate;
            s.values(i, t) = missing ? 0.0 : v;
            s.mask(i, t) = missing ? 0.0 : 1.0;
        }
    }
    out.table.calendar = cal;
    return out;
}

}  // namespace rwz
