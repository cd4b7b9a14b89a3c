#include "rwz/scenario.hpp"

#include <algorithm>
#include <cmath>

#include "rwz/errors.hpp"
#include "rwz/evaluation.hpp"
#include "rwz/training.hpp"

namespace rwz {

using nlohmann::json;

namespace {

std::string require_string(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j.at(key).is_string()) throw FormatError(where + ": '" + key + "' must be a string");
    return j.at(key).get<std::string>();
}

Tensor window_tensor(const Eigen::MatrixXd& m, Eigen::Index first, Eigen::Index len) {
    const auto n = static_cast<std::size_t>(m.rows());
    Tensor t({1, n, static_cast<std::size_t>(len)});
    for (std::size_t i = 0; i < n; ++i) {
        for (Eigen::Index c = 0; c < len; ++c) {
            t[i * static_cast<std::size_t>(len) + static_cast<std::size_t>(c)] =
                m(static_cast<Eigen::Index>(i), first + c);
        }
    }
    return t;
}

Eigen::MatrixXd run(const ScenarioModel& model, const FeatureBundle& bundle, const Batch& batch, std::size_t horizon) {
    const Tensor out = predict(model.checkpoint.params, model.g_op, batch);
    const std::size_t n = bundle.segments();
    const std::size_t p = model.checkpoint.params.config.horizon;
    Eigen::MatrixXd speeds(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(horizon));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < horizon; ++t) {
            speeds(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) =
                model.checkpoint.scaler.denormalize(out[i * p + t]);
        }
    }
    return speeds;
}

std::vector<SegmentImpact> impacts_of(const std::vector<std::string>& ids, const Eigen::MatrixXd& delta) {
    std::vector<SegmentImpact> out;
    for (Eigen::Index i = 0; i < delta.rows(); ++i) {
        SegmentImpact s;
        s.segment_id = ids[static_cast<std::size_t>(i)];
        s.mean_delta = delta.cols() > 0 ? delta.row(i).mean() : 0.0;
        s.max_slowdown = delta.cols() > 0 ? std::max(0.0, -delta.row(i).minCoeff()) : 0.0;
        out.push_back(s);
    }
    return out;
}

json matrix_rows(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

ScenarioRequest parse_scenario_request(const json& body, const RoadNetwork& network) {
    if (!body.is_object()) throw FormatError("request body must be a JSON object");
    for (const auto& [key, _] : body.items()) {
        if (key != "anchor" && key != "horizon" && key != "injected_events") {
            throw FormatError("unknown request field '" + key + "'");
        }
    }
    ScenarioRequest req;
    req.anchor = parse_timestamp(require_string(body, "anchor", "request"));
    if (body.contains("horizon")) {
        const json& h = body.at("horizon");
        if (!h.is_number_integer() || h.get<long long>() < 1) throw FormatError("'horizon' must be a positive integer");
        req.horizon = h.get<std::size_t>();
    }
    if (body.contains("injected_events")) {
        const json& events = body.at("injected_events");
        if (!events.is_array()) throw FormatError("'injected_events' must be an array");
        for (std::size_t k = 0; k < events.size(); ++k) {
            const json& e = events[k];
            const std::string where = "injected_events[" + std::to_string(k) + "]";
            if (!e.is_object()) throw FormatError(where + " must be an object");
            WorkZoneEvent ev{require_string(e, "segment_id", where), parse_timestamp(require_string(e, "start", where)),
                             parse_timestamp(require_string(e, "end", where))};
            validate_event(ev, network);
            req.injected_events.push_back(std::move(ev));
        }
    }
    return req;
}

std::shared_ptr<const ScenarioModel> make_scenario_model(Checkpoint checkpoint, const FeatureBundle& bundle) {
    const ModelConfig& c = checkpoint.params.config;
    if (c.segments != bundle.segments()) {
        throw ShapeError("checkpoint has N=" + std::to_string(c.segments) + " but the data has " +
                         std::to_string(bundle.segments()) + " segments");
    }
    if (c.slots != bundle.calendar.slots_per_week()) throw ShapeError("checkpoint was trained on a different time step");
    auto m = std::make_shared<ScenarioModel>();
    m->g_op = model_operator(bundle.network, c);
    m->id = checkpoint_id(checkpoint.params);
    m->checkpoint = std::move(checkpoint);
    return m;
}

ScenarioResponse predict_scenario(const ScenarioRequest& req, const ScenarioModel& model, const FeatureBundle& bundle) {
    const ModelConfig& cfg = model.checkpoint.params.config;
    const std::size_t horizon = req.horizon == 0 ? cfg.horizon : req.horizon;
    if (horizon > cfg.horizon) {
        throw ParameterError("horizon " + std::to_string(horizon) + " exceeds the model's " + std::to_string(cfg.horizon));
    }
    const Calendar& cal = bundle.calendar;
    if ((req.anchor.minutes - cal.start.minutes) % cal.step_minutes != 0) {
        throw FormatError("anchor " + format_timestamp(req.anchor) + " is not on the " +
                          std::to_string(cal.step_minutes) + "-minute grid");
    }
    const std::size_t a = cal.index_of(req.anchor, true);
    if (a < cfg.history) {
        throw OutOfRangeError("anchor " + format_timestamp(req.anchor) + " has fewer than " +
                              std::to_string(cfg.history) + " steps of history");
    }
    for (const auto& e : req.injected_events) validate_event(e, bundle.network);

    const auto h0 = static_cast<Eigen::Index>(a - cfg.history);
    const auto h = static_cast<Eigen::Index>(cfg.history);
    const auto n = bundle.segments();
    Batch base;
    base.size = 1;
    base.speed = window_tensor(bundle.scaler.normalize(bundle.speed.middleCols(h0, h)), 0, h);
    base.construction = window_tensor(bundle.construction, h0, h);
    base.slots.assign(bundle.time_slots.begin() + h0, bundle.time_slots.begin() + h0 + h);
    base.target = Tensor({1, n, cfg.horizon});
    base.mask = Tensor({1, n, cfg.horizon});

    ScenarioResponse r;
    r.anchor = req.anchor;
    r.horizon = horizon;
    r.segment_ids = bundle.network.segment_ids;
    for (std::size_t p = 0; p < horizon; ++p) r.times.push_back(cal.time_at(a + p));
    r.baseline = run(model, bundle, base, horizon);

    Batch scen = base;
    if (!req.injected_events.empty()) {
        const Eigen::MatrixXd injected =
            raw_construction_map(req.injected_events, bundle.network, cal, bundle.config.sigma).middleCols(h0, h);
        const Eigen::MatrixXd merged = bundle.construction.middleCols(h0, h).cwiseMax(injected);
        scen.construction = window_tensor(merged, 0, h);
        const Eigen::MatrixXd covered =
            binary_construction_map(req.injected_events, bundle.network, cal).middleCols(h0, h);
        r.injected_window_cells = static_cast<std::size_t>(covered.sum());
    }
    r.scenario = run(model, bundle, scen, horizon);
    r.delta = r.scenario - r.baseline;
    r.impacts = impacts_of(r.segment_ids, r.delta);
    return r;
}

ScenarioResponse clamp_for_api(ScenarioResponse r) {
    r.baseline = r.baseline.cwiseMax(0.0);
    r.scenario = r.scenario.cwiseMax(0.0);
    r.delta = r.scenario - r.baseline;
    r.impacts = impacts_of(r.segment_ids, r.delta);
    return r;
}

json to_json(const ScenarioResponse& r) {
    json times = json::array();
    for (const auto& t : r.times) times.push_back(format_timestamp(t));
    json impacts = json::array();
    for (const auto& s : r.impacts) {
        impacts.push_back({{"segment_id", s.segment_id}, {"mean_delta", s.mean_delta}, {"max_slowdown", s.max_slowdown}});
    }
    return {{"anchor", format_timestamp(r.anchor)},
            {"horizon", r.horizon},
            {"segments", r.segment_ids},
            {"times", times},
            {"baseline", matrix_rows(r.baseline)},
            {"scenario", matrix_rows(r.scenario)},
            {"delta", matrix_rows(r.delta)},
            {"impacts", impacts},
            {"injected_window_cells", r.injected_window_cells},
            {"note", "model-based extrapolation; injected events act through the input window"}};
}

ScenarioService::ScenarioService(FeatureBundle bundle, Checkpoint checkpoint)
    : bundle_(std::move(bundle)), model_(make_scenario_model(std::move(checkpoint), bundle_)) {}

std::shared_ptr<const ScenarioModel> ScenarioService::model() const {
    std::lock_guard<std::mutex> lock(mu_);
    return model_;
}

void ScenarioService::reload(Checkpoint checkpoint) {
    // Build outside the lock; the swap itself is a pointer assignment.
    auto next = make_scenario_model(std::move(checkpoint), bundle_);
    std::lock_guard<std::mutex> lock(mu_);
    model_ = std::move(next);
}

void ScenarioService::reload(const std::string& path) { reload(load_checkpoint(path)); }

json ScenarioService::network_snapshot(std::optional<Timestamp> at) const {
    const Calendar& cal = bundle_.calendar;
    const std::size_t t = at ? cal.index_of(*at) : cal.length - 1;
    const auto model = this->model();
    const std::size_t h = std::min(model->checkpoint.params.config.history, t + 1);
    json segments = json::array();
    for (std::size_t i = 0; i < bundle_.segments(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        json recent = json::array();
        for (std::size_t k = t + 1 - h; k <= t; ++k) {
            const auto c = static_cast<Eigen::Index>(k);
            recent.push_back(bundle_.mask(r, c) != 0.0 ? json(bundle_.speed(r, c)) : json(nullptr));
        }
        json dist = json::array();
        for (std::size_t j = 0; j < bundle_.segments(); ++j) {
            dist.push_back(bundle_.network.distance(r, static_cast<Eigen::Index>(j)));
        }
        segments.push_back({{"id", bundle_.network.segment_ids[i]}, {"distances", dist}, {"recent_speeds", recent}});
    }
    json recent_times = json::array();
    for (std::size_t k = t + 1 - h; k <= t; ++k) recent_times.push_back(format_timestamp(cal.time_at(k)));
    json active = json::array();
    for (const auto& e : bundle_.events) {
        const auto [lo, hi] = active_steps(e, cal);
        if (lo <= t && t < hi) {
            active.push_back({{"segment_id", e.segment_id}, {"start", format_timestamp(e.start)},
                              {"end", format_timestamp(e.end)}});
        }
    }
    const auto& mc = model->checkpoint.params.config;
    json horizons = json::array();
    for (std::size_t p : {3, 6, 12}) {
        if (p <= mc.horizon) horizons.push_back(p);
    }
    return {{"at", format_timestamp(cal.time_at(t))},
            {"calendar",
             {{"start", format_timestamp(cal.start)}, {"step_minutes", cal.step_minutes}, {"length", cal.length}}},
            {"history", mc.history},
            {"horizon", mc.horizon},
            {"horizons", horizons},
            {"segments", segments},
            {"recent_times", recent_times},
            {"active_events", active}};
}

json ScenarioService::history(const std::string& segment, Timestamp from, Timestamp to) const {
    const auto i = static_cast<Eigen::Index>(bundle_.network.index_of(segment));
    const Calendar& cal = bundle_.calendar;
    const Eigen::MatrixXd wz = workzone_map(bundle_, 0.0);
    json times = json::array();
    json speed = json::array();
    json average = json::array();
    json workzone = json::array();
    for (std::size_t t = 0; t < cal.length && cal.time_at(t) < to; ++t) {
        if (cal.time_at(t) < from) continue;
        const auto c = static_cast<Eigen::Index>(t);
        times.push_back(format_timestamp(cal.time_at(t)));
        speed.push_back(bundle_.mask(i, c) != 0.0 ? json(bundle_.speed(i, c)) : json(nullptr));
        average.push_back(bundle_.history(i, c));
        workzone.push_back(static_cast<int>(wz(i, c)));
    }
    return {{"segment_id", segment}, {"times", times}, {"speed", speed}, {"average", average}, {"workzone", workzone}};
}

json ScenarioService::health() const {
    const auto m = model();
    return {{"status", "ok"}, {"checkpoint_id", m->id}, {"segments", bundle_.segments()}};
}

ScenarioResponse ScenarioService::scenario(const ScenarioRequest& req) const {
    const auto m = model();
    ScenarioResponse r = clamp_for_api(predict_scenario(req, *m, bundle_));
    if (req.injected_events.empty() && (r.delta.array() != 0.0).any()) {
        throw StateError("non-zero delta for a scenario without injected events");
    }
    return r;
}

}  // namespace rwz
