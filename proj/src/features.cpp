#include "rwz/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "binio.hpp"
#include "csv.hpp"
#include "rwz/errors.hpp"
#include "rwz/log.hpp"

namespace rwz {

namespace {

constexpr char kCacheMagic[8] = {'R', 'W', 'Z', 'F', 'E', 'A', 'T', '1'};
constexpr std::uint32_t kCacheVersion = 1;

std::int64_t ceil_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if (a % b != 0 && ((a > 0) == (b > 0))) ++q;
    return q;
}

}  // namespace

std::pair<std::size_t, std::size_t> active_steps(const WorkZoneEvent& e, const Calendar& cal) {
    const std::int64_t step = cal.step_minutes;
    const std::int64_t lo = std::max<std::int64_t>(0, ceil_div(e.start.minutes - cal.start.minutes, step));
    const std::int64_t hi = std::min<std::int64_t>(static_cast<std::int64_t>(cal.length),
                                                   ceil_div(e.end.minutes - cal.start.minutes, step));
    if (hi <= lo) return {0, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

std::size_t Calendar::slot_of(Timestamp t) const {
    const std::int64_t week_minute = static_cast<std::int64_t>(weekday(t)) * 1440 + minute_of_day(t);
    return static_cast<std::size_t>(week_minute / step_minutes) % slots_per_week();
}

std::size_t Calendar::index_of(Timestamp t, bool allow_end) const {
    const std::int64_t off = t.minutes - start.minutes;
    const auto limit = static_cast<std::int64_t>(length) * step_minutes;
    if (off < 0 || off > limit || (!allow_end && off == limit)) {
        throw OutOfRangeError("time " + format_timestamp(t) + " is outside the data span");
    }
    if (off % step_minutes != 0) {
        throw OutOfRangeError("time " + format_timestamp(t) + " is not on the " + std::to_string(step_minutes) +
                              "-minute grid");
    }
    return static_cast<std::size_t>(off / step_minutes);
}

Calendar make_calendar(Timestamp start, int step_minutes, std::size_t length) {
    if (step_minutes <= 0 || 1440 % step_minutes != 0) {
        throw ParameterError("sampling step of " + std::to_string(step_minutes) + " minutes does not divide a day");
    }
    return Calendar{start, step_minutes, length};
}

SpeedTable load_speed_csv(const std::string& path, const RoadNetwork* network) {
    const auto rows = csv::read_rows(path);
    if (rows.size() < 3) throw FormatError(path + ": need a header and at least two rows");
    const auto& header = rows[0];
    if (header.size() < 2) throw SchemaError(path + ": no segment columns");
    std::vector<std::string> ids(header.begin() + 1, header.end());
    const std::size_t n = ids.size();
    const std::size_t t_len = rows.size() - 1;

    std::vector<std::size_t> target_row(n);
    if (network) {
        if (network->size() != n) {
            throw SchemaError(path + ": " + std::to_string(n) + " segment columns for a network of " +
                              std::to_string(network->size()));
        }
        for (std::size_t j = 0; j < n; ++j) target_row[j] = network->index_of(ids[j]);
        std::vector<std::size_t> check = target_row;
        std::sort(check.begin(), check.end());
        if (std::adjacent_find(check.begin(), check.end()) != check.end()) {
            throw SchemaError(path + ": duplicate segment column");
        }
        ids = network->segment_ids;
    } else {
        for (std::size_t j = 0; j < n; ++j) target_row[j] = j;
    }

    SpeedSeries s;
    s.segment_ids = ids;
    s.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(t_len));
    s.mask = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(t_len));

    std::vector<Timestamp> times(t_len);
    for (std::size_t t = 0; t < t_len; ++t) {
        const auto& row = rows[t + 1];
        const std::string where = path + " row " + std::to_string(t + 2);
        if (row.size() != n + 1) throw FormatError(where + ": expected " + std::to_string(n + 1) + " columns");
        try {
            times[t] = parse_timestamp(row[0]);
        } catch (const FormatError& e) {
            throw FormatError(where + ": " + e.what());
        }
        for (std::size_t j = 0; j < n; ++j) {
            const auto r = static_cast<Eigen::Index>(target_row[j]);
            const auto c = static_cast<Eigen::Index>(t);
            if (row[j + 1].empty()) continue;
            const double v = csv::to_double(row[j + 1], where);
            if (!std::isfinite(v) || v < 0.0) throw FormatError(where + ": speed must be finite and non-negative");
            if (v == 0.0) continue;
            s.values(r, c) = v;
            s.mask(r, c) = 1.0;
        }
    }
    const std::int64_t step = times[1].minutes - times[0].minutes;
    if (step <= 0) throw FormatError(path + " row 3: timestamps must be strictly increasing");
    for (std::size_t t = 1; t < t_len; ++t) {
        if (times[t].minutes - times[t - 1].minutes != step) {
            throw FormatError(path + " row " + std::to_string(t + 2) + ": irregular timestamp " +
                              format_timestamp(times[t]) + " (expected a " + std::to_string(step) + "-minute step)");
        }
    }
    Calendar cal;
    try {
        cal = make_calendar(times[0], static_cast<int>(step), t_len);
    } catch (const ParameterError& e) {
        throw FormatError(path + ": " + e.what());
    }
    return SpeedTable{std::move(s), cal};
}

void write_speed_csv(const std::string& path, const SpeedSeries& series, const Calendar& cal) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << "timestamp";
    for (const auto& id : series.segment_ids) out << ',' << id;
    out << '\n';
    out.precision(17);
    for (std::size_t t = 0; t < series.steps(); ++t) {
        out << format_timestamp(cal.time_at(t));
        for (std::size_t i = 0; i < series.segments(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            const auto c = static_cast<Eigen::Index>(t);
            out << ',';
            if (series.mask(r, c) != 0.0) out << series.values(r, c);
        }
        out << '\n';
    }
}

void validate_event(const WorkZoneEvent& e, const RoadNetwork& network) {
    network.index_of(e.segment_id);
    if (!(e.start < e.end)) {
        throw FormatError("work zone on '" + e.segment_id + "' must start before it ends");
    }
}

std::vector<WorkZoneEvent> load_workzones_csv(const std::string& path, const RoadNetwork& network) {
    const auto rows = csv::read_rows(path);
    if (rows.empty()) throw FormatError(path + ": missing header");
    if (rows[0].size() != 3 || rows[0][0] != "segment_id" || rows[0][1] != "start" || rows[0][2] != "end") {
        throw SchemaError(path + ": header must be segment_id,start,end");
    }
    std::vector<WorkZoneEvent> events;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const std::string where = path + " row " + std::to_string(r + 1);
        if (rows[r].size() != 3) throw FormatError(where + ": expected 3 columns");
        WorkZoneEvent e;
        e.segment_id = rows[r][0];
        try {
            e.start = parse_timestamp(rows[r][1]);
            e.end = parse_timestamp(rows[r][2]);
            validate_event(e, network);
        } catch (const DataError& err) {
            if (dynamic_cast<const SchemaError*>(&err)) throw SchemaError(where + ": " + err.what());
            throw FormatError(where + ": " + err.what());
        }
        events.push_back(std::move(e));
    }
    return events;
}

void write_workzones_csv(const std::string& path, const std::vector<WorkZoneEvent>& events) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << "segment_id,start,end\n";
    for (const auto& e : events) {
        out << e.segment_id << ',' << format_timestamp(e.start) << ',' << format_timestamp(e.end) << '\n';
    }
}

Eigen::MatrixXd average_history_map(const SpeedSeries& s, const Calendar& cal, std::size_t fit_end) {
    const auto n = static_cast<Eigen::Index>(s.segments());
    const std::size_t t_len = s.steps();
    fit_end = std::min(fit_end, t_len);
    const auto slots = static_cast<Eigen::Index>(cal.slots_per_week());
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n, slots);
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n, slots);
    for (std::size_t t = 0; t < fit_end; ++t) {
        const auto slot = static_cast<Eigen::Index>(cal.slot_at(t));
        const auto c = static_cast<Eigen::Index>(t);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (s.mask(i, c) == 0.0) continue;
            sums(i, slot) += s.values(i, c);
            counts(i, slot) += 1.0;
        }
    }
    Eigen::MatrixXd table(n, slots);
    std::size_t fallbacks = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double total = counts.row(i).sum();
        if (total == 0.0) {
            throw DataError("segment '" + s.segment_ids[static_cast<std::size_t>(i)] +
                            "' has no observed speed in the history window");
        }
        const double global = sums.row(i).sum() / total;
        for (Eigen::Index k = 0; k < slots; ++k) {
            if (counts(i, k) > 0.0) {
                table(i, k) = sums(i, k) / counts(i, k);
            } else {
                table(i, k) = global;
                ++fallbacks;
            }
        }
    }
    if (fallbacks > 0) {
        log(LogLevel::Debug, std::to_string(fallbacks) +
                                 " (segment, weekly slot) pairs had no observation; used the segment mean");
    }
    Eigen::MatrixXd out(n, static_cast<Eigen::Index>(t_len));
    for (std::size_t t = 0; t < t_len; ++t) {
        out.col(static_cast<Eigen::Index>(t)) = table.col(static_cast<Eigen::Index>(cal.slot_at(t)));
    }
    return out;
}

Eigen::MatrixXd diff_map(const Eigen::MatrixXd& speed, const Eigen::MatrixXd& history, const Eigen::MatrixXd& mask) {
    if (speed.rows() != history.rows() || speed.cols() != history.cols() || speed.rows() != mask.rows() ||
        speed.cols() != mask.cols()) {
        throw ShapeError("diff map inputs are not aligned");
    }
    return (mask.array() != 0.0).select(speed - history, 0.0);
}

Eigen::MatrixXd raw_construction_map(const std::vector<WorkZoneEvent>& events, const RoadNetwork& network,
                                     const Calendar& cal, double sigma) {
    if (!(sigma > 0.0)) throw ParameterError("RBF bandwidth sigma must be positive");
    const auto n = static_cast<Eigen::Index>(network.size());
    Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(cal.length));
    for (const auto& e : events) {
        const auto seg = static_cast<Eigen::Index>(network.index_of(e.segment_id));
        Eigen::VectorXd kernel(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double d = network.distance(i, seg);
            kernel(i) = std::exp(-d * d / (2.0 * sigma * sigma));
        }
        const auto [lo, hi] = active_steps(e, cal);
        for (std::size_t t = lo; t < hi; ++t) {
            auto col = raw.col(static_cast<Eigen::Index>(t));
            col = col.cwiseMax(kernel);
        }
    }
    return raw;
}

Eigen::MatrixXd construction_map(const std::vector<WorkZoneEvent>& events, const RoadNetwork& network,
                                 const Calendar& cal, double sigma, const Eigen::MatrixXd& diff, double delta) {
    Eigen::MatrixXd raw = raw_construction_map(events, network, cal, sigma);
    if (diff.rows() != raw.rows() || diff.cols() != raw.cols()) throw ShapeError("diff map does not match the calendar");
    return (diff.array() <= delta).select(raw, 0.0);
}

Eigen::MatrixXd binary_construction_map(const std::vector<WorkZoneEvent>& events, const RoadNetwork& network,
                                        const Calendar& cal) {
    Eigen::MatrixXd bc = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(network.size()),
                                               static_cast<Eigen::Index>(cal.length));
    for (const auto& e : events) {
        const auto seg = static_cast<Eigen::Index>(network.index_of(e.segment_id));
        const auto [lo, hi] = active_steps(e, cal);
        for (std::size_t t = lo; t < hi; ++t) bc(seg, static_cast<Eigen::Index>(t)) = 1.0;
    }
    return bc;
}

MinMaxScaler make_scaler(double vmin, double vmax) {
    if (!(vmax > vmin)) {
        throw DataError("degenerate data: normalisation bounds [" + std::to_string(vmin) + ", " + std::to_string(vmax) +
                        "] are empty");
    }
    return MinMaxScaler{vmin, vmax};
}

MinMaxScaler fit_scaler(const SpeedSeries& s, std::size_t fit_end) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    fit_end = std::min(fit_end, s.steps());
    for (std::size_t t = 0; t < fit_end; ++t) {
        for (std::size_t i = 0; i < s.segments(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            const auto c = static_cast<Eigen::Index>(t);
            if (s.mask(r, c) == 0.0) continue;
            lo = std::min(lo, s.values(r, c));
            hi = std::max(hi, s.values(r, c));
        }
    }
    return make_scaler(lo, hi);
}

AnchorPlan plan_anchors(std::size_t steps, std::size_t history, std::size_t horizon, const SplitRatios& split) {
    if (history < 1 || horizon < 1) throw ParameterError("history and horizon must be at least 1");
    if (history + horizon > steps) {
        throw ParameterError("history + horizon (" + std::to_string(history + horizon) + ") exceeds the series length " +
                             std::to_string(steps));
    }
    if (split.train <= 0.0 || split.val < 0.0 || split.test < 0.0 ||
        std::fabs(split.train + split.val + split.test - 1.0) > 1e-9) {
        throw ParameterError("split ratios must be non-negative, with a positive training share, and sum to 1");
    }
    const std::size_t count = steps - history - horizon + 1;
    auto n_train = static_cast<std::size_t>(std::llround(split.train * static_cast<double>(count)));
    auto n_val = static_cast<std::size_t>(std::llround(split.val * static_cast<double>(count)));
    n_train = std::min(n_train, count);
    n_val = std::min(n_val, count - n_train);
    if (n_train == 0) throw ParameterError("the training split is empty");
    AnchorPlan plan;
    plan.first_anchor = history;
    plan.train_end = history + n_train;
    plan.val_end = plan.train_end + n_val;
    plan.end = history + count;
    plan.fit_end = plan.train_end - 1 + horizon;
    return plan;
}

FeatureBundle build_features(const SpeedSeries& series, const Calendar& cal, std::vector<WorkZoneEvent> events,
                             RoadNetwork network, const FeatureConfig& config, std::size_t history,
                             std::size_t horizon) {
    if (series.segment_ids != network.segment_ids) {
        throw SchemaError("speed columns do not match the road network's segments");
    }
    if (series.steps() != cal.length) throw ShapeError("speed series length does not match the calendar");
    for (const auto& e : events) validate_event(e, network);

    const AnchorPlan plan = plan_anchors(series.steps(), history, horizon, config.split);
    FeatureBundle b;
    b.calendar = cal;
    b.config = config;
    b.fit_end = plan.fit_end;
    b.mask = series.mask;
    b.history = average_history_map(series, cal, plan.fit_end);
    b.speed = (series.mask.array() != 0.0).select(series.values, b.history);
    b.diff = diff_map(series.values, b.history, series.mask);
    b.construction = construction_map(events, network, cal, config.sigma, b.diff, config.delta);
    b.binary_construction = binary_construction_map(events, network, cal);
    b.scaler = fit_scaler(series, plan.fit_end);
    b.time_slots.resize(cal.length);
    for (std::size_t t = 0; t < cal.length; ++t) b.time_slots[t] = cal.slot_at(t);
    b.network = std::move(network);
    b.events = std::move(events);
    return b;
}

SampleSplits windowize(const FeatureBundle& bundle, std::size_t history, std::size_t horizon, const SplitRatios& split) {
    const AnchorPlan plan = plan_anchors(bundle.steps(), history, horizon, split);
    SampleSplits out;
    for (std::size_t t = plan.first_anchor; t < plan.end; ++t) {
        const auto observed = bundle.mask.middleCols(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(horizon)).sum();
        if (observed == 0.0) continue;
        ForecastSample s{t, history, horizon};
        if (t < plan.train_end) {
            out.train.push_back(s);
        } else if (t < plan.val_end) {
            out.val.push_back(s);
        } else {
            out.test.push_back(s);
        }
    }
    return out;
}

SampleWindow materialize(const FeatureBundle& bundle, const ForecastSample& sample) {
    if (sample.anchor < sample.history || sample.anchor + sample.horizon > bundle.steps()) {
        throw OutOfRangeError("sample anchored at step " + std::to_string(sample.anchor) + " does not fit the data");
    }
    const auto h0 = static_cast<Eigen::Index>(sample.anchor - sample.history);
    const auto h = static_cast<Eigen::Index>(sample.history);
    const auto t0 = static_cast<Eigen::Index>(sample.anchor);
    const auto p = static_cast<Eigen::Index>(sample.horizon);
    SampleWindow w;
    w.speed = bundle.scaler.normalize(bundle.speed.middleCols(h0, h));
    w.construction = bundle.construction.middleCols(h0, h);
    w.slots.assign(bundle.time_slots.begin() + h0, bundle.time_slots.begin() + h0 + h);
    w.target = bundle.scaler.normalize(bundle.speed.middleCols(t0, p));
    w.target_mask = bundle.mask.middleCols(t0, p);
    return w;
}

void save_feature_cache(const std::string& path, const FeatureBundle& b) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out.write(kCacheMagic, sizeof kCacheMagic);
    binio::put<std::uint32_t>(out, kCacheVersion);
    binio::put<std::uint64_t>(out, b.network.size());
    for (const auto& id : b.network.segment_ids) binio::put_string(out, id);
    binio::put_matrix(out, b.network.distance);
    binio::put_matrix(out, b.network.adjacency);
    binio::put<std::int64_t>(out, b.calendar.start.minutes);
    binio::put<std::int32_t>(out, b.calendar.step_minutes);
    binio::put<std::uint64_t>(out, b.calendar.length);
    binio::put<std::uint64_t>(out, b.events.size());
    for (const auto& e : b.events) {
        binio::put_string(out, e.segment_id);
        binio::put<std::int64_t>(out, e.start.minutes);
        binio::put<std::int64_t>(out, e.end.minutes);
    }
    for (const auto* m : {&b.speed, &b.history, &b.diff, &b.construction, &b.binary_construction, &b.mask}) {
        binio::put_matrix(out, *m);
    }
    binio::put<double>(out, b.scaler.vmin);
    binio::put<double>(out, b.scaler.vmax);
    binio::put<double>(out, b.config.delta);
    binio::put<double>(out, b.config.sigma);
    binio::put<double>(out, b.config.split.train);
    binio::put<double>(out, b.config.split.val);
    binio::put<double>(out, b.config.split.test);
    binio::put<std::uint64_t>(out, b.fit_end);
    if (!out) throw DataError("failed writing '" + path + "'");
}

FeatureBundle load_feature_cache(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || !std::equal(magic, magic + 8, kCacheMagic)) throw FormatError(path + ": not a feature cache");
    if (binio::get<std::uint32_t>(in) != kCacheVersion) throw FormatError(path + ": unsupported cache version");
    FeatureBundle b;
    const auto n = binio::get<std::uint64_t>(in);
    std::vector<std::string> ids;
    for (std::uint64_t i = 0; i < n; ++i) ids.push_back(binio::get_string(in));
    Eigen::MatrixXd dist = binio::get_matrix(in);
    Eigen::MatrixXd adj = binio::get_matrix(in);
    b.network = make_network(std::move(ids), std::move(dist), std::move(adj));
    b.calendar.start.minutes = binio::get<std::int64_t>(in);
    b.calendar.step_minutes = binio::get<std::int32_t>(in);
    b.calendar.length = binio::get<std::uint64_t>(in);
    const auto ne = binio::get<std::uint64_t>(in);
    for (std::uint64_t k = 0; k < ne; ++k) {
        WorkZoneEvent e;
        e.segment_id = binio::get_string(in);
        e.start.minutes = binio::get<std::int64_t>(in);
        e.end.minutes = binio::get<std::int64_t>(in);
        b.events.push_back(std::move(e));
    }
    for (auto* m : {&b.speed, &b.history, &b.diff, &b.construction, &b.binary_construction, &b.mask}) {
        *m = binio::get_matrix(in);
    }
    b.scaler.vmin = binio::get<double>(in);
    b.scaler.vmax = binio::get<double>(in);
    b.config.delta = binio::get<double>(in);
    b.config.sigma = binio::get<double>(in);
    b.config.split.train = binio::get<double>(in);
    b.config.split.val = binio::get<double>(in);
    b.config.split.test = binio::get<double>(in);
    b.fit_end = binio::get<std::uint64_t>(in);
    b.time_slots.resize(b.calendar.length);
    for (std::size_t t = 0; t < b.calendar.length; ++t) b.time_slots[t] = b.calendar.slot_at(t);
    return b;
}

}  // namespace rwz
