#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "rwz/hypergraph.hpp"
#include "rwz/timeutil.hpp"

namespace rwz {

/// Uniform sampling grid of a series.
struct Calendar {
    Timestamp start;
    int step_minutes = 15;
    std::size_t length = 0;

    Timestamp time_at(std::size_t t) const { return Timestamp{start.minutes + static_cast<std::int64_t>(t) * step_minutes}; }
    std::size_t slots_per_week() const { return static_cast<std::size_t>(7 * 1440 / step_minutes); }
    /// Weekly bin of a timestamp: ((weekday*1440 + minute_of_day) / step) mod slots_per_week.
    std::size_t slot_of(Timestamp t) const;
    std::size_t slot_at(std::size_t t) const { return slot_of(time_at(t)); }
    /// Step index of `t`; throws OutOfRangeError when `t` is off-grid or outside [start, start + length*step].
    std::size_t index_of(Timestamp t, bool allow_end = false) const;
};

/// Throws ParameterError unless the step divides a day.
Calendar make_calendar(Timestamp start, int step_minutes, std::size_t length);

/// Observed speeds (MPH), N x T; mask is 1 where a value was observed.
struct SpeedSeries {
    std::vector<std::string> segment_ids;
    Eigen::MatrixXd values;
    Eigen::MatrixXd mask;

    std::size_t segments() const { return static_cast<std::size_t>(values.rows()); }
    std::size_t steps() const { return static_cast<std::size_t>(values.cols()); }
};

struct SpeedTable {
    SpeedSeries series;
    Calendar calendar;
};

/// `timestamp,<seg>,...` rows at a uniform step. Empty cells and 0 are
/// missing. When `network` is given every column must name one of its
/// segments and every segment must have a column; rows are reordered to
/// the network's segment order.
SpeedTable load_speed_csv(const std::string& path, const RoadNetwork* network = nullptr);
void write_speed_csv(const std::string& path, const SpeedSeries& series, const Calendar& cal);

struct WorkZoneEvent {
    std::string segment_id;
    Timestamp start;
    Timestamp end;

    bool active_at(Timestamp t) const { return start <= t && t < end; }
};

/// `segment_id,start,end` rows. Validates start < end and known segments.
std::vector<WorkZoneEvent> load_workzones_csv(const std::string& path, const RoadNetwork& network);
void write_workzones_csv(const std::string& path, const std::vector<WorkZoneEvent>& events);
void validate_event(const WorkZoneEvent& e, const RoadNetwork& network);
/// Step indices [first, last) of the calendar whose timestamps fall inside the event; {0, 0} when none do.
std::pair<std::size_t, std::size_t> active_steps(const WorkZoneEvent& e, const Calendar& cal);

/// Mean of observed speeds per (segment, weekly slot) over steps [0, fit_end),
/// expanded to N x T by looking up each step's slot. A (segment, slot) pair
/// with no observation falls back to the segment's mean over the fit range.
Eigen::MatrixXd average_history_map(const SpeedSeries& s, const Calendar& cal, std::size_t fit_end);
inline Eigen::MatrixXd average_history_map(const SpeedSeries& s, const Calendar& cal) {
    return average_history_map(s, cal, s.steps());
}

/// X_S - X_AS on observed cells, 0 elsewhere. Negative means slower than usual.
Eigen::MatrixXd diff_map(const Eigen::MatrixXd& speed, const Eigen::MatrixXd& history, const Eigen::MatrixXd& mask);

/// Max over active events of exp(-d(i, seg)^2 / (2 sigma^2)); no diff gating.
Eigen::MatrixXd raw_construction_map(const std::vector<WorkZoneEvent>& events, const RoadNetwork& network,
                                     const Calendar& cal, double sigma);

/// Raw RBF map kept only where the diff map shows a slowdown (X_D <= delta).
Eigen::MatrixXd construction_map(const std::vector<WorkZoneEvent>& events, const RoadNetwork& network,
                                 const Calendar& cal, double sigma, const Eigen::MatrixXd& diff, double delta);

/// 1 where an event on the segment itself is active.
Eigen::MatrixXd binary_construction_map(const std::vector<WorkZoneEvent>& events, const RoadNetwork& network,
                                        const Calendar& cal);

/// Min-max scaling with bounds fitted on the training span.
struct MinMaxScaler {
    double vmin = 0.0;
    double vmax = 1.0;

    double normalize(double x) const { return (x - vmin) / (vmax - vmin); }
    double denormalize(double y) const { return y * (vmax - vmin) + vmin; }
    Eigen::MatrixXd normalize(const Eigen::MatrixXd& x) const { return (x.array() - vmin) / (vmax - vmin); }
    Eigen::MatrixXd denormalize(const Eigen::MatrixXd& y) const { return y.array() * (vmax - vmin) + vmin; }
};

/// Throws DataError when vmax <= vmin.
MinMaxScaler make_scaler(double vmin, double vmax);
/// Bounds over observed cells in steps [0, fit_end).
MinMaxScaler fit_scaler(const SpeedSeries& s, std::size_t fit_end);

struct SplitRatios {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
};

/// Chronological partition of the anchors H..T-P into train/val/test.
struct AnchorPlan {
    std::size_t first_anchor = 0;
    std::size_t train_end = 0;  // anchors [first_anchor, train_end) are training
    std::size_t val_end = 0;    // [train_end, val_end) validation, [val_end, last_anchor] test
    std::size_t end = 0;        // one past the last anchor
    /// Steps touched by training targets: [0, fit_end). Statistics use only these.
    std::size_t fit_end = 0;
};

AnchorPlan plan_anchors(std::size_t steps, std::size_t history, std::size_t horizon, const SplitRatios& split);

struct FeatureConfig {
    double delta = -5.0;  // MPH; X_D <= delta counts as a slowdown
    double sigma = 1.0;   // miles; RBF bandwidth of the construction map
    SplitRatios split;
};

/// All aligned N x T maps plus the data they were derived from.
struct FeatureBundle {
    RoadNetwork network;
    Calendar calendar;
    std::vector<WorkZoneEvent> events;

    Eigen::MatrixXd speed;         // X_S in MPH, missing cells imputed from X_AS
    Eigen::MatrixXd history;       // X_AS in MPH
    Eigen::MatrixXd diff;          // X_D in MPH
    Eigen::MatrixXd construction;  // X_C in [0,1]
    Eigen::MatrixXd binary_construction;  // X_BC
    Eigen::MatrixXd mask;          // 1 = observed
    std::vector<std::size_t> time_slots;
    MinMaxScaler scaler;
    FeatureConfig config;
    std::size_t fit_end = 0;

    std::size_t segments() const { return network.size(); }
    std::size_t steps() const { return calendar.length; }
};

/// Algorithm steps: history map from the training span, imputation, diff
/// map, gated construction map, scaler fitted on the training span.
FeatureBundle build_features(const SpeedSeries& series, const Calendar& cal, std::vector<WorkZoneEvent> events,
                             RoadNetwork network, const FeatureConfig& config, std::size_t history,
                             std::size_t horizon);

/// One training/evaluation unit: inputs over [anchor - history, anchor),
/// targets over [anchor, anchor + horizon).
struct ForecastSample {
    std::size_t anchor = 0;
    std::size_t history = 0;
    std::size_t horizon = 0;
};

struct SampleSplits {
    std::vector<ForecastSample> train;
    std::vector<ForecastSample> val;
    std::vector<ForecastSample> test;
};

/// Anchors split chronologically; samples whose targets are all missing are dropped.
SampleSplits windowize(const FeatureBundle& bundle, std::size_t history, std::size_t horizon, const SplitRatios& split);

/// Normalised model inputs and targets of one sample.
struct SampleWindow {
    Eigen::MatrixXd speed;         // N x H, normalised
    Eigen::MatrixXd construction;  // N x H
    std::vector<std::size_t> slots;  // H
    Eigen::MatrixXd target;        // N x P, normalised
    Eigen::MatrixXd target_mask;   // N x P
};

SampleWindow materialize(const FeatureBundle& bundle, const ForecastSample& sample);

/// Binary cache of a bundle (written by `rwz ingest`).
void save_feature_cache(const std::string& path, const FeatureBundle& bundle);
FeatureBundle load_feature_cache(const std::string& path);

}  // namespace rwz
