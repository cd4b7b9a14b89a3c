#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rwz/features.hpp"
#include "rwz/model.hpp"

namespace rwz {

enum class Condition { All, Normal, WorkZone };

std::string condition_name(Condition c);
/// "all", "normal" or "workzone"; throws ParameterError otherwise.
Condition parse_condition(const std::string& name);

inline constexpr double kMapeFloorMph = 1.0;

/// Error metrics over the selected cells, in MPH and percent.
/// A report with `count == 0` is the empty marker: its metrics are NaN and
/// serialise as null.
struct MetricReport {
    double mae = 0.0;
    double rmse = 0.0;
    double mape = 0.0;            // NaN when no selected truth reaches kMapeFloorMph
    std::size_t count = 0;        // cells with mask = 1
    std::size_t mape_count = 0;   // of those, cells with truth >= kMapeFloorMph
    std::size_t horizon = 0;      // step ahead (1-based); 0 = all steps pooled
    Condition condition = Condition::All;

    bool empty() const { return count == 0; }
};

nlohmann::json to_json(const MetricReport& r);

/// Masked MAE, RMSE and MAPE. Throws ShapeError on length mismatch and
/// NumericError on non-finite selected cells or if RMSE < MAE.
MetricReport compute_metrics(std::span<const double> pred, std::span<const double> truth,
                             std::span<const double> mask);

/// Denormalised forecasts for a list of samples. Matrices are N x P.
struct Forecasts {
    std::vector<ForecastSample> samples;
    std::vector<Eigen::MatrixXd> pred;   // MPH, unclamped
    std::vector<Eigen::MatrixXd> truth;  // X_S in MPH at the target steps
    std::vector<Eigen::MatrixXd> mask;   // 1 = observed
    std::vector<Eigen::MatrixXd> history;  // X_AS at the target steps
};

/// Runs the model over `samples` in batches of `batch_size`.
Forecasts forecast_samples(const ModelParams& params, const Eigen::MatrixXd& g_op, const FeatureBundle& bundle,
                           const std::vector<ForecastSample>& samples, std::size_t batch_size = 64);

/// N x T map, 1 where some event on a segment within `radius` miles of the
/// row's segment is active at that step.
Eigen::MatrixXd workzone_map(const FeatureBundle& bundle, double radius = 0.0);

/// Per sample, an N x P 0/1 matrix selecting the target cells of `condition`.
/// Normal and work-zone selections are disjoint and together cover every cell.
std::vector<Eigen::MatrixXd> segment_conditions(const FeatureBundle& bundle, const std::vector<ForecastSample>& samples,
                                                Condition condition, double radius = 0.0);

/// Metrics at one horizon step (1-based; 0 pools every step) over observed
/// cells of the condition.
MetricReport evaluate_forecasts(const Forecasts& f, const std::vector<Eigen::MatrixXd>& selection, std::size_t horizon,
                                Condition condition);

/// Among selected cells with |truth - history| > threshold, the fraction with
/// |pred - truth| <= threshold. nullopt when nothing is selected.
std::optional<double> disruption_accuracy(std::span<const double> pred, std::span<const double> truth,
                                          std::span<const double> history, std::span<const double> select,
                                          double threshold = 5.0);

/// disruption_accuracy per horizon step 1..P over the work-zone cells of `f`.
std::vector<std::optional<double>> disruption_by_horizon(const Forecasts& f,
                                                         const std::vector<Eigen::MatrixXd>& workzone,
                                                         double threshold = 5.0);

}  // namespace rwz
