#include "rwz/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rwz/errors.hpp"

namespace rwz {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

std::string condition_name(Condition c) {
    switch (c) {
        case Condition::All: return "all";
        case Condition::Normal: return "normal";
        case Condition::WorkZone: return "workzone";
    }
    return "?";
}

Condition parse_condition(const std::string& name) {
    if (name == "all") return Condition::All;
    if (name == "normal") return Condition::Normal;
    if (name == "workzone") return Condition::WorkZone;
    throw ParameterError("unknown condition '" + name + "' (expected all, normal or workzone)");
}

nlohmann::json to_json(const MetricReport& r) {
    return {{"mae", number_or_null(r.mae)},
            {"rmse", number_or_null(r.rmse)},
            {"mape", number_or_null(r.mape)},
            {"count", r.count},
            {"mape_count", r.mape_count},
            {"horizon", r.horizon},
            {"condition", condition_name(r.condition)},
            {"empty", r.empty()}};
}

MetricReport compute_metrics(std::span<const double> pred, std::span<const double> truth,
                             std::span<const double> mask) {
    if (pred.size() != truth.size() || pred.size() != mask.size()) {
        throw ShapeError("metric inputs have lengths " + std::to_string(pred.size()) + ", " +
                         std::to_string(truth.size()) + ", " + std::to_string(mask.size()));
    }
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    double pct_sum = 0.0;
    MetricReport r;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mask[i] == 0.0) continue;
        if (!std::isfinite(pred[i]) || !std::isfinite(truth[i])) {
            throw NumericError("non-finite prediction or truth at cell " + std::to_string(i));
        }
        const double e = pred[i] - truth[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
        ++r.count;
        if (truth[i] >= kMapeFloorMph) {
            pct_sum += std::abs(e) / truth[i];
            ++r.mape_count;
        }
    }
    if (r.count == 0) {
        r.mae = r.rmse = r.mape = kNaN;
        return r;
    }
    const auto n = static_cast<double>(r.count);
    r.mae = abs_sum / n;
    r.rmse = std::sqrt(sq_sum / n);
    r.mape = r.mape_count > 0 ? 100.0 * pct_sum / static_cast<double>(r.mape_count) : kNaN;
    // Power-mean inequality; the slack absorbs rounding when every |e| is equal.
    if (r.rmse < r.mae * (1.0 - 1e-12)) {
        throw NumericError("RMSE " + std::to_string(r.rmse) + " below MAE " + std::to_string(r.mae));
    }
    return r;
}

Forecasts forecast_samples(const ModelParams& params, const Eigen::MatrixXd& g_op, const FeatureBundle& bundle,
                           const std::vector<ForecastSample>& samples, std::size_t batch_size) {
    if (batch_size == 0) throw ParameterError("batch size must be positive");
    Forecasts f;
    f.samples = samples;
    const std::size_t n = bundle.segments();
    for (std::size_t first = 0; first < samples.size(); first += batch_size) {
        const std::size_t last = std::min(samples.size(), first + batch_size);
        const std::vector<ForecastSample> chunk(samples.begin() + static_cast<std::ptrdiff_t>(first),
                                                samples.begin() + static_cast<std::ptrdiff_t>(last));
        const Tensor out = predict(params, g_op, make_batch(bundle, chunk));
        for (std::size_t s = 0; s < chunk.size(); ++s) {
            const std::size_t p = chunk[s].horizon;
            Eigen::MatrixXd pred(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t t = 0; t < p; ++t) {
                    pred(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) =
                        bundle.scaler.denormalize(out[(s * n + i) * p + t]);
                }
            }
            const auto t0 = static_cast<Eigen::Index>(chunk[s].anchor);
            const auto len = static_cast<Eigen::Index>(p);
            f.pred.push_back(std::move(pred));
            f.truth.emplace_back(bundle.speed.middleCols(t0, len));
            f.mask.emplace_back(bundle.mask.middleCols(t0, len));
            f.history.emplace_back(bundle.history.middleCols(t0, len));
        }
    }
    return f;
}

Eigen::MatrixXd workzone_map(const FeatureBundle& bundle, double radius) {
    if (radius < 0.0) throw ParameterError("work-zone radius must be non-negative");
    const auto n = static_cast<Eigen::Index>(bundle.segments());
    Eigen::MatrixXd map = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(bundle.steps()));
    for (const auto& e : bundle.events) {
        const auto j = static_cast<Eigen::Index>(bundle.network.index_of(e.segment_id));
        const auto [lo, hi] = active_steps(e, bundle.calendar);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (bundle.network.distance(i, j) > radius) continue;
            for (std::size_t t = lo; t < hi; ++t) map(i, static_cast<Eigen::Index>(t)) = 1.0;
        }
    }
    return map;
}

std::vector<Eigen::MatrixXd> segment_conditions(const FeatureBundle& bundle, const std::vector<ForecastSample>& samples,
                                                Condition condition, double radius) {
    const Eigen::MatrixXd wz = workzone_map(bundle, radius);
    std::vector<Eigen::MatrixXd> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        if (s.anchor + s.horizon > bundle.steps()) {
            throw OutOfRangeError("sample anchored at step " + std::to_string(s.anchor) + " does not fit the data");
        }
        const Eigen::MatrixXd cells =
            wz.middleCols(static_cast<Eigen::Index>(s.anchor), static_cast<Eigen::Index>(s.horizon));
        switch (condition) {
            case Condition::All: out.push_back(Eigen::MatrixXd::Ones(cells.rows(), cells.cols())); break;
            case Condition::WorkZone: out.push_back(cells); break;
            case Condition::Normal: out.push_back((1.0 - cells.array()).matrix()); break;
        }
    }
    return out;
}

MetricReport evaluate_forecasts(const Forecasts& f, const std::vector<Eigen::MatrixXd>& selection, std::size_t horizon,
                                Condition condition) {
    if (selection.size() != f.pred.size()) throw ShapeError("selection does not match the forecasts");
    std::vector<double> pred;
    std::vector<double> truth;
    std::vector<double> mask;
    for (std::size_t s = 0; s < f.pred.size(); ++s) {
        const Eigen::MatrixXd& p = f.pred[s];
        if (horizon > static_cast<std::size_t>(p.cols())) {
            throw ParameterError("horizon " + std::to_string(horizon) + " exceeds the forecast length " +
                                 std::to_string(p.cols()));
        }
        const Eigen::Index c0 = horizon == 0 ? 0 : static_cast<Eigen::Index>(horizon - 1);
        const Eigen::Index c1 = horizon == 0 ? p.cols() : c0 + 1;
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            for (Eigen::Index c = c0; c < c1; ++c) {
                pred.push_back(p(i, c));
                truth.push_back(f.truth[s](i, c));
                mask.push_back(f.mask[s](i, c) * selection[s](i, c));
            }
        }
    }
    MetricReport r = compute_metrics(pred, truth, mask);
    r.horizon = horizon;
    r.condition = condition;
    return r;
}

std::optional<double> disruption_accuracy(std::span<const double> pred, std::span<const double> truth,
                                          std::span<const double> history, std::span<const double> select,
                                          double threshold) {
    if (pred.size() != truth.size() || pred.size() != history.size() || pred.size() != select.size()) {
        throw ShapeError("disruption inputs have different lengths");
    }
    std::size_t selected = 0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (select[i] == 0.0 || !(std::abs(truth[i] - history[i]) > threshold)) continue;
        ++selected;
        if (std::abs(pred[i] - truth[i]) <= threshold) ++hits;
    }
    if (selected == 0) return std::nullopt;
    return static_cast<double>(hits) / static_cast<double>(selected);
}

std::vector<std::optional<double>> disruption_by_horizon(const Forecasts& f,
                                                         const std::vector<Eigen::MatrixXd>& workzone,
                                                         double threshold) {
    if (workzone.size() != f.pred.size()) throw ShapeError("selection does not match the forecasts");
    if (f.pred.empty()) return {};
    const auto horizon = static_cast<std::size_t>(f.pred[0].cols());
    std::vector<std::optional<double>> out;
    for (std::size_t h = 0; h < horizon; ++h) {
        std::vector<double> pred;
        std::vector<double> truth;
        std::vector<double> hist;
        std::vector<double> select;
        const auto c = static_cast<Eigen::Index>(h);
        for (std::size_t s = 0; s < f.pred.size(); ++s) {
            for (Eigen::Index i = 0; i < f.pred[s].rows(); ++i) {
                pred.push_back(f.pred[s](i, c));
                truth.push_back(f.truth[s](i, c));
                hist.push_back(f.history[s](i, c));
                select.push_back(f.mask[s](i, c) * workzone[s](i, c));
            }
        }
        out.push_back(disruption_accuracy(pred, truth, hist, select, threshold));
    }
    return out;
}

}  // namespace rwz
