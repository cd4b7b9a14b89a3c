#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "corridor_fixture.hpp"
#include "rwz/ablation.hpp"
#include "rwz/errors.hpp"
#include "rwz/evaluation.hpp"
#include "rwz/training.hpp"

namespace rwz {
namespace {

// Second implementation: running Welford-style means, percent error per cell.
struct StreamingMetrics {
    std::size_t n = 0;
    std::size_t n_pct = 0;
    double mean_abs = 0.0;
    double mean_sq = 0.0;
    double mean_pct = 0.0;

    void add(double pred, double truth) {
        const double e = pred - truth;
        ++n;
        mean_abs += (std::fabs(e) - mean_abs) / static_cast<double>(n);
        mean_sq += (e * e - mean_sq) / static_cast<double>(n);
        if (truth >= 1.0) {
            ++n_pct;
            mean_pct += (100.0 * std::fabs(e) / truth - mean_pct) / static_cast<double>(n_pct);
        }
    }
};

TEST(Metrics, HandExample) {
    const std::vector<double> pred{1, 2};
    const std::vector<double> truth{1, 4};
    const std::vector<double> mask{1, 1};
    const MetricReport r = compute_metrics(pred, truth, mask);
    EXPECT_EQ(r.mae, 1.0);
    EXPECT_EQ(r.rmse, std::sqrt(2.0));
    EXPECT_EQ(r.mape, 25.0);
    EXPECT_EQ(r.count, 2u);
}

TEST(Metrics, PerfectPredictionIsAllZero) {
    const std::vector<double> v{30, 40, 50};
    const std::vector<double> mask{1, 1, 1};
    const MetricReport r = compute_metrics(v, v, mask);
    EXPECT_EQ(r.mae, 0.0);
    EXPECT_EQ(r.rmse, 0.0);
    EXPECT_EQ(r.mape, 0.0);
}

TEST(Metrics, EmptyMaskGivesTheEmptyMarker) {
    const std::vector<double> v{30, 40};
    const std::vector<double> mask{0, 0};
    const MetricReport r = compute_metrics(v, v, mask);
    EXPECT_TRUE(r.empty());
    EXPECT_TRUE(std::isnan(r.mae));
    EXPECT_TRUE(to_json(r)["mae"].is_null());
}

TEST(Metrics, MapeSkipsTruthBelowOneMph) {
    const std::vector<double> pred{1.5, 30};
    const std::vector<double> truth{0.5, 20};
    const std::vector<double> mask{1, 1};
    const MetricReport r = compute_metrics(pred, truth, mask);
    EXPECT_EQ(r.mape_count, 1u);
    EXPECT_DOUBLE_EQ(r.mape, 50.0);
    EXPECT_DOUBLE_EQ(r.mae, 5.5);
}

TEST(Metrics, AgreesWithStreamingImplementation) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> speed(0.0, 80.0);
    std::normal_distribution<double> err(0.0, 6.0);
    std::bernoulli_distribution keep(0.8);
    std::vector<double> pred;
    std::vector<double> truth;
    std::vector<double> mask;
    StreamingMetrics s;
    for (int i = 0; i < 10000; ++i) {
        truth.push_back(speed(rng));
        pred.push_back(truth.back() + err(rng));
        mask.push_back(keep(rng) ? 1.0 : 0.0);
        if (mask.back() != 0.0) s.add(pred.back(), truth.back());
    }
    const MetricReport r = compute_metrics(pred, truth, mask);
    EXPECT_EQ(r.count, s.n);
    EXPECT_NEAR(r.mae, s.mean_abs, 1e-10);
    EXPECT_NEAR(r.rmse, std::sqrt(s.mean_sq), 1e-10);
    EXPECT_NEAR(r.mape, s.mean_pct, 1e-10);
}

TEST(Metrics, InvariantUnderJointPermutation) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(5.0, 70.0);
    std::vector<double> pred(200);
    std::vector<double> truth(200);
    std::vector<double> mask(200);
    for (std::size_t i = 0; i < 200; ++i) {
        pred[i] = u(rng);
        truth[i] = u(rng);
        mask[i] = i % 4 == 0 ? 0.0 : 1.0;
    }
    const MetricReport a = compute_metrics(pred, truth, mask);
    std::vector<std::size_t> perm(200);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> p2;
    std::vector<double> t2;
    std::vector<double> m2;
    for (std::size_t k : perm) {
        p2.push_back(pred[k]);
        t2.push_back(truth[k]);
        m2.push_back(mask[k]);
    }
    const MetricReport b = compute_metrics(p2, t2, m2);
    EXPECT_NEAR(a.mae, b.mae, 1e-12);
    EXPECT_NEAR(a.rmse, b.rmse, 1e-12);
    EXPECT_NEAR(a.mape, b.mape, 1e-12);
    EXPECT_GE(a.rmse, a.mae);
}

TEST(Metrics, RmseNeverBelowMae) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 80.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + trial % 17;
        std::vector<double> p(n);
        std::vector<double> t(n);
        std::vector<double> m(n, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = u(rng);
            t[i] = trial % 5 == 0 ? p[i] + 3.0 : u(rng);  // equal residuals every fifth trial
        }
        const MetricReport r = compute_metrics(p, t, m);
        EXPECT_GE(r.rmse, r.mae * (1.0 - 1e-12));
    }
}

TEST(Metrics, LengthMismatchIsAShapeError) {
    const std::vector<double> a{1, 2};
    const std::vector<double> b{1};
    EXPECT_THROW(compute_metrics(a, b, a), ShapeError);
}

TEST(Disruption, PerfectPredictionScoresOne) {
    const std::vector<double> truth{40, 60, 30};
    const std::vector<double> hist{60, 60, 60};
    const std::vector<double> sel{1, 1, 1};
    EXPECT_EQ(disruption_accuracy(truth, truth, hist, sel).value(), 1.0);
}

TEST(Disruption, HistoryOnlyPredictorScoresZero) {
    const std::vector<double> truth{40, 60, 30, 52};
    const std::vector<double> hist{60, 60, 60, 60};
    const std::vector<double> sel{1, 1, 1, 1};
    EXPECT_EQ(disruption_accuracy(hist, truth, hist, sel).value(), 0.0);
}

TEST(Disruption, HandBuiltSixCells) {
    // Selected (|truth - hist| > 5 and in a work zone): cells 0, 1, 2, 4.
    // Within +-5 of truth: cells 0 and 4 -> 2 / 4.
    const std::vector<double> pred{41, 20, 50, 60, 33, 10};
    const std::vector<double> truth{40, 30, 40, 59, 30, 40};
    const std::vector<double> hist{60, 60, 60, 60, 50, 60};
    const std::vector<double> sel{1, 1, 1, 1, 1, 0};
    EXPECT_DOUBLE_EQ(disruption_accuracy(pred, truth, hist, sel).value(), 0.5);
}

TEST(Disruption, EmptySelectionIsNullopt) {
    const std::vector<double> v{60, 60};
    const std::vector<double> sel{1, 1};
    EXPECT_FALSE(disruption_accuracy(v, v, v, sel).has_value());
}

TEST(Disruption, AgreesWithBruteForceAtEveryThreshold) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(10.0, 70.0);
    std::bernoulli_distribution in_zone(0.6);
    std::vector<double> p(500);
    std::vector<double> t(500);
    std::vector<double> h(500);
    std::vector<double> s(500);
    for (std::size_t i = 0; i < 500; ++i) {
        p[i] = u(rng);
        t[i] = u(rng);
        h[i] = u(rng);
        s[i] = in_zone(rng) ? 1.0 : 0.0;
    }
    for (double thr = 0.5; thr <= 20.0; thr += 0.5) {
        std::size_t hit = 0;
        std::size_t sel = 0;
        for (std::size_t i = 0; i < 500; ++i) {
            if (s[i] == 0.0 || !(std::fabs(t[i] - h[i]) > thr)) continue;
            ++sel;
            hit += std::fabs(p[i] - t[i]) <= thr ? 1 : 0;
        }
        const auto a = disruption_accuracy(p, t, h, s, thr);
        ASSERT_TRUE(a.has_value());
        EXPECT_EQ(*a, static_cast<double>(hit) / static_cast<double>(sel)) << thr;
    }
}

class ConditionTest : public ::testing::Test {
protected:
    void SetUp() override {
        SyntheticConfig sc;
        sc.segments = 5;
        sc.days = 3;
        sc.step_minutes = 60;
        sc.workzones = 12;
        sc.workzone_min_steps = 3;
        sc.workzone_max_steps = 9;
        sc.seed = 21;
        bundle = test::corridor_bundle(sc, 4, 3);
        splits = windowize(bundle, 4, 3, bundle.config.split);
    }
    FeatureBundle bundle;
    SampleSplits splits;
};

TEST_F(ConditionTest, NoEventsMeansEverythingNormal) {
    FeatureBundle b = bundle;
    b.events.clear();
    const auto wz = segment_conditions(b, splits.test, Condition::WorkZone);
    for (const auto& m : wz) EXPECT_EQ(m.sum(), 0.0);
}

TEST_F(ConditionTest, WholeSpanEventMarksEverySegmentCell) {
    FeatureBundle b = bundle;
    b.events = {{"S3", b.calendar.start, b.calendar.time_at(b.steps())}};
    const auto wz = segment_conditions(b, splits.test, Condition::WorkZone);
    for (const auto& m : wz) {
        EXPECT_EQ(m.row(2).sum(), static_cast<double>(m.cols()));
        EXPECT_EQ(m.sum(), static_cast<double>(m.cols()));
    }
}

TEST_F(ConditionTest, PartitionMatchesBruteForceEnumeration) {
    const auto wz = segment_conditions(bundle, splits.test, Condition::WorkZone);
    const auto normal = segment_conditions(bundle, splits.test, Condition::Normal);
    std::size_t expected_wz = 0;
    std::size_t got_wz = 0;
    for (std::size_t s = 0; s < splits.test.size(); ++s) {
        for (std::size_t i = 0; i < bundle.segments(); ++i) {
            for (std::size_t p = 0; p < 3; ++p) {
                const Timestamp t = bundle.calendar.time_at(splits.test[s].anchor + p);
                bool active = false;
                for (const auto& e : bundle.events) {
                    active = active || (e.segment_id == bundle.network.segment_ids[i] && e.active_at(t));
                }
                expected_wz += active ? 1 : 0;
                const double w = wz[s](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p));
                const double n = normal[s](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p));
                EXPECT_EQ(w + n, 1.0);
                EXPECT_EQ(w, active ? 1.0 : 0.0);
                got_wz += static_cast<std::size_t>(w);
            }
        }
    }
    EXPECT_EQ(got_wz, expected_wz);
}

TEST_F(ConditionTest, RadiusWidensTheWorkZoneSet) {
    const Eigen::MatrixXd same = workzone_map(bundle, 0.0);
    const Eigen::MatrixXd near = workzone_map(bundle, 0.5);
    EXPECT_TRUE(((near - same).array() >= 0.0).all());
    EXPECT_GT(near.sum(), same.sum());
}

TEST_F(ConditionTest, NormalAndWorkZoneMetricsComposeToAll) {
    const ModelConfig m = test::tiny_model(bundle, 4, 3);
    const ModelParams p = init_params(m, 3);
    const Forecasts f = forecast_samples(p, model_operator(bundle.network, m), bundle, splits.test, 7);
    const auto all = segment_conditions(bundle, splits.test, Condition::All);
    const auto wz = segment_conditions(bundle, splits.test, Condition::WorkZone);
    const auto nm = segment_conditions(bundle, splits.test, Condition::Normal);
    for (std::size_t h : {0u, 1u, 3u}) {
        const MetricReport ra = evaluate_forecasts(f, all, h, Condition::All);
        const MetricReport rw = evaluate_forecasts(f, wz, h, Condition::WorkZone);
        const MetricReport rn = evaluate_forecasts(f, nm, h, Condition::Normal);
        ASSERT_FALSE(rw.empty());
        EXPECT_EQ(ra.count, rw.count + rn.count);
        const double wsum = rw.mae * rw.count + rn.mae * rn.count;
        EXPECT_NEAR(ra.mae * ra.count, wsum, 1e-9 * wsum);
        const double qsum = rw.rmse * rw.rmse * rw.count + rn.rmse * rn.rmse * rn.count;
        EXPECT_NEAR(ra.rmse * ra.rmse * ra.count, qsum, 1e-9 * qsum);
    }
    EXPECT_THROW(evaluate_forecasts(f, all, 4, Condition::All), ParameterError);
}

TEST_F(ConditionTest, BatchSizeDoesNotChangeForecastsBeyondRounding) {
    const ModelConfig m = test::tiny_model(bundle, 4, 3);
    const ModelParams p = init_params(m, 3);
    const Eigen::MatrixXd gop = model_operator(bundle.network, m);
    const Forecasts a = forecast_samples(p, gop, bundle, splits.test, 1);
    const Forecasts b = forecast_samples(p, gop, bundle, splits.test, 64);
    ASSERT_EQ(a.pred.size(), b.pred.size());
    for (std::size_t s = 0; s < a.pred.size(); ++s) EXPECT_LT((a.pred[s] - b.pred[s]).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Conditions, NamesRoundTrip) {
    for (Condition c : {Condition::All, Condition::Normal, Condition::WorkZone}) {
        EXPECT_EQ(parse_condition(condition_name(c)), c);
    }
    EXPECT_THROW(parse_condition("rush"), ParameterError);
}

TEST(AblationGridTest, ParsesNeighboursAndWaves) {
    const AblationGrid g = ablation_grid_from_json(
        {{"neighbors", {1, "all"}}, {"waves", {"fused", "linear"}}, {"horizon", 3}, {"condition", "workzone"}});
    EXPECT_EQ(g.neighbors, (std::vector<int>{1, kAllNeighbors}));
    EXPECT_EQ(g.waves.size(), 2u);
    EXPECT_EQ(g.horizon, 3u);
    EXPECT_EQ(g.condition, Condition::WorkZone);
    EXPECT_THROW(ablation_grid_from_json({{"neighbours", {1}}}), ConfigError);
    EXPECT_THROW(ablation_grid_from_json({{"waves", {"cubic"}}}), ConfigError);
}

class AblationTest : public ::testing::Test {
protected:
    void SetUp() override {
        SyntheticConfig sc;
        sc.segments = 12;
        sc.days = 3;
        sc.step_minutes = 60;
        sc.workzones = 6;
        sc.seed = 4;
        sc.workzone_min_steps = 3;
        sc.workzone_max_steps = 8;
        bundle = test::corridor_bundle(sc, 4, 6);
        model = test::tiny_model(bundle, 4, 6);
        model.k_neighbors = 5;
        cfg.epochs = 1;
    }
    FeatureBundle bundle;
    ModelConfig model;
    TrainConfig cfg;
};

TEST_F(AblationTest, EmitsBothTableShapes) {
    const AblationTable t = run_ablation(bundle, model, cfg, AblationGrid{});
    ASSERT_EQ(t.neighbors.size(), 4u);
    ASSERT_EQ(t.speed_wave.size(), 4u);
    for (const auto& c : t.neighbors) {
        EXPECT_TRUE(c.ok) << c.label << ": " << c.error;
        EXPECT_FALSE(c.report.empty());
        EXPECT_EQ(c.report.horizon, 6u);
    }
    const auto j = to_json(t);
    EXPECT_EQ(j["neighbors"][3]["k_neighbors"], "all");
    for (const auto& row : j["neighbors"]) {
        for (const char* k : {"mae", "rmse", "mape"}) EXPECT_TRUE(row[k].is_number()) << k;
    }
    bool has_fused = false;
    for (const auto& c : t.speed_wave) {
        EXPECT_TRUE(c.ok) << c.label << ": " << c.error;
        has_fused = has_fused || c.model.wave == SpeedWave::Fused;
    }
    EXPECT_TRUE(has_fused);
}

TEST_F(AblationTest, SingleCellEqualsPlainTrainAndEvaluate) {
    AblationGrid g;
    g.neighbors = {5};
    g.waves = {SpeedWave::Fused};
    const AblationTable t = run_ablation(bundle, model, cfg, g);
    const SampleSplits s = windowize(bundle, 4, 6, bundle.config.split);
    const TrainResult r = train(bundle, s, model, cfg);
    const Forecasts f = forecast_samples(r.params, model_operator(bundle.network, model), bundle, s.test);
    const MetricReport plain = evaluate_forecasts(f, segment_conditions(bundle, s.test, Condition::All), 6, Condition::All);
    ASSERT_EQ(t.neighbors.size(), 1u);
    EXPECT_EQ(t.neighbors[0].report.mae, plain.mae);
    EXPECT_EQ(t.speed_wave[0].report.rmse, plain.rmse);
}

TEST_F(AblationTest, FailedCellIsRecordedAndTheSweepContinues) {
    AblationGrid g;
    g.neighbors = {40, 2};  // 40 exceeds N - 1
    g.waves = {};
    const AblationTable t = run_ablation(bundle, model, cfg, g);
    ASSERT_EQ(t.neighbors.size(), 2u);
    EXPECT_FALSE(t.neighbors[0].ok);
    EXPECT_FALSE(t.neighbors[0].error.empty());
    EXPECT_TRUE(t.neighbors[1].ok);
    EXPECT_EQ(to_json(t)["neighbors"][0]["status"], "failed");
}

}  // namespace
}  // namespace rwz
