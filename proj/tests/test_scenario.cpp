#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "corridor_fixture.hpp"
#include "rwz/errors.hpp"
#include "rwz/evaluation.hpp"
#include "rwz/scenario.hpp"
#include "rwz/server.hpp"
#include "rwz/training.hpp"

// After Eigen: <resolv.h> defines a _res macro that clashes with Eigen parameter names.
#include <httplib.h>

namespace rwz {
namespace {

using nlohmann::json;

constexpr std::size_t kH = 4;
constexpr std::size_t kP = 3;

FeatureBundle make_bundle() {
    SyntheticConfig sc;
    sc.segments = 5;
    sc.days = 4;
    sc.step_minutes = 60;
    sc.workzones = 3;
    sc.workzone_min_steps = 4;
    sc.workzone_max_steps = 10;
    sc.missing_rate = 0.1;
    sc.seed = 9;
    return test::corridor_bundle(sc, kH, kP);
}

Checkpoint make_checkpoint(const FeatureBundle& b, std::uint64_t seed, double wc) {
    ModelParams p = init_params(test::tiny_model(b, kH, kP), seed);
    for (double& v : p.at("wave.wc").data()) v = wc;  // a nonzero W_c so injected events matter
    return Checkpoint{p, b.scaler, json::object()};
}

std::string ts(const FeatureBundle& b, std::size_t t) { return format_timestamp(b.calendar.time_at(t)); }

class ScenarioTest : public ::testing::Test {
protected:
    void SetUp() override {
        bundle = make_bundle();
        model = make_scenario_model(make_checkpoint(bundle, 2, -0.4), bundle);
        anchor = bundle.steps() / 2;
    }

    ScenarioRequest request(std::vector<WorkZoneEvent> events = {}) const {
        return ScenarioRequest{std::move(events), bundle.calendar.time_at(anchor), 0};
    }

    FeatureBundle bundle;
    std::shared_ptr<const ScenarioModel> model;
    std::size_t anchor = 0;
};

TEST_F(ScenarioTest, EmptyInjectionGivesExactlyZeroDelta) {
    const ScenarioResponse r = predict_scenario(request(), *model, bundle);
    EXPECT_EQ(r.baseline, r.scenario);
    EXPECT_EQ(r.delta.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(r.injected_window_cells, 0u);
    for (const auto& s : r.impacts) {
        EXPECT_EQ(s.mean_delta, 0.0);
        EXPECT_EQ(s.max_slowdown, 0.0);
    }
}

TEST_F(ScenarioTest, BaselineMatchesTheEvaluationPath) {
    const ScenarioResponse r = predict_scenario(request(), *model, bundle);
    const ForecastSample s{anchor, kH, kP};
    const Forecasts f = forecast_samples(model->checkpoint.params, model->g_op, bundle, {s});
    ASSERT_EQ(r.baseline.rows(), f.pred[0].rows());
    EXPECT_LT((r.baseline - f.pred[0]).cwiseAbs().maxCoeff(), 1e-9);
    ASSERT_EQ(r.times.size(), kP);
    EXPECT_EQ(r.times[0], bundle.calendar.time_at(anchor));
}

TEST_F(ScenarioTest, InjectedEventInTheWindowChangesTheForecast) {
    const WorkZoneEvent e{"S3", bundle.calendar.time_at(anchor - kH), bundle.calendar.time_at(anchor + kP)};
    const ScenarioResponse r = predict_scenario(request({e}), *model, bundle);
    EXPECT_EQ(r.injected_window_cells, kH);
    EXPECT_GT(r.delta.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(r.baseline, predict_scenario(request(), *model, bundle).baseline);
}

TEST_F(ScenarioTest, InjectionRaisesTheConstructionMapToOneOnItsSegment) {
    const WorkZoneEvent e{"S2", bundle.calendar.time_at(anchor - kH), bundle.calendar.time_at(anchor)};
    const Eigen::MatrixXd raw = raw_construction_map({e}, bundle.network, bundle.calendar, bundle.config.sigma);
    const auto h0 = static_cast<Eigen::Index>(anchor - kH);
    for (Eigen::Index c = h0; c < h0 + static_cast<Eigen::Index>(kH); ++c) {
        EXPECT_EQ(raw(1, c), 1.0);
        EXPECT_GT(raw(0, c), 0.0);
        EXPECT_LT(raw(0, c), 1.0);
    }
    EXPECT_EQ(raw.col(h0 + static_cast<Eigen::Index>(kH)).sum(), 0.0);
}

TEST_F(ScenarioTest, EventsOutsideTheInputWindowHaveNoEffect) {
    const WorkZoneEvent future{"S3", bundle.calendar.time_at(anchor), bundle.calendar.time_at(anchor + kP)};
    const ScenarioResponse r = predict_scenario(request({future}), *model, bundle);
    EXPECT_EQ(r.injected_window_cells, 0u);
    EXPECT_EQ(r.delta.cwiseAbs().maxCoeff(), 0.0);
}

TEST_F(ScenarioTest, RequestsDoNotMutateState) {
    const WorkZoneEvent e{"S1", bundle.calendar.time_at(anchor - 2), bundle.calendar.time_at(anchor + 1)};
    const Eigen::MatrixXd construction = bundle.construction;
    const std::string id = checkpoint_id(model->checkpoint.params);
    const ScenarioResponse a = predict_scenario(request({e}), *model, bundle);
    const ScenarioResponse b = predict_scenario(request({e}), *model, bundle);
    EXPECT_EQ(a.scenario, b.scenario);
    EXPECT_EQ(bundle.construction, construction);
    EXPECT_EQ(checkpoint_id(model->checkpoint.params), id);
}

TEST_F(ScenarioTest, ShorterHorizonIsAPrefix) {
    ScenarioRequest req = request();
    const ScenarioResponse full = predict_scenario(req, *model, bundle);
    req.horizon = 2;
    const ScenarioResponse part = predict_scenario(req, *model, bundle);
    ASSERT_EQ(part.baseline.cols(), 2);
    EXPECT_EQ(part.baseline, full.baseline.leftCols(2));
    req.horizon = kP + 1;
    EXPECT_THROW(predict_scenario(req, *model, bundle), ParameterError);
}

TEST_F(ScenarioTest, AnchorsOutsideTheDataAreRejected) {
    ScenarioRequest req = request();
    req.anchor = bundle.calendar.time_at(kH - 1);
    EXPECT_THROW(predict_scenario(req, *model, bundle), OutOfRangeError);
    req.anchor = bundle.calendar.time_at(bundle.steps() + 1);
    EXPECT_THROW(predict_scenario(req, *model, bundle), OutOfRangeError);
    req.anchor = Timestamp{bundle.calendar.time_at(anchor).minutes + 7};
    EXPECT_THROW(predict_scenario(req, *model, bundle), FormatError);
    // The first step after the data is a valid anchor: a pure forecast.
    req.anchor = bundle.calendar.time_at(bundle.steps());
    EXPECT_NO_THROW(predict_scenario(req, *model, bundle));
}

TEST_F(ScenarioTest, ClampRecomputesDeltaFromClampedValues) {
    ScenarioResponse r;
    r.segment_ids = {"A", "B"};
    r.baseline = Eigen::MatrixXd{{-3.0, 10.0}, {5.0, 6.0}};
    r.scenario = Eigen::MatrixXd{{-1.0, 4.0}, {-2.0, 6.0}};
    r.delta = r.scenario - r.baseline;
    const ScenarioResponse c = clamp_for_api(r);
    EXPECT_EQ(c.baseline, (Eigen::MatrixXd{{0.0, 10.0}, {5.0, 6.0}}));
    EXPECT_EQ(c.delta, (Eigen::MatrixXd{{0.0, -6.0}, {-5.0, 0.0}}));
    EXPECT_EQ(c.impacts[0].max_slowdown, 6.0);
    EXPECT_EQ(c.impacts[1].mean_delta, -2.5);
}

TEST_F(ScenarioTest, ParseRejectsMalformedRequests) {
    const RoadNetwork& n = bundle.network;
    const std::string a = ts(bundle, anchor);
    EXPECT_NO_THROW(parse_scenario_request({{"anchor", a}}, n));
    EXPECT_THROW(parse_scenario_request(json::array(), n), FormatError);
    EXPECT_THROW(parse_scenario_request({{"anchor", a}, {"extra", 1}}, n), FormatError);
    EXPECT_THROW(parse_scenario_request({{"anchor", 5}}, n), FormatError);
    EXPECT_THROW(parse_scenario_request({{"anchor", a}, {"horizon", 0}}, n), FormatError);
    EXPECT_THROW(parse_scenario_request({{"anchor", a}, {"injected_events", {{{"segment_id", "S1"}}}}}, n),
                 FormatError);
    const json reversed = {{"segment_id", "S1"}, {"start", ts(bundle, 5)}, {"end", ts(bundle, 4)}};
    EXPECT_THROW(parse_scenario_request({{"anchor", a}, {"injected_events", {reversed}}}, n), FormatError);
    const json unknown = {{"segment_id", "Z9"}, {"start", ts(bundle, 4)}, {"end", ts(bundle, 5)}};
    EXPECT_THROW(parse_scenario_request({{"anchor", a}, {"injected_events", {unknown}}}, n), SchemaError);
}

TEST_F(ScenarioTest, ModelMustFitTheData) {
    SyntheticConfig sc;
    sc.segments = 4;
    sc.days = 2;
    sc.step_minutes = 60;
    const FeatureBundle small = test::corridor_bundle(sc, kH, kP);
    EXPECT_THROW(make_scenario_model(make_checkpoint(bundle, 1, 0.0), small), ShapeError);
    sc.segments = 5;
    sc.step_minutes = 30;
    const FeatureBundle finer = test::corridor_bundle(sc, kH, kP);
    EXPECT_THROW(make_scenario_model(make_checkpoint(bundle, 1, 0.0), finer), ShapeError);
}

class ServiceTest : public ScenarioTest {
protected:
    void SetUp() override {
        ScenarioTest::SetUp();
        service = std::make_unique<ScenarioService>(bundle, make_checkpoint(bundle, 2, -0.4));
    }
    std::unique_ptr<ScenarioService> service;
};

TEST_F(ServiceTest, SnapshotListsSegmentsInNetworkOrder) {
    const json a = service->network_snapshot();
    const json b = service->network_snapshot();
    EXPECT_EQ(a, b);
    ASSERT_EQ(a["segments"].size(), bundle.segments());
    for (std::size_t i = 0; i < bundle.segments(); ++i) {
        EXPECT_EQ(a["segments"][i]["id"], bundle.network.segment_ids[i]);
        EXPECT_EQ(a["segments"][i]["recent_speeds"].size(), kH);
        EXPECT_EQ(a["segments"][i]["distances"][i], 0.0);
    }
    EXPECT_EQ(a["at"], ts(bundle, bundle.steps() - 1));
    EXPECT_EQ(a["horizons"], json::array({3}));
}

TEST_F(ServiceTest, SnapshotActiveEventsMatchTheWorkZoneMap) {
    const Eigen::MatrixXd wz = workzone_map(bundle, 0.0);
    std::size_t checked = 0;
    for (std::size_t t = kH; t < bundle.steps(); ++t) {
        const json snap = service->network_snapshot(bundle.calendar.time_at(t));
        std::vector<int> flagged(bundle.segments(), 0);
        for (const auto& e : snap["active_events"]) {
            flagged[bundle.network.index_of(e["segment_id"].get<std::string>())] = 1;
        }
        for (std::size_t i = 0; i < bundle.segments(); ++i) {
            EXPECT_EQ(flagged[i], static_cast<int>(wz(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t))))
                << "segment " << i << " step " << t;
        }
        checked += snap["active_events"].size();
    }
    EXPECT_GT(checked, 0u);
}

TEST_F(ServiceTest, SnapshotReportsMissingSpeedsAsNull) {
    const json snap = service->network_snapshot();
    const std::size_t t = bundle.steps() - 1;
    for (std::size_t i = 0; i < bundle.segments(); ++i) {
        const json& recent = snap["segments"][i]["recent_speeds"];
        for (std::size_t k = 0; k < kH; ++k) {
            const auto c = static_cast<Eigen::Index>(t + 1 - kH + k);
            const bool observed = bundle.mask(static_cast<Eigen::Index>(i), c) != 0.0;
            EXPECT_EQ(recent[k].is_null(), !observed);
        }
    }
}

TEST_F(ServiceTest, HistoryClipsToTheDataAndMarksMissingCells) {
    const Timestamp before{bundle.calendar.start.minutes - 600};
    const json h = service->history("S2", before, bundle.calendar.time_at(10));
    ASSERT_EQ(h["times"].size(), 10u);
    EXPECT_EQ(h["times"][0], ts(bundle, 0));
    std::size_t nulls = 0;
    for (std::size_t t = 0; t < 10; ++t) {
        const bool observed = bundle.mask(1, static_cast<Eigen::Index>(t)) != 0.0;
        EXPECT_EQ(h["speed"][t].is_null(), !observed);
        EXPECT_DOUBLE_EQ(h["average"][t].get<double>(), bundle.history(1, static_cast<Eigen::Index>(t)));
        nulls += observed ? 0 : 1;
    }
    const json all = service->history("S2", before, bundle.calendar.time_at(bundle.steps() + 50));
    EXPECT_EQ(all["times"].size(), bundle.steps());
    EXPECT_THROW(service->history("nope", before, before), SchemaError);
    (void)nulls;
}

TEST_F(ServiceTest, ReloadSwapsTheCheckpoint) {
    const std::string before = service->health()["checkpoint_id"];
    service->reload(make_checkpoint(bundle, 3, -0.4));
    EXPECT_NE(service->health()["checkpoint_id"].get<std::string>(), before);
    EXPECT_THROW(service->reload(test::TempPath("rwz_missing_ckpt").path), DataError);
}

TEST_F(ServiceTest, ConcurrentReloadServesOneWholeModelPerRequest) {
    const Checkpoint a = make_checkpoint(bundle, 2, -0.4);
    const Checkpoint b = make_checkpoint(bundle, 5, -0.4);
    const ScenarioRequest req = request();
    const Eigen::MatrixXd expect_a = clamp_for_api(predict_scenario(req, *make_scenario_model(a, bundle), bundle)).baseline;
    const Eigen::MatrixXd expect_b = clamp_for_api(predict_scenario(req, *make_scenario_model(b, bundle), bundle)).baseline;
    ASSERT_NE(expect_a, expect_b);

    std::atomic<bool> done{false};
    std::thread swapper([&] {
        for (int k = 0; k < 40; ++k) service->reload(k % 2 == 0 ? b : a);
        done = true;
    });
    std::size_t seen = 0;
    while (!done || seen < 20) {
        const Eigen::MatrixXd got = service->scenario(req).baseline;
        EXPECT_TRUE(got == expect_a || got == expect_b);
        ++seen;
    }
    swapper.join();
}

class HttpTest : public ServiceTest {
protected:
    void SetUp() override {
        ServiceTest::SetUp();
        server = std::make_unique<HttpServer>(*service);
        port = server->bind_any("127.0.0.1");
        ASSERT_GT(port, 0);
        thread = std::thread([this] { server->serve(); });
        server->wait_until_ready();
        client = std::make_unique<httplib::Client>("127.0.0.1", port);
    }
    void TearDown() override {
        server->stop();
        if (thread.joinable()) thread.join();
    }

    httplib::Result post(const json& body) { return client->Post("/scenario", body.dump(), "application/json"); }

    std::unique_ptr<HttpServer> server;
    std::unique_ptr<httplib::Client> client;
    std::thread thread;
    int port = -1;
};

TEST_F(HttpTest, HealthCarriesTheApiVersion) {
    auto res = client->Get("/health");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(res->get_header_value("X-API-Version"), kApiVersion);
    const json j = json::parse(res->body);
    EXPECT_EQ(j["status"], "ok");
    EXPECT_EQ(j["segments"], bundle.segments());
}

TEST_F(HttpTest, EmptyScenarioOverHttpHasZeroDelta) {
    auto res = post({{"anchor", ts(bundle, anchor)}, {"injected_events", json::array()}});
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200) << res->body;
    const json j = json::parse(res->body);
    for (const auto& row : j["delta"]) {
        for (const auto& v : row) EXPECT_EQ(v.get<double>(), 0.0);
    }
    EXPECT_EQ(j["baseline"], j["scenario"]);
    EXPECT_EQ(j["checkpoint_id"], service->health()["checkpoint_id"]);
    EXPECT_EQ(j["segments"].size(), bundle.segments());
}

TEST_F(HttpTest, InjectedScenarioOverHttpMatchesTheLibrary) {
    const WorkZoneEvent e{"S3", bundle.calendar.time_at(anchor - kH), bundle.calendar.time_at(anchor + 1)};
    auto res = post({{"anchor", ts(bundle, anchor)},
                     {"injected_events",
                      {{{"segment_id", "S3"}, {"start", format_timestamp(e.start)}, {"end", format_timestamp(e.end)}}}}});
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200) << res->body;
    const json j = json::parse(res->body);
    const ScenarioResponse direct = service->scenario(request({e}));
    EXPECT_EQ(j["delta"], to_json(direct)["delta"]);
    EXPECT_EQ(j["injected_window_cells"], kH);
}

TEST_F(HttpTest, ErrorStatuses) {
    auto bad_json = client->Post("/scenario", "{not json", "application/json");
    ASSERT_TRUE(bad_json);
    EXPECT_EQ(bad_json->status, 422);
    EXPECT_EQ(bad_json->get_header_value("X-API-Version"), kApiVersion);
    EXPECT_EQ(json::parse(bad_json->body)["code"], "malformed");

    const json unknown = {{"segment_id", "Z9"}, {"start", ts(bundle, 4)}, {"end", ts(bundle, 5)}};
    auto bad_seg = post({{"anchor", ts(bundle, anchor)}, {"injected_events", {unknown}}});
    ASSERT_TRUE(bad_seg);
    EXPECT_EQ(bad_seg->status, 422);

    auto too_early = post({{"anchor", ts(bundle, 1)}});
    ASSERT_TRUE(too_early);
    EXPECT_EQ(too_early->status, 404);

    auto missing = client->Get("/history?segment=S1");
    ASSERT_TRUE(missing);
    EXPECT_EQ(missing->status, 400);

    auto no_seg = client->Get(("/history?segment=Z9&from=" + ts(bundle, 0) + "&to=" + ts(bundle, 3)).c_str());
    ASSERT_TRUE(no_seg);
    EXPECT_EQ(no_seg->status, 404);

    auto bad_at = client->Get("/network?at=yesterday");
    ASSERT_TRUE(bad_at);
    EXPECT_EQ(bad_at->status, 400);

    auto route = client->Get("/nowhere");
    ASSERT_TRUE(route);
    EXPECT_EQ(route->status, 404);
    EXPECT_EQ(route->get_header_value("X-API-Version"), kApiVersion);
    EXPECT_TRUE(json::accept(route->body));
}

TEST_F(HttpTest, NetworkAndHistoryRoutes) {
    auto net = client->Get("/network");
    ASSERT_TRUE(net);
    ASSERT_EQ(net->status, 200);
    EXPECT_EQ(json::parse(net->body), service->network_snapshot());

    auto hist = client->Get(("/history?segment=S1&from=" + ts(bundle, 0) + "&to=" + ts(bundle, 6)).c_str());
    ASSERT_TRUE(hist);
    ASSERT_EQ(hist->status, 200);
    EXPECT_EQ(json::parse(hist->body)["times"].size(), 6u);
}

}  // namespace
}  // namespace rwz
