#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "rwz/ablation.hpp"
#include "rwz/checkpoint.hpp"
#include "rwz/config.hpp"
#include "rwz/errors.hpp"
#include "rwz/evaluation.hpp"
#include "rwz/log.hpp"
#include "rwz/scenario.hpp"
#include "rwz/server.hpp"
#include "rwz/synthetic.hpp"
#include "rwz/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rwz;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Options {
    std::string config;
    std::string out;
    std::string checkpoint;
    long long seed = -1;
    std::size_t horizon = 0;
    std::string condition = "all";
    std::string split = "test";
    std::string anchor;
    std::string events;
    std::string grid;
    std::string host = "127.0.0.1";
    int port = 8080;
    bool verbose = false;
    SyntheticConfig synth;
};

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text << '\n';
        return;
    }
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << text << '\n';
}

AppConfig app_config(const Options& o) {
    if (o.config.empty()) throw ConfigError("--config is required");
    AppConfig c = load_config(o.config);
    if (o.seed >= 0) c.training.seed = static_cast<std::uint64_t>(o.seed);
    return c;
}

std::string checkpoint_path(const Options& o, const AppConfig& c) {
    return o.checkpoint.empty() ? (fs::path(c.output_dir) / "checkpoint.bin").string() : o.checkpoint;
}

void check_horizon(std::size_t h, const ModelConfig& m) {
    if (h > m.horizon) {
        throw ConfigError("--horizon " + std::to_string(h) + " exceeds the model horizon " + std::to_string(m.horizon));
    }
}

int cmd_synth(const Options& o) {
    const std::string dir = o.out.empty() ? "synthetic" : o.out;
    fs::create_directories(dir);
    const SyntheticCorridor s = make_synthetic(o.synth);
    write_speed_csv((fs::path(dir) / "speeds.csv").string(), s.table.series, s.table.calendar);
    write_workzones_csv((fs::path(dir) / "workzones.csv").string(), s.events);
    write_distance_csv((fs::path(dir) / "distances.csv").string(), s.network);
    const json cfg{{"data",
                    {{"speeds", "speeds.csv"},
                     {"workzones", "workzones.csv"},
                     {"distances", "distances.csv"},
                     {"cache", "features.bin"}}},
                   {"output_dir", "out"}};
    write_text((fs::path(dir) / "config.json").string(), cfg.dump(2));
    std::cout << json{{"dir", dir}, {"segments", s.network.size()}, {"steps", s.table.calendar.length},
                      {"workzones", s.events.size()}, {"incidents", s.incidents.size()}}
                     .dump()
              << '\n';
    return kOk;
}

int cmd_ingest(const Options& o) {
    AppConfig c = app_config(o);
    AppConfig fresh = c;
    fresh.data.cache.clear();
    const FeatureBundle b = load_bundle(fresh);
    const std::string cache = !o.out.empty() ? o.out
                              : !c.data.cache.empty() ? c.data.cache
                                                      : (fs::path(c.output_dir) / "features.bin").string();
    if (fs::path(cache).has_parent_path()) fs::create_directories(fs::path(cache).parent_path());
    save_feature_cache(cache, b);
    const SampleSplits s = windowize(b, c.model.history, c.model.horizon, c.features.split);
    std::cout << json{{"cache", cache},
                      {"segments", b.segments()},
                      {"steps", b.steps()},
                      {"events", b.events.size()},
                      {"observed_fraction", b.mask.mean()},
                      {"scaler", {{"vmin", b.scaler.vmin}, {"vmax", b.scaler.vmax}}},
                      {"samples", {{"train", s.train.size()}, {"val", s.val.size()}, {"test", s.test.size()}}}}
                     .dump()
              << '\n';
    return kOk;
}

int cmd_train(const Options& o) {
    AppConfig c = app_config(o);
    if (!o.out.empty()) c.output_dir = o.out;
    const FeatureBundle b = load_bundle(c);
    const ModelConfig model = fit_model_to(c.model, b);
    const SampleSplits s = windowize(b, model.history, model.horizon, b.config.split);
    fs::create_directories(c.output_dir);
    const std::string ckpt_path = (fs::path(c.output_dir) / "checkpoint.bin").string();
    std::ofstream hist((fs::path(c.output_dir) / "history.jsonl").string(), std::ios::trunc);
    if (!hist) throw DataError("cannot write history in " + c.output_dir);
    TrainCallbacks cb;
    cb.on_epoch = [&](const EpochRecord& r, const ModelParams& p, bool improved) {
        hist << to_json(r).dump() << '\n' << std::flush;
        if (improved) {
            save_checkpoint(ckpt_path, Checkpoint{p, b.scaler, {{"epoch", r.epoch}, {"val_mae", r.val.mae}}});
        }
        log(LogLevel::Info, "epoch " + std::to_string(r.epoch) + " loss " + std::to_string(r.train_loss) + " val MAE " +
                                std::to_string(r.val.mae) + (improved ? " *" : ""));
    };
    const TrainResult r = train(b, s, model, c.training, cb);
    std::cout << json{{"checkpoint", ckpt_path},
                      {"epochs", r.history.epochs.size()},
                      {"best_epoch", r.history.best_epoch},
                      {"best_val_mae", r.history.best_val_mae},
                      {"stop_reason", r.history.stop_reason}}
                     .dump()
              << '\n';
    return kOk;
}

int cmd_evaluate(const Options& o) {
    const AppConfig c = app_config(o);
    const FeatureBundle b = load_bundle(c);
    const Checkpoint ckpt = load_checkpoint(checkpoint_path(o, c));
    const ModelConfig& m = ckpt.params.config;
    check_horizon(o.horizon, m);
    const SampleSplits s = windowize(b, m.history, m.horizon, b.config.split);
    const std::vector<ForecastSample>* samples = nullptr;
    if (o.split == "train") samples = &s.train;
    if (o.split == "val") samples = &s.val;
    if (o.split == "test") samples = &s.test;
    if (samples == nullptr) throw ConfigError("--split must be train, val or test");
    const Condition cond = parse_condition(o.condition);
    const auto model = make_scenario_model(ckpt, b);
    const Forecasts f = forecast_samples(ckpt.params, model->g_op, b, *samples);
    const MetricReport r = evaluate_forecasts(f, segment_conditions(b, *samples, cond, c.eval_radius), o.horizon, cond);
    json out = to_json(r);
    out["split"] = o.split;
    json acc = json::array();
    for (const auto& a : disruption_by_horizon(f, segment_conditions(b, *samples, Condition::WorkZone, c.eval_radius))) {
        acc.push_back(a ? json(*a) : json(nullptr));
    }
    out["disruption_accuracy"] = acc;
    write_text(o.out, out.dump(2));
    return kOk;
}

int cmd_ablate(const Options& o) {
    AppConfig c = app_config(o);
    AblationGrid grid;
    if (!o.grid.empty()) {
        std::ifstream in(o.grid);
        if (!in) throw ConfigError("cannot open grid '" + o.grid + "'");
        try {
            grid = ablation_grid_from_json(json::parse(in));
        } catch (const json::parse_error& e) {
            throw ConfigError("grid '" + o.grid + "': " + e.what());
        }
    }
    if (o.horizon != 0) grid.horizon = o.horizon;
    if (o.condition != "all") grid.condition = parse_condition(o.condition);
    const FeatureBundle b = load_bundle(c);
    const AblationTable t = run_ablation(b, fit_model_to(c.model, b), c.training, grid, c.eval_radius);
    json out = to_json(t);
    out["horizon"] = grid.horizon;
    out["condition"] = condition_name(grid.condition);
    write_text(o.out, out.dump(2));
    return kOk;
}

int cmd_forecast(const Options& o) {
    const AppConfig c = app_config(o);
    const FeatureBundle b = load_bundle(c);
    const auto model = make_scenario_model(load_checkpoint(checkpoint_path(o, c)), b);
    check_horizon(o.horizon, model->checkpoint.params.config);
    if (o.anchor.empty()) throw ConfigError("--anchor is required");
    ScenarioRequest req;
    req.anchor = parse_timestamp(o.anchor);
    req.horizon = o.horizon;
    if (!o.events.empty()) req.injected_events = load_workzones_csv(o.events, b.network);
    const ScenarioResponse r = clamp_for_api(predict_scenario(req, *model, b));
    std::ostringstream csv;
    csv.precision(10);
    csv << "segment_id";
    for (const auto& t : r.times) csv << ',' << format_timestamp(t);
    for (std::size_t i = 0; i < r.segment_ids.size(); ++i) {
        csv << '\n' << r.segment_ids[i];
        for (Eigen::Index p = 0; p < r.scenario.cols(); ++p) csv << ',' << r.scenario(static_cast<Eigen::Index>(i), p);
    }
    write_text(o.out, csv.str());
    return kOk;
}

HttpServer* g_server = nullptr;

int cmd_serve(const Options& o) {
    const AppConfig c = app_config(o);
    ScenarioService service(load_bundle(c), load_checkpoint(checkpoint_path(o, c)));
    HttpServer server(service);
    g_server = &server;
    std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
    });
    log(LogLevel::Info, "serving on " + o.host + ":" + std::to_string(o.port));
    if (!server.listen(o.host, o.port)) throw DataError("cannot listen on " + o.host + ":" + std::to_string(o.port));
    g_server = nullptr;
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Work-zone aware traffic speed forecasting"};
    app.require_subcommand(1);
    Options o;
    app.add_flag("-v,--verbose", o.verbose, "Debug logging");

    auto add_config = [&](CLI::App* sub) { sub->add_option("--config", o.config, "JSON config file")->required(); };
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--seed", o.seed, "Override training.seed");
        sub->add_option("--out", o.out, "Output path");
    };
    auto add_horizon = [&](CLI::App* sub) {
        sub->add_option("--horizon", o.horizon, "Horizon step (3, 6 or 12)")->check(CLI::IsMember({3, 6, 12}));
    };
    auto add_condition = [&](CLI::App* sub) {
        sub->add_option("--condition", o.condition, "normal, workzone or all")
            ->check(CLI::IsMember({"normal", "workzone", "all"}));
    };

    auto* synth = app.add_subcommand("synth", "Write a synthetic corridor (CSV files and config)");
    synth->add_option("--out", o.out, "Output directory");
    synth->add_option("--segments", o.synth.segments);
    synth->add_option("--days", o.synth.days);
    synth->add_option("--step", o.synth.step_minutes);
    synth->add_option("--noise", o.synth.noise);
    synth->add_option("--workzones", o.synth.workzones);
    synth->add_option("--incidents", o.synth.incidents);
    synth->add_option("--missing", o.synth.missing_rate);
    synth->add_option("--seed", o.synth.seed);

    auto* ingest = app.add_subcommand("ingest", "Validate inputs and cache the feature maps");
    add_config(ingest);
    add_common(ingest);

    auto* train_cmd = app.add_subcommand("train", "Train; writes checkpoint.bin and history.jsonl");
    add_config(train_cmd);
    add_common(train_cmd);

    auto* eval = app.add_subcommand("evaluate", "Metric report of a checkpoint");
    add_config(eval);
    add_common(eval);
    add_horizon(eval);
    add_condition(eval);
    eval->add_option("--checkpoint", o.checkpoint);
    eval->add_option("--split", o.split)->check(CLI::IsMember({"train", "val", "test"}));

    auto* ablate = app.add_subcommand("ablate", "Neighbour and speed-wave ablation tables");
    add_config(ablate);
    add_common(ablate);
    add_horizon(ablate);
    add_condition(ablate);
    ablate->add_option("--grid", o.grid, "Grid JSON");

    auto* forecast = app.add_subcommand("forecast", "N x P forecast CSV, optionally with injected work zones");
    add_config(forecast);
    add_common(forecast);
    add_horizon(forecast);
    forecast->add_option("--checkpoint", o.checkpoint);
    forecast->add_option("--anchor", o.anchor, "First forecast step (timestamp)")->required();
    forecast->add_option("--events", o.events, "workzones.csv with injected events");

    auto* serve = app.add_subcommand("serve", "Start the scenario HTTP service");
    add_config(serve);
    serve->add_option("--checkpoint", o.checkpoint);
    serve->add_option("--host", o.host);
    serve->add_option("--port", o.port);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }
    if (o.verbose) set_log_level(LogLevel::Debug);

    try {
        if (*synth) return cmd_synth(o);
        if (*ingest) return cmd_ingest(o);
        if (*train_cmd) return cmd_train(o);
        if (*eval) return cmd_evaluate(o);
        if (*ablate) return cmd_ablate(o);
        if (*forecast) return cmd_forecast(o);
        if (*serve) return cmd_serve(o);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const ParameterError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kNumeric;
    } catch (const Error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kFailure;
}
