#include "rwz/ablation.hpp"

#include <map>

#include "rwz/checkpoint.hpp"
#include "rwz/errors.hpp"
#include "rwz/log.hpp"

namespace rwz {

using nlohmann::json;

AblationGrid ablation_grid_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("ablation grid must be an object");
    AblationGrid g;
    for (const auto& [key, v] : j.items()) {
        if (key == "neighbors") {
            if (!v.is_array()) throw ConfigError("grid.neighbors must be an array");
            g.neighbors.clear();
            for (const auto& k : v) {
                if (k.is_string() && k.get<std::string>() == "all") {
                    g.neighbors.push_back(kAllNeighbors);
                } else if (k.is_number_integer() && k.get<long long>() >= 1) {
                    g.neighbors.push_back(k.get<int>());
                } else {
                    throw ConfigError("grid.neighbors entries must be positive integers or \"all\"");
                }
            }
        } else if (key == "waves") {
            if (!v.is_array()) throw ConfigError("grid.waves must be an array");
            g.waves.clear();
            for (const auto& w : v) {
                if (!w.is_string()) throw ConfigError("grid.waves entries must be names");
                try {
                    g.waves.push_back(parse_speed_wave(w.get<std::string>()));
                } catch (const ParameterError& e) {
                    throw ConfigError(e.what());
                }
            }
        } else if (key == "horizon") {
            if (!v.is_number_integer() || v.get<long long>() < 1) throw ConfigError("grid.horizon must be positive");
            g.horizon = v.get<std::size_t>();
        } else if (key == "condition") {
            try {
                g.condition = parse_condition(v.get<std::string>());
            } catch (const std::exception& e) {
                throw ConfigError(std::string("grid.condition: ") + e.what());
            }
        } else {
            throw ConfigError("unknown grid key '" + key + "'");
        }
    }
    return g;
}

AblationTable run_ablation(const FeatureBundle& bundle, const ModelConfig& base, const TrainConfig& train_config,
                           const AblationGrid& grid, double radius) {
    if (grid.horizon == 0 || grid.horizon > base.horizon) {
        throw ParameterError("ablation horizon " + std::to_string(grid.horizon) + " outside [1, " +
                             std::to_string(base.horizon) + "]");
    }
    const SampleSplits splits = windowize(bundle, base.history, base.horizon, bundle.config.split);
    const std::vector<Eigen::MatrixXd> selection = segment_conditions(bundle, splits.test, grid.condition, radius);
    std::map<std::string, AblationCell> done;  // keyed by the serialised model config

    auto run = [&](ModelConfig model, std::string label) {
        const std::string key = to_json(model).dump();
        auto it = done.find(key);
        if (it != done.end()) {
            AblationCell cell = it->second;
            cell.label = std::move(label);
            return cell;
        }
        AblationCell cell;
        cell.label = std::move(label);
        cell.model = model;
        try {
            log(LogLevel::Info, "ablation: training " + cell.label);
            const TrainResult r = train(bundle, splits, model, train_config);
            const Forecasts f = forecast_samples(r.params, model_operator(bundle.network, model), bundle, splits.test);
            cell.report = evaluate_forecasts(f, selection, grid.horizon, grid.condition);
            cell.best_epoch = r.history.best_epoch;
            cell.ok = true;
        } catch (const Error& e) {
            cell.error = e.what();
            log(LogLevel::Warn, "ablation cell " + cell.label + " failed: " + cell.error);
        }
        done.emplace(key, cell);
        return cell;
    };

    AblationTable table;
    for (int k : grid.neighbors) {
        ModelConfig m = base;
        m.k_neighbors = k;
        table.neighbors.push_back(run(m, k == kAllNeighbors ? "k=all" : "k=" + std::to_string(k)));
    }
    for (SpeedWave w : grid.waves) {
        ModelConfig m = base;
        m.wave = w;
        table.speed_wave.push_back(run(m, speed_wave_formula(w)));
    }
    return table;
}

json to_json(const AblationTable& table) {
    auto row = [](const AblationCell& c) {
        json j = to_json(c.report);
        j["label"] = c.label;
        j["k_neighbors"] = c.model.k_neighbors == kAllNeighbors ? json("all") : json(c.model.k_neighbors);
        j["wave"] = speed_wave_name(c.model.wave);
        j["status"] = c.ok ? "ok" : "failed";
        if (!c.ok) j["error"] = c.error;
        j["best_epoch"] = c.best_epoch;
        return j;
    };
    json out{{"neighbors", json::array()}, {"speed_wave", json::array()}};
    for (const auto& c : table.neighbors) out["neighbors"].push_back(row(c));
    for (const auto& c : table.speed_wave) out["speed_wave"].push_back(row(c));
    return out;
}

}  // namespace rwz
