#include "rwz/config.hpp"

#include <filesystem>
#include <fstream>
#include <initializer_list>

#include "rwz/checkpoint.hpp"
#include "rwz/errors.hpp"
#include "rwz/hypergraph.hpp"

namespace rwz {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void only_keys(const json& j, const std::string& section, std::initializer_list<const char*> keys) {
    if (!j.is_object()) throw ConfigError("section '" + section + "' must be an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : keys) ok = ok || key == k;
        if (!ok) throw ConfigError("unknown key '" + key + "' in section '" + section + "'");
    }
}

template <typename T>
T get(const json& j, const std::string& section, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("key '" + section + "." + key + "' has the wrong type");
    }
}

std::size_t get_size(const json& j, const std::string& section, const char* key, std::size_t fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ConfigError("key '" + section + "." + key + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

std::string resolve(const std::string& base, const std::string& p) {
    if (p.empty() || fs::path(p).is_absolute()) return p;
    return (fs::path(base) / p).lexically_normal().string();
}

}  // namespace

json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"epsilon", c.epsilon},
            {"grad_clip", c.grad_clip},
            {"seed", c.seed},
            {"patience", c.patience},
            {"loss", c.loss == LossKind::Mae ? "mae" : "mse"},
            {"frozen", c.frozen},
            {"target_train_loss", c.target_train_loss}};
}

TrainConfig train_config_from_json(const json& j) {
    const std::string sec = "training";
    only_keys(j, sec,
              {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "epsilon", "grad_clip", "seed", "patience",
               "loss", "frozen", "target_train_loss"});
    TrainConfig c;
    c.epochs = get_size(j, sec, "epochs", c.epochs);
    c.batch_size = get_size(j, sec, "batch_size", c.batch_size);
    c.learning_rate = get<double>(j, sec, "learning_rate", c.learning_rate);
    c.beta1 = get<double>(j, sec, "beta1", c.beta1);
    c.beta2 = get<double>(j, sec, "beta2", c.beta2);
    c.epsilon = get<double>(j, sec, "epsilon", c.epsilon);
    c.grad_clip = get<double>(j, sec, "grad_clip", c.grad_clip);
    c.seed = get_size(j, sec, "seed", c.seed);
    c.patience = get_size(j, sec, "patience", c.patience);
    c.target_train_loss = get<double>(j, sec, "target_train_loss", c.target_train_loss);
    const auto loss = get<std::string>(j, sec, "loss", "mae");
    if (loss == "mae") {
        c.loss = LossKind::Mae;
    } else if (loss == "mse") {
        c.loss = LossKind::Mse;
    } else {
        throw ConfigError("training.loss must be \"mae\" or \"mse\"");
    }
    c.frozen = get<std::set<std::string>>(j, sec, "frozen", {});
    try {
        c.validate();
    } catch (const ParameterError& e) {
        throw ConfigError(std::string("training: ") + e.what());
    }
    return c;
}

AppConfig config_from_json(const json& j, const std::string& base_dir) {
    only_keys(j, "config", {"data", "features", "model", "training", "evaluation", "output_dir"});
    AppConfig c;
    if (j.contains("data")) {
        const json& d = j.at("data");
        only_keys(d, "data", {"speeds", "workzones", "distances", "segments", "cache"});
        c.data.speeds = resolve(base_dir, get<std::string>(d, "data", "speeds", ""));
        c.data.workzones = resolve(base_dir, get<std::string>(d, "data", "workzones", ""));
        c.data.distances = resolve(base_dir, get<std::string>(d, "data", "distances", ""));
        c.data.segments = resolve(base_dir, get<std::string>(d, "data", "segments", ""));
        c.data.cache = resolve(base_dir, get<std::string>(d, "data", "cache", ""));
    }
    if (j.contains("features")) {
        const json& f = j.at("features");
        only_keys(f, "features", {"delta", "sigma", "split"});
        c.features.delta = get<double>(f, "features", "delta", c.features.delta);
        c.features.sigma = get<double>(f, "features", "sigma", c.features.sigma);
        if (!(c.features.sigma > 0.0)) throw ConfigError("features.sigma must be positive");
        if (f.contains("split")) {
            const json& s = f.at("split");
            only_keys(s, "features.split", {"train", "val", "test"});
            c.features.split.train = get<double>(s, "features.split", "train", c.features.split.train);
            c.features.split.val = get<double>(s, "features.split", "val", c.features.split.val);
            c.features.split.test = get<double>(s, "features.split", "test", c.features.split.test);
        }
    }
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("training")) c.training = train_config_from_json(j.at("training"));
    if (j.contains("evaluation")) {
        const json& e = j.at("evaluation");
        only_keys(e, "evaluation", {"radius"});
        c.eval_radius = get<double>(e, "evaluation", "radius", c.eval_radius);
        if (!(c.eval_radius >= 0.0)) throw ConfigError("evaluation.radius must be non-negative");
    }
    c.output_dir = resolve(base_dir, get<std::string>(j, "config", "output_dir", c.output_dir));
    return c;
}

AppConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    return config_from_json(j, fs::path(path).parent_path().string().empty() ? "." : fs::path(path).parent_path().string());
}

json to_json(const AppConfig& c) {
    return {{"data",
             {{"speeds", c.data.speeds},
              {"workzones", c.data.workzones},
              {"distances", c.data.distances},
              {"segments", c.data.segments},
              {"cache", c.data.cache}}},
            {"features",
             {{"delta", c.features.delta},
              {"sigma", c.features.sigma},
              {"split", {{"train", c.features.split.train}, {"val", c.features.split.val}, {"test", c.features.split.test}}}}},
            {"model", to_json(c.model)},
            {"training", to_json(c.training)},
            {"evaluation", {{"radius", c.eval_radius}}},
            {"output_dir", c.output_dir}};
}

FeatureBundle load_bundle(const AppConfig& c) {
    if (!c.data.cache.empty() && fs::exists(c.data.cache)) return load_feature_cache(c.data.cache);
    if (c.data.speeds.empty()) throw ConfigError("data.speeds is required");
    RoadNetwork network;
    if (!c.data.distances.empty()) {
        network = load_distance_csv(c.data.distances);
    } else if (!c.data.segments.empty()) {
        network = load_segments_csv(c.data.segments);
    } else {
        throw ConfigError("one of data.distances or data.segments is required");
    }
    SpeedTable table = load_speed_csv(c.data.speeds, &network);
    std::vector<WorkZoneEvent> events;
    if (!c.data.workzones.empty()) events = load_workzones_csv(c.data.workzones, network);
    return build_features(table.series, table.calendar, std::move(events), std::move(network), c.features,
                          c.model.history, c.model.horizon);
}

ModelConfig fit_model_to(const ModelConfig& model, const FeatureBundle& bundle) {
    ModelConfig m = model;
    m.segments = bundle.segments();
    m.slots = bundle.calendar.slots_per_week();
    return m;
}

}  // namespace rwz
