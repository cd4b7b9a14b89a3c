#include "rwz/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "binio.hpp"
#include "rwz/errors.hpp"

namespace rwz {

namespace {

constexpr char kMagic[8] = {'R', 'W', 'Z', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
T read_key(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("model key '") + key + "' has the wrong type");
    }
}

std::size_t read_size(const nlohmann::json& j, const char* key, std::size_t fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ConfigError(std::string("model key '") + key + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

}  // namespace

nlohmann::json to_json(const ModelConfig& c) {
    return {{"segments", c.segments},   {"history", c.history},     {"horizon", c.horizon},
            {"slots", c.slots},         {"channels", c.channels},   {"blocks", c.blocks},
            {"heads", c.heads},         {"head_dim", c.head_dim},   {"kernel", c.kernel},
            {"hidden", c.hidden},       {"time_dim", c.time_dim},   {"k_neighbors", c.k_neighbors},
            {"wave", speed_wave_name(c.wave)}, {"attention", c.attention}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("model section must be an object");
    static const char* known[] = {"segments", "history", "horizon", "slots",  "channels",    "blocks", "heads",
                                  "head_dim", "kernel",  "hidden",  "time_dim", "k_neighbors", "wave", "attention"};
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw ConfigError("unknown model key '" + key + "'");
    }
    ModelConfig c;
    c.segments = read_size(j, "segments", c.segments);
    c.history = read_size(j, "history", c.history);
    c.horizon = read_size(j, "horizon", c.horizon);
    c.slots = read_size(j, "slots", c.slots);
    c.channels = read_size(j, "channels", c.channels);
    c.blocks = read_size(j, "blocks", c.blocks);
    c.heads = read_size(j, "heads", c.heads);
    c.head_dim = read_size(j, "head_dim", c.head_dim);
    c.kernel = read_size(j, "kernel", c.kernel);
    c.hidden = read_size(j, "hidden", c.hidden);
    c.time_dim = read_size(j, "time_dim", c.time_dim);
    c.attention = read_key<bool>(j, "attention", c.attention);
    if (j.contains("k_neighbors")) {
        const auto& k = j.at("k_neighbors");
        if (k.is_string() && k.get<std::string>() == "all") {
            c.k_neighbors = kAllNeighbors;
        } else if (k.is_number_integer() && k.get<long long>() >= kAllNeighbors) {
            c.k_neighbors = k.get<int>();
        } else {
            throw ConfigError("model key 'k_neighbors' must be a non-negative integer or \"all\"");
        }
    }
    if (j.contains("wave")) {
        try {
            c.wave = parse_speed_wave(read_key<std::string>(j, "wave", ""));
        } catch (const ParameterError& e) {
            throw ConfigError(e.what());
        }
    }
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    check_params(ckpt.params);
    nlohmann::json header{{"model", to_json(ckpt.params.config)},
                          {"scaler", {{"vmin", ckpt.scaler.vmin}, {"vmax", ckpt.scaler.vmax}}},
                          {"meta", ckpt.meta}};
    // Write next to the target and rename so readers never see a half-written file.
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write checkpoint " + path);
        out.write(kMagic, sizeof kMagic);
        binio::put<std::uint32_t>(out, kVersion);
        binio::put_string(out, header.dump());
        binio::put<std::uint64_t>(out, ckpt.params.tensors.size());
        for (const auto& [name, t] : ckpt.params.tensors) {
            binio::put_string(out, name);
            binio::put<std::uint64_t>(out, t.rank());
            for (std::size_t d : t.shape()) binio::put<std::uint64_t>(out, d);
            binio::put_doubles(out, t.data().data(), t.size());
        }
        if (!out) throw DataError("failed writing checkpoint " + path);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw DataError("cannot move checkpoint into " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError(path + " is not a checkpoint");
    const auto version = binio::get<std::uint32_t>(in);
    if (version != kVersion) throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(binio::get_string(in));
        ckpt.params.config = model_config_from_json(header.at("model"));
        ckpt.scaler = make_scaler(header.at("scaler").at("vmin").get<double>(), header.at("scaler").at("vmax").get<double>());
        ckpt.meta = header.value("meta", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": bad checkpoint header: " + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(path + ": bad checkpoint header: " + e.what());
    }
    const auto count = binio::get<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = binio::get_string(in);
        const auto rank = binio::get<std::uint64_t>(in);
        if (rank > 8) throw FormatError(path + ": implausible rank for tensor '" + name + "'");
        Shape shape(rank);
        for (auto& d : shape) d = binio::get<std::uint64_t>(in);
        if (shape_size(shape) > (1ull << 32)) throw FormatError(path + ": implausible size for tensor '" + name + "'");
        Tensor t(shape);
        binio::get_doubles(in, t.data().data(), t.size());
        ckpt.params.tensors.emplace(std::move(name), std::move(t));
    }
    check_params(ckpt.params);
    return ckpt;
}

std::string checkpoint_id(const ModelParams& params) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& [name, t] : params.tensors) {
        mix(name.data(), name.size());
        for (std::size_t d : t.shape()) mix(&d, sizeof d);
        mix(t.data().data(), t.size() * sizeof(double));
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

}  // namespace rwz
