#include "rwz/model.hpp"

#include <cmath>
#include <random>

#include "rwz/errors.hpp"

namespace rwz {

using ad::Var;

std::string speed_wave_name(SpeedWave w) {
    switch (w) {
        case SpeedWave::Fused: return "fused";
        case SpeedWave::Linear: return "linear";
        case SpeedWave::SpeedPlusWc: return "speed_plus_wc";
        case SpeedWave::SquaredSpeed: return "squared_speed";
    }
    return "?";
}

std::string speed_wave_formula(SpeedWave w) {
    switch (w) {
        case SpeedWave::Fused: return "(W_s*X_s + W_c*X_c)*T^E";
        case SpeedWave::Linear: return "W_s*X_s + W_c*X_c";
        case SpeedWave::SpeedPlusWc: return "X_s + W_c*X_c";
        case SpeedWave::SquaredSpeed: return "X_s*X_s + W_c";
    }
    return "?";
}

SpeedWave parse_speed_wave(const std::string& name) {
    for (SpeedWave w : all_speed_waves()) {
        if (speed_wave_name(w) == name) return w;
    }
    throw ParameterError("unknown speed wave '" + name + "'");
}

void ModelConfig::validate() const {
    const std::pair<const char*, std::size_t> sizes[] = {
        {"segments", segments}, {"history", history},   {"horizon", horizon}, {"slots", slots},
        {"channels", channels}, {"blocks", blocks},     {"heads", heads},     {"head_dim", head_dim},
        {"kernel", kernel},     {"hidden", hidden},     {"time_dim", time_dim},
    };
    for (const auto& [name, v] : sizes) {
        if (v == 0) throw ParameterError(std::string("model ") + name + " must be positive");
    }
    if (kernel > history) throw ParameterError("temporal kernel width exceeds the history length");
    if (channels % heads != 0) throw ParameterError("channels must be divisible by the number of heads");
}

ParamShapes param_shapes(const ModelConfig& c) {
    c.validate();
    const std::size_t n = c.segments;
    const std::size_t ch = c.channels;
    const std::size_t qk = c.heads * c.head_dim;
    const std::size_t d = c.hidden;
    ParamShapes out{
        {"wave.ws", {n, c.history}},
        {"wave.wc", {n, c.history}},
        {"wave.time_embedding", {c.slots, c.time_dim}},
        {"wave.time_weight", {c.time_dim, 1}},
        {"wave.lift_w", {1, ch}},
        {"wave.lift_b", {ch}},
    };
    for (std::size_t b = 0; b < c.blocks; ++b) {
        const std::string p = "block" + std::to_string(b) + ".";
        for (const char* axis : {"spatial", "temporal"}) {
            out.push_back({p + axis + ".wq", {ch, qk}});
            out.push_back({p + axis + ".wk", {ch, qk}});
            out.push_back({p + axis + ".wo", {ch, ch}});
        }
        out.push_back({p + "theta", {ch, ch}});
        out.push_back({p + "theta_b", {ch}});
        out.push_back({p + "phi", {c.kernel * ch, ch}});
        out.push_back({p + "phi_b", {ch}});
        out.push_back({p + "res", {ch, ch}});
    }
    out.push_back({"reduce.w", {ch, 1}});
    out.push_back({"reduce.b", {1}});
    for (const char* dir : {"gru.fwd.", "gru.bwd."}) {
        out.push_back({std::string(dir) + "wx", {1, 3 * d}});
        out.push_back({std::string(dir) + "bx", {3 * d}});
        out.push_back({std::string(dir) + "uzr", {d, 2 * d}});
        out.push_back({std::string(dir) + "un", {d, d}});
    }
    out.push_back({"out.w", {2 * d, c.horizon}});
    out.push_back({"out.b", {c.horizon}});
    return out;
}

const Tensor& ModelParams::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw StateError("no parameter named '" + name + "'");
    return it->second;
}

Tensor& ModelParams::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw StateError("no parameter named '" + name + "'");
    return it->second;
}

std::size_t ModelParams::scalar_count() const {
    std::size_t total = 0;
    for (const auto& [name, t] : tensors) total += t.size();
    return total;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
    ModelParams p;
    p.config = config;
    std::mt19937_64 rng(seed);
    for (const auto& [name, shape] : param_shapes(config)) {
        Tensor t(shape);
        const bool bias = shape.size() == 1;
        if (name == "wave.ws") {
            t = Tensor(shape, 1.0);
        } else if (name == "wave.wc" || bias) {
            // zeros
        } else {
            const double fan_in = static_cast<double>(shape[0]);
            const double fan_out = static_cast<double>(shape[1]);
            const double a = std::sqrt(6.0 / (fan_in + fan_out));
            std::uniform_real_distribution<double> u(-a, a);
            for (double& v : t.data()) v = u(rng);
        }
        p.tensors.emplace(name, std::move(t));
    }
    return p;
}

void check_params(const ModelParams& params) {
    const ParamShapes shapes = param_shapes(params.config);
    if (shapes.size() != params.tensors.size()) {
        throw ShapeError("parameter set has " + std::to_string(params.tensors.size()) + " tensors, config expects " +
                         std::to_string(shapes.size()));
    }
    for (const auto& [name, shape] : shapes) {
        auto it = params.tensors.find(name);
        if (it == params.tensors.end()) throw ShapeError("missing parameter '" + name + "'");
        if (it->second.shape() != shape) {
            throw ShapeError("parameter '" + name + "' is " + shape_str(it->second.shape()) + ", expected " +
                             shape_str(shape));
        }
        if (!it->second.all_finite()) throw NumericError("parameter '" + name + "' holds non-finite values");
    }
}

Batch stack_windows(const std::vector<SampleWindow>& windows) {
    if (windows.empty()) throw ParameterError("cannot stack an empty batch");
    const auto n = static_cast<std::size_t>(windows[0].speed.rows());
    const auto h = static_cast<std::size_t>(windows[0].speed.cols());
    const auto p = static_cast<std::size_t>(windows[0].target.cols());
    const std::size_t b = windows.size();
    Batch batch;
    batch.size = b;
    batch.speed = Tensor({b, n, h});
    batch.construction = Tensor({b, n, h});
    batch.target = Tensor({b, n, p});
    batch.mask = Tensor({b, n, p});
    batch.slots.reserve(b * h);
    for (std::size_t s = 0; s < b; ++s) {
        const SampleWindow& w = windows[s];
        if (static_cast<std::size_t>(w.speed.rows()) != n || static_cast<std::size_t>(w.speed.cols()) != h ||
            static_cast<std::size_t>(w.target.cols()) != p) {
            throw ShapeError("batch windows have different shapes");
        }
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            for (std::size_t t = 0; t < h; ++t) {
                batch.speed[(s * n + i) * h + t] = w.speed(r, static_cast<Eigen::Index>(t));
                batch.construction[(s * n + i) * h + t] = w.construction(r, static_cast<Eigen::Index>(t));
            }
            for (std::size_t t = 0; t < p; ++t) {
                batch.target[(s * n + i) * p + t] = w.target(r, static_cast<Eigen::Index>(t));
                batch.mask[(s * n + i) * p + t] = w.target_mask(r, static_cast<Eigen::Index>(t));
            }
        }
        batch.slots.insert(batch.slots.end(), w.slots.begin(), w.slots.end());
    }
    return batch;
}

Batch make_batch(const FeatureBundle& bundle, const std::vector<ForecastSample>& samples) {
    std::vector<SampleWindow> windows;
    windows.reserve(samples.size());
    for (const auto& s : samples) windows.push_back(materialize(bundle, s));
    return stack_windows(windows);
}

ModelBuilder::ModelBuilder(ad::Graph& graph, ModelConfig config) : g_(graph), config_(std::move(config)) {
    for (auto& [name, shape] : param_shapes(config_)) shapes_.emplace(name, shape);
}

Var ModelBuilder::param(const std::string& name) {
    auto it = params_.find(name);
    if (it != params_.end()) return it->second;
    auto shape = shapes_.find(name);
    if (shape == shapes_.end()) throw StateError("no parameter named '" + name + "'");
    Var v = g_.leaf(name, shape->second);
    params_.emplace(name, v);
    return v;
}

Var ModelBuilder::fuse(Var speed, Var construction, const std::vector<std::size_t>& slots) {
    const Shape& s = speed.shape();
    if (s.size() != 3 || s[1] != config_.segments || s[2] != config_.history) {
        throw ShapeError("speed window " + shape_str(s) + " does not match N=" + std::to_string(config_.segments) +
                         ", H=" + std::to_string(config_.history));
    }
    if (construction.shape() != s) {
        throw ShapeError("construction window " + shape_str(construction.shape()) + " does not match speed window " +
                         shape_str(s));
    }
    g_.set_stage("speed_wave");
    const std::size_t b = s[0];
    switch (config_.wave) {
        case SpeedWave::Linear:
            return param("wave.ws") * speed + param("wave.wc") * construction;
        case SpeedWave::SpeedPlusWc:
            return speed + param("wave.wc") * construction;
        case SpeedWave::SquaredSpeed:
            return speed * speed + param("wave.wc");
        case SpeedWave::Fused:
            break;
    }
    if (slots.size() != b * config_.history) throw ShapeError("expected one weekly slot per input step");
    for (std::size_t k : slots) {
        if (k >= config_.slots) throw ShapeError("weekly slot " + std::to_string(k) + " outside the embedding table");
    }
    Var linear = param("wave.ws") * speed + param("wave.wc") * construction;
    Var emb = g_.index_select(param("wave.time_embedding"), slots);           // [B*H, d_t]
    Var factor = 2.0 * sigmoid(matmul(emb, param("wave.time_weight")));      // [B*H, 1]
    factor = reshape(factor, {b, 1, config_.history});
    taps_["time_factor"] = factor;
    return linear * factor;
}

Var ModelBuilder::speed_wave(Var speed, Var construction, const std::vector<std::size_t>& slots) {
    Var fused = fuse(speed, construction, slots);
    taps_["speed_wave"] = fused;
    const Shape& s = fused.shape();
    Var x = reshape(fused, {s[0], s[1], s[2], 1});
    return matmul(x, param("wave.lift_w")) + param("wave.lift_b");
}

AttentionResult ModelBuilder::attention(Var x, const std::string& prefix, AttentionAxis axis) {
    const Shape s = x.shape();
    if (s.size() != 4) throw ShapeError("attention expects [B,N,H,C], got " + shape_str(s));
    const std::size_t b = s[0];
    const std::size_t n = s[1];
    const std::size_t h = s[2];
    const std::size_t c = s[3];
    const std::size_t heads = config_.heads;
    const std::size_t dk = config_.head_dim;
    const std::size_t cv = c / heads;
    const bool spatial = axis == AttentionAxis::Spatial;
    const std::size_t len = spatial ? n : h;
    const std::size_t other = spatial ? h : n;

    // Queries and keys come from the features pooled over the other axis.
    Var pooled = mean(x, spatial ? 2 : 1);  // [B, len, C]
    auto project = [&](const char* w) {
        Var q = reshape(matmul(pooled, param(prefix + w)), {b, len, heads, dk});
        return permute(q, {0, 2, 1, 3});  // [B, heads, len, dk]
    };
    Var q = project(".wq");
    Var kt = permute(project(".wk"), {0, 1, 3, 2});
    Var scores = (1.0 / std::sqrt(static_cast<double>(dk))) * matmul(q, kt);
    Var weights = softmax(scores, -1);  // [B, heads, len, len]

    Var x5 = reshape(x, {b, n, h, heads, cv});
    Var v = spatial ? permute(x5, {0, 3, 1, 2, 4}) : permute(x5, {0, 3, 2, 1, 4});
    v = reshape(v, {b, heads, len, other * cv});
    Var o = reshape(matmul(weights, v), {b, heads, len, other, cv});
    o = spatial ? permute(o, {0, 2, 3, 1, 4}) : permute(o, {0, 3, 2, 1, 4});
    o = reshape(o, {b, n, h, c});
    return {x + matmul(o, param(prefix + ".wo")), weights};
}

Var ModelBuilder::st_block(Var x, std::size_t index, Var g_op) {
    const std::string p = "block" + std::to_string(index);
    const Shape s = x.shape();
    const std::size_t b = s[0];
    const std::size_t n = s[1];
    const std::size_t h = s[2];
    const std::size_t c = s[3];
    Var y = x;
    if (config_.attention) {
        g_.set_stage(p + ".spatial_attention");
        AttentionResult sa = attention(y, p + ".spatial", AttentionAxis::Spatial);
        taps_[p + ".spatial_weights"] = sa.weights;
        g_.set_stage(p + ".temporal_attention");
        AttentionResult ta = attention(sa.output, p + ".temporal", AttentionAxis::Temporal);
        taps_[p + ".temporal_weights"] = ta.weights;
        y = ta.output;
    }

    g_.set_stage(p + ".hypergraph_conv");
    Var mixed = reshape(matmul(g_op, reshape(y, {b, n, h * c})), {b, n, h, c});
    Var conv = relu(matmul(mixed, param(p + ".theta")) + param(p + ".theta_b"));
    taps_[p + ".graph_conv"] = conv;

    g_.set_stage(p + ".temporal_conv");
    const std::size_t k = config_.kernel;
    const std::size_t left = (k - 1) / 2;
    const std::size_t right = k - 1 - left;
    std::vector<Var> padded_parts;
    if (left > 0) padded_parts.push_back(g_.constant(Tensor({b, n, left, c})));
    padded_parts.push_back(conv);
    if (right > 0) padded_parts.push_back(g_.constant(Tensor({b, n, right, c})));
    Var padded = padded_parts.size() == 1 ? conv : g_.concat(padded_parts, 2);
    std::vector<Var> shifted;
    for (std::size_t j = 0; j < k; ++j) shifted.push_back(slice(padded, 2, j, j + h));
    Var window = k == 1 ? shifted[0] : g_.concat(shifted, 3);  // [B, N, H, k*C]
    Var temporal = relu(matmul(window, param(p + ".phi")) + param(p + ".phi_b"));

    g_.set_stage(p + ".residual");
    return temporal + matmul(x, param(p + ".res"));
}

Var ModelBuilder::gru_direction(Var gates_x, const std::string& prefix, bool reverse, std::size_t rows) {
    const std::size_t d = config_.hidden;
    const std::size_t h = config_.history;
    Var uzr = param(prefix + "uzr");
    Var un = param(prefix + "un");
    Var state = g_.constant(Tensor({rows, d}));
    for (std::size_t step = 0; step < h; ++step) {
        const std::size_t t = reverse ? h - 1 - step : step;
        Var gx = reshape(slice(gates_x, 1, t, t + 1), {rows, 3 * d});
        Var zr = slice(gx, 1, 0, 2 * d) + matmul(state, uzr);
        Var z = sigmoid(slice(zr, 1, 0, d));
        Var r = sigmoid(slice(zr, 1, d, 2 * d));
        Var cand = tanh(slice(gx, 1, 2 * d, 3 * d) + matmul(r * state, un));
        state = cand + z * (state - cand);
    }
    return state;
}

Var ModelBuilder::recurrent_head(Var sequence) {
    const Shape s = sequence.shape();
    if (s.size() != 3) throw ShapeError("recurrent head expects [B,N,H], got " + shape_str(s));
    const std::size_t rows = s[0] * s[1];
    const std::size_t h = s[2];
    if (h != config_.history) throw ShapeError("recurrent head sequence length differs from the history length");
    g_.set_stage("recurrent_head");
    Var seq = reshape(sequence, {rows, h, 1});
    Var fwd = gru_direction(matmul(seq, param("gru.fwd.wx")) + param("gru.fwd.bx"), "gru.fwd.", false, rows);
    Var bwd = gru_direction(matmul(seq, param("gru.bwd.wx")) + param("gru.bwd.bx"), "gru.bwd.", true, rows);
    taps_["gru.fwd.final"] = fwd;
    taps_["gru.bwd.final"] = bwd;
    g_.set_stage("output");
    Var out = matmul(g_.concat({fwd, bwd}, 1), param("out.w")) + param("out.b");
    return reshape(out, {s[0], s[1], config_.horizon});
}

Var ModelBuilder::forward(const Eigen::MatrixXd& g_op, const Batch& batch) {
    const auto n = static_cast<std::size_t>(g_op.rows());
    if (n != config_.segments || static_cast<std::size_t>(g_op.cols()) != n) {
        throw ShapeError("hypergraph operator is " + std::to_string(g_op.rows()) + "x" + std::to_string(g_op.cols()) +
                         " for N=" + std::to_string(config_.segments));
    }
    // Every parameter gets a leaf so gradients cover the full set.
    for (const auto& [name, shape] : shapes_) param(name);

    Tensor gt({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) gt[i * n + j] = g_op(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    Var gop = g_.constant(std::move(gt));
    Var speed = g_.constant(batch.speed);
    Var construction = g_.constant(batch.construction);

    Var x = speed_wave(speed, construction, batch.slots);
    for (std::size_t b = 0; b < config_.blocks; ++b) {
        x = st_block(x, b, gop);
        taps_["block" + std::to_string(b)] = x;
    }
    g_.set_stage("reduce");
    const Shape s = x.shape();
    Var reduced = reshape(matmul(x, param("reduce.w")) + param("reduce.b"), {s[0], s[1], s[2]});
    taps_["reduced"] = reduced;
    Var pred = recurrent_head(reduced);
    g_.set_stage("");
    return pred;
}

ad::Bindings bindings(const ModelParams& params) { return params.tensors; }

Tensor predict(const ModelParams& params, const Eigen::MatrixXd& g_op, const Batch& batch) {
    ad::Graph g;
    ModelBuilder mb(g, params.config);
    Var pred = mb.forward(g_op, batch);
    g.evaluate(bindings(params));
    return g.value(pred);
}

}  // namespace rwz
