#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rwz/autodiff.hpp"
#include "rwz/features.hpp"
#include "rwz/tensor.hpp"

namespace rwz {

/// Fusion formula applied to the speed and construction windows.
enum class SpeedWave {
    Fused,         // (W_s*X_s + W_c*X_c) * T^E
    Linear,        // W_s*X_s + W_c*X_c
    SpeedPlusWc,   // X_s + W_c*X_c
    SquaredSpeed,  // X_s*X_s + W_c
};

std::string speed_wave_name(SpeedWave w);
std::string speed_wave_formula(SpeedWave w);
/// Accepts the names produced by speed_wave_name; throws ParameterError otherwise.
SpeedWave parse_speed_wave(const std::string& name);
inline const std::vector<SpeedWave>& all_speed_waves() {
    static const std::vector<SpeedWave> waves{SpeedWave::Fused, SpeedWave::Linear, SpeedWave::SpeedPlusWc,
                                              SpeedWave::SquaredSpeed};
    return waves;
}

struct ModelConfig {
    std::size_t segments = 0;     // N
    std::size_t history = 12;     // H
    std::size_t horizon = 12;     // P
    std::size_t slots = 672;      // weekly slots of the calendar
    std::size_t channels = 32;    // C
    std::size_t blocks = 2;
    std::size_t heads = 4;
    std::size_t head_dim = 8;     // d_k
    std::size_t kernel = 3;       // temporal conv width
    std::size_t hidden = 32;      // recurrent state size d_r
    std::size_t time_dim = 8;     // d_t
    int k_neighbors = 5;          // kAllNeighbors for every segment
    SpeedWave wave = SpeedWave::Fused;
    bool attention = true;

    /// Throws ParameterError on a non-positive size, kernel > history or channels not divisible by heads.
    void validate() const;
};

using ParamShapes = std::vector<std::pair<std::string, Shape>>;

/// Name and shape of every learnable tensor, in a fixed order.
ParamShapes param_shapes(const ModelConfig& config);

/// Named parameter tensors together with the config they were built for.
struct ModelParams {
    ModelConfig config;
    std::map<std::string, Tensor> tensors;

    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);
    std::size_t scalar_count() const;
};

/// Xavier-uniform projections and kernels, zero biases, W_s = 1, W_c = 0.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Throws ShapeError unless `params` has exactly the tensors of its config.
void check_params(const ModelParams& params);

/// A stack of samples in model layout.
struct Batch {
    std::size_t size = 0;
    Tensor speed;                      // [B, N, H], normalised
    Tensor construction;               // [B, N, H]
    std::vector<std::size_t> slots;    // B*H weekly slots, sample-major
    Tensor target;                     // [B, N, P], normalised
    Tensor mask;                       // [B, N, P]
};

Batch stack_windows(const std::vector<SampleWindow>& windows);
Batch make_batch(const FeatureBundle& bundle, const std::vector<ForecastSample>& samples);

enum class AttentionAxis { Spatial, Temporal };

struct AttentionResult {
    ad::Var output;   // same shape as the input
    ad::Var weights;  // [B, heads, L, L] with L = N (spatial) or H (temporal)
};

/// Builds the forward pass into an expression graph. Parameters become
/// leaves named as in param_shapes; bind them with `bindings(params)`.
class ModelBuilder {
public:
    ModelBuilder(ad::Graph& graph, ModelConfig config);

    const ModelConfig& config() const { return config_; }
    ad::Graph& graph() { return g_; }

    /// Leaf for a named parameter, created on first use.
    ad::Var param(const std::string& name);

    /// [B,N,H] speed and construction windows to the fused [B,N,H,C] map.
    ad::Var speed_wave(ad::Var speed, ad::Var construction, const std::vector<std::size_t>& slots);
    /// Fused [B,N,H] map before the channel lift.
    ad::Var fuse(ad::Var speed, ad::Var construction, const std::vector<std::size_t>& slots);
    /// Multi-head scaled dot-product attention with residual, on [B,N,H,C].
    AttentionResult attention(ad::Var x, const std::string& prefix, AttentionAxis axis);
    /// Attention, hypergraph conv, temporal conv and residual on [B,N,H,C].
    ad::Var st_block(ad::Var x, std::size_t index, ad::Var g_op);
    /// [B,N,H] sequence per vertex to [B,N,P] through the bidirectional recurrent head.
    ad::Var recurrent_head(ad::Var sequence);

    /// Full forward pass: [B,N,P] predictions in normalised units.
    ad::Var forward(const Eigen::MatrixXd& g_op, const Batch& batch);

    /// Intermediate nodes recorded during the last build, by name.
    const std::map<std::string, ad::Var>& taps() const { return taps_; }

private:
    ad::Var gru_direction(ad::Var gates_x, const std::string& prefix, bool reverse, std::size_t rows);

    ad::Graph& g_;
    ModelConfig config_;
    std::map<std::string, Shape> shapes_;
    std::map<std::string, ad::Var> params_;
    std::map<std::string, ad::Var> taps_;
};

/// Parameter tensors as graph bindings.
ad::Bindings bindings(const ModelParams& params);

/// Convenience: build, evaluate and return [B,N,P] predictions.
Tensor predict(const ModelParams& params, const Eigen::MatrixXd& g_op, const Batch& batch);

}  // namespace rwz
