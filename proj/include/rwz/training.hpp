#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "rwz/autodiff.hpp"
#include "rwz/evaluation.hpp"
#include "rwz/features.hpp"
#include "rwz/model.hpp"

namespace rwz {

enum class LossKind { Mae, Mse };

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double grad_clip = 5.0;
    std::uint64_t seed = 7;
    std::size_t patience = 20;          // epochs without validation improvement
    LossKind loss = LossKind::Mae;
    std::set<std::string> frozen;       // parameter names kept at their initial value
    double target_train_loss = 0.0;     // stop once the epoch training loss is at or below; 0 disables

    /// Throws ParameterError for non-positive sizes/rates or betas outside [0, 1).
    void validate() const;
};

/// Mean absolute (or squared) error over cells with mask = 1. `count` is the
/// number of such cells and must be positive.
ad::Var masked_loss(ad::Var pred, ad::Var target, ad::Var mask, double count, LossKind kind = LossKind::Mae);
double masked_loss(const Tensor& pred, const Tensor& target, const Tensor& mask, LossKind kind = LossKind::Mae);

struct AdamState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    std::size_t step = 0;
};

double global_norm(const ad::TensorMap& grads);

/// Clips the joint gradient norm to `config.grad_clip`, then applies one
/// bias-corrected Adam update to every parameter not in `config.frozen`.
/// Throws NumericError on a non-finite gradient, leaving params and state untouched.
void adam_step(ModelParams& params, const ad::TensorMap& grads, AdamState& state, const TrainConfig& config);

/// Loss and gradients of one batch.
struct BatchGradient {
    double loss = 0.0;
    ad::TensorMap grads;
};
BatchGradient batch_gradient(const ModelParams& params, const Eigen::MatrixXd& g_op, const Batch& batch,
                             LossKind kind = LossKind::Mae);

struct EpochRecord {
    std::size_t epoch = 0;       // 1-based
    double train_loss = 0.0;     // cell-weighted mean of the batch losses, normalised units
    MetricReport val;            // all validation cells and steps, MPH
    double wall_seconds = 0.0;   // excluded from determinism checks
};

nlohmann::json to_json(const EpochRecord& r, bool with_wall_time = true);

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;  // 1-based epoch whose parameters were kept
    double best_val_mae = 0.0;
    std::string stop_reason;     // "epochs", "patience" or "target"
};

struct TrainResult {
    ModelParams params;  // from the epoch with the best validation MAE
    TrainHistory history;
};

struct TrainCallbacks {
    /// After every epoch; `improved` is true when this epoch became the best.
    std::function<void(const EpochRecord&, const ModelParams& current, bool improved)> on_epoch;
};

/// The hypergraph operator used by a model config on a network.
Eigen::MatrixXd model_operator(const RoadNetwork& network, const ModelConfig& config);

/// Trains from `init_params(model, config.seed)` on `splits.train`, selecting
/// the epoch with the lowest validation MAE. Throws ParameterError on empty
/// splits and NumericError naming epoch and batch when the loss diverges.
TrainResult train(const FeatureBundle& bundle, const SampleSplits& splits, const ModelConfig& model,
                  const TrainConfig& config, const TrainCallbacks& callbacks = {});

}  // namespace rwz
