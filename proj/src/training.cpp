#include "rwz/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "rwz/errors.hpp"
#include "rwz/hypergraph.hpp"
#include "rwz/log.hpp"

namespace rwz {

using ad::Var;

void TrainConfig::validate() const {
    if (epochs == 0) throw ParameterError("epochs must be positive");
    if (batch_size == 0) throw ParameterError("batch_size must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ParameterError("learning_rate must be finite and non-negative");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ParameterError("beta1 and beta2 must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw ParameterError("epsilon must be positive");
    if (!(grad_clip > 0.0)) throw ParameterError("grad_clip must be positive");
    if (patience == 0) throw ParameterError("patience must be positive");
    if (!(target_train_loss >= 0.0)) throw ParameterError("target_train_loss must be non-negative");
}

Var masked_loss(Var pred, Var target, Var mask, double count, LossKind kind) {
    if (!(count > 0.0)) throw ParameterError("masked loss needs at least one observed cell");
    Var e = pred - target;
    Var per_cell = kind == LossKind::Mae ? abs(e) : e * e;
    return (1.0 / count) * sum(per_cell * mask);
}

double masked_loss(const Tensor& pred, const Tensor& target, const Tensor& mask, LossKind kind) {
    if (pred.shape() != target.shape() || pred.shape() != mask.shape()) {
        throw ShapeError("masked loss inputs " + shape_str(pred.shape()) + ", " + shape_str(target.shape()) + ", " +
                         shape_str(mask.shape()));
    }
    double total = 0.0;
    double count = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mask[i] == 0.0) continue;
        const double e = pred[i] - target[i];
        total += kind == LossKind::Mae ? std::abs(e) : e * e;
        count += mask[i];
    }
    if (count == 0.0) throw ParameterError("masked loss needs at least one observed cell");
    return total / count;
}

double global_norm(const ad::TensorMap& grads) {
    double sq = 0.0;
    for (const auto& [_, g] : grads) {
        for (double v : g.data()) sq += v * v;
    }
    return std::sqrt(sq);
}

void adam_step(ModelParams& params, const ad::TensorMap& grads, AdamState& state, const TrainConfig& config) {
    for (const auto& [name, g] : grads) {
        if (!g.all_finite()) throw NumericError("non-finite gradient for '" + name + "'");
        if (g.shape() != params.at(name).shape()) throw ShapeError("gradient shape mismatch for '" + name + "'");
    }
    const double norm = global_norm(grads);
    if (!std::isfinite(norm)) throw NumericError("gradient norm overflowed");
    const double clip = norm > config.grad_clip ? config.grad_clip / norm : 1.0;

    ++state.step;
    const auto t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    for (const auto& [name, g] : grads) {
        if (config.frozen.count(name) != 0) continue;
        Tensor& p = params.at(name);
        auto [mit, _m] = state.m.try_emplace(name, p.shape());
        auto [vit, _v] = state.v.try_emplace(name, p.shape());
        auto m = mit->second.data();
        auto v = vit->second.data();
        auto gv = g.data();
        auto pv = p.data();
        for (std::size_t i = 0; i < pv.size(); ++i) {
            const double gi = clip * gv[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
            pv[i] -= config.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.epsilon);
        }
    }
}

BatchGradient batch_gradient(const ModelParams& params, const Eigen::MatrixXd& g_op, const Batch& batch,
                             LossKind kind) {
    ad::Graph g;
    ModelBuilder mb(g, params.config);
    Var pred = mb.forward(g_op, batch);
    double count = 0.0;
    for (double m : batch.mask.data()) count += m;
    g.set_stage("loss");
    Var loss = masked_loss(pred, g.constant(batch.target), g.constant(batch.mask), count, kind);
    g.evaluate(bindings(params));
    BatchGradient out;
    out.loss = g.value(loss)[0];
    out.grads = g.backward(loss);
    return out;
}

nlohmann::json to_json(const EpochRecord& r, bool with_wall_time) {
    nlohmann::json j{{"epoch", r.epoch},
                     {"train_loss", r.train_loss},
                     {"val_mae", to_json(r.val)["mae"]},
                     {"val_rmse", to_json(r.val)["rmse"]},
                     {"val_mape", to_json(r.val)["mape"]}};
    if (with_wall_time) j["wall_seconds"] = r.wall_seconds;
    return j;
}

Eigen::MatrixXd model_operator(const RoadNetwork& network, const ModelConfig& config) {
    return hypergraph_operator(build_hypergraph(network, config.k_neighbors));
}

TrainResult train(const FeatureBundle& bundle, const SampleSplits& splits, const ModelConfig& model,
                  const TrainConfig& config, const TrainCallbacks& callbacks) {
    model.validate();
    config.validate();
    if (model.segments != bundle.segments()) {
        throw ShapeError("model has N=" + std::to_string(model.segments) + " but the data has " +
                         std::to_string(bundle.segments()) + " segments");
    }
    if (splits.train.empty()) throw ParameterError("training split is empty");
    if (splits.val.empty()) throw ParameterError("validation split is empty");
    for (const auto* part : {&splits.train, &splits.val}) {
        for (const auto& s : *part) {
            if (s.history != model.history || s.horizon != model.horizon) {
                throw ParameterError("sample windows do not match the model's history/horizon");
            }
        }
    }

    const Eigen::MatrixXd g_op = model_operator(bundle.network, model);
    TrainResult result{init_params(model, config.seed), {}};
    for (const auto& name : config.frozen) {
        if (result.params.tensors.count(name) == 0) throw ParameterError("cannot freeze unknown parameter '" + name + "'");
    }
    ModelParams params = result.params;
    AdamState state;
    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<std::size_t> order(splits.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::vector<Eigen::MatrixXd> all_cells = segment_conditions(bundle, splits.val, Condition::All);

    double best = std::numeric_limits<double>::infinity();
    TrainHistory& hist = result.history;
    hist.stop_reason = "epochs";
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        double cell_sum = 0.0;
        std::size_t batch_no = 0;
        for (std::size_t first = 0; first < order.size(); first += config.batch_size, ++batch_no) {
            std::vector<ForecastSample> chunk;
            for (std::size_t k = first; k < std::min(order.size(), first + config.batch_size); ++k) {
                chunk.push_back(splits.train[order[k]]);
            }
            const Batch batch = make_batch(bundle, chunk);
            try {
                BatchGradient bg = batch_gradient(params, g_op, batch, config.loss);
                if (!std::isfinite(bg.loss)) throw NumericError("loss is not finite");
                adam_step(params, bg.grads, state, config);
                double cells = 0.0;
                for (double m : batch.mask.data()) cells += m;
                loss_sum += bg.loss * cells;
                cell_sum += cells;
            } catch (const NumericError& e) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_no) + ": " + e.what());
            }
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / cell_sum;
        try {
            const Forecasts f = forecast_samples(params, g_op, bundle, splits.val);
            rec.val = evaluate_forecasts(f, all_cells, 0, Condition::All);
        } catch (const NumericError& e) {
            throw NumericError("validation diverged at epoch " + std::to_string(epoch) + ": " + e.what());
        }
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool improved = rec.val.mae < best;
        if (improved) {
            best = rec.val.mae;
            hist.best_epoch = epoch;
            hist.best_val_mae = best;
            result.params = params;
        }
        hist.epochs.push_back(rec);
        log(LogLevel::Debug, "epoch " + std::to_string(epoch) + " train_loss " + std::to_string(rec.train_loss) +
                                 " val_mae " + std::to_string(rec.val.mae));
        if (callbacks.on_epoch) callbacks.on_epoch(rec, params, improved);
        if (config.target_train_loss > 0.0 && rec.train_loss <= config.target_train_loss) {
            hist.stop_reason = "target";
            break;
        }
        if (epoch - hist.best_epoch >= config.patience) {
            hist.stop_reason = "patience";
            break;
        }
    }
    return result;
}

}  // namespace rwz
