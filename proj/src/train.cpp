#include "tttlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tttlab/errors.hpp"
#include "tttlab/metrics.hpp"
#include "tttlab/rng.hpp"

namespace tttlab {

std::string to_string(TrainMode mode) { return mode == TrainMode::finetune ? "finetune" : "linear-probe"; }

TrainMode parse_train_mode(std::string_view text) {
    if (text == "finetune") return TrainMode::finetune;
    if (text == "linear-probe") return TrainMode::linear_probe;
    throw UsageError("unknown training mode '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
    if (epochs == 0) throw UsageError("epochs must be positive");
    if (batch_size == 0) throw UsageError("batch size must be positive");
    if (warmup_epochs >= epochs) throw UsageError("warmup epochs must be fewer than epochs");
    if (!(min_lr > 0.0 && min_lr <= max_lr)) throw UsageError("need 0 < min_lr <= max_lr");
    if (!(weight_decay >= 0.0)) throw UsageError("weight decay must be non-negative");
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},   {"batch_size", c.batch_size},     {"max_lr", c.max_lr},
            {"min_lr", c.min_lr},   {"weight_decay", c.weight_decay}, {"warmup_epochs", c.warmup_epochs},
            {"seed", c.seed},       {"mode", to_string(c.mode)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    try {
        TrainConfig c;
        c.epochs = j.at("epochs").get<std::size_t>();
        c.batch_size = j.at("batch_size").get<std::size_t>();
        c.max_lr = j.at("max_lr").get<double>();
        c.min_lr = j.at("min_lr").get<double>();
        c.weight_decay = j.at("weight_decay").get<double>();
        c.warmup_epochs = j.at("warmup_epochs").get<std::size_t>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.mode = parse_train_mode(j.at("mode").get<std::string>());
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("train config: ") + e.what());
    }
}

double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double max_lr, double min_lr) {
    if (total_steps == 0 || step >= total_steps) throw UsageError("lr_at: step outside the schedule");
    if (step < warmup_steps) {
        return max_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    // Cosine segment starts at the last warm-up step (or step 0).
    const std::size_t start = warmup_steps ? warmup_steps - 1 : 0;
    const std::size_t span = total_steps - 1 - start;
    if (span == 0) return max_lr;
    const double progress = static_cast<double>(step - start) / static_cast<double>(span);
    return min_lr + 0.5 * (max_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

double lr_at(std::size_t step, std::size_t steps_per_epoch, const TrainConfig& c) {
    return lr_at(step, steps_per_epoch * c.epochs, steps_per_epoch * c.warmup_epochs, c.max_lr, c.min_lr);
}

void adamw_step(std::span<double> params, const GradVector& grad, AdamState& state, double lr,
                double weight_decay) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (grad.size() != params.size()) throw ShapeError("adamw_step: gradient does not match parameters");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size()) throw ShapeError("adamw_step: optimizer state does not match parameters");
    ++state.step;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    const double decay = 1.0 - lr * weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        params[i] *= decay;
        params[i] -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + eps);
    }
}

JointGradients joint_gradients(const Model& model, const ModelParams& params, TileBatch batch) {
    Tape t;
    auto emb = model.encode(t, params.encoder, batch);
    auto task = model.task_loss(t, model.decode_task(t, emb, params.task, batch.size()), batch);
    auto recs = model.decode_modalities(t, emb, params.modality, batch.size());
    JointGradients out;
    std::vector<Var> present;
    for (std::size_t g = 0; g < recs.size(); ++g) {
        auto l = model.modality_loss(t, recs[g], g, batch);
        if (l.present) present.push_back(l.loss);
    }
    Var total = task;
    if (!present.empty()) {
        Var acc = present[0];
        for (std::size_t i = 1; i < present.size(); ++i) acc = add(t, acc, present[i]);
        auto recon = scale(t, acc, 1.0 / static_cast<double>(present.size()));
        out.losses.reconstruction = t.value(recon).item();
        total = add(t, task, recon);
    }
    out.losses.task = t.value(task).item();
    out.losses.modalities = present.size();
    auto grads = t.backward(total);
    out.encoder = grads.of(params.encoder);
    out.task = grads.of(params.task);
    out.modality = grads.of(params.modality);
    return out;
}

double task_metric(const TaskSpec& task, TileBatch tiles, const std::vector<std::vector<double>>& predictions) {
    if (predictions.size() != tiles.size()) throw ShapeError("task_metric: one prediction per tile expected");
    std::vector<double> y, f;
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        const NormalizedTile& t = *tiles[i];
        if (t.label.size() != predictions[i].size()) {
            throw ShapeError("task_metric: tile " + std::to_string(t.id) + " prediction size mismatch");
        }
        for (std::size_t k = 0; k < t.label.size(); ++k) {
            if (!t.label_valid[k]) continue;
            y.push_back(t.label[k]);
            f.push_back(predictions[i][k]);
        }
    }
    if (task.type == TaskType::multilabel) return mean_average_precision(y, f, task.classes).value;
    return r_squared(y, f);
}

double evaluate(const Model& model, const ModelParams& params, TileBatch tiles, std::size_t batch_size) {
    std::vector<std::vector<double>> preds;
    for (std::size_t i = 0; i < tiles.size(); i += batch_size) {
        auto part = model.predict(params.encoder, params.task, tiles.subspan(i, std::min(batch_size, tiles.size() - i)));
        for (auto& p : part) preds.push_back(std::move(p));
    }
    return task_metric(model.config().task, tiles, preds);
}

TrainResult joint_train(const Model& model, const ModelParams& init, TileBatch train, TileBatch validation,
                        const TrainConfig& config, const std::function<void(const nlohmann::json&)>& on_epoch) {
    config.validate();
    if (train.empty()) throw DataError("training split is empty");
    if (validation.empty()) throw DataError("validation split is empty");

    std::vector<const NormalizedTile*> order(train.begin(), train.end());
    std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->id < b->id; });
    const std::size_t steps_per_epoch = (order.size() + config.batch_size - 1) / config.batch_size;

    ModelParams params = init;
    AdamState s_enc, s_task, s_mod;
    TrainResult result;
    result.best = init;
    bool have_best = false;
    std::size_t step = 0;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        auto shuffled = order;
        Rng rng(config.seed + epoch);
        rng.shuffle(shuffled);
        double task_sum = 0.0, recon_sum = 0.0, lr = 0.0;
        for (std::size_t b = 0; b < steps_per_epoch; ++b, ++step) {
            const std::size_t begin = b * config.batch_size;
            const std::size_t n = std::min(config.batch_size, shuffled.size() - begin);
            JointGradients g;
            try {
                g = joint_gradients(model, params, TileBatch(shuffled).subspan(begin, n));
            } catch (const NumericError& e) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step) + ": " + e.what());
            }
            task_sum += g.losses.task;
            recon_sum += g.losses.reconstruction;
            lr = lr_at(step, steps_per_epoch, config);
            if (config.mode == TrainMode::finetune) {
                adamw_step(params.encoder.values(), g.encoder, s_enc, lr, config.weight_decay);
            }
            adamw_step(params.task.values(), g.task, s_task, lr, config.weight_decay);
            adamw_step(params.modality.values(), g.modality, s_mod, lr, config.weight_decay);
        }
        double metric;
        try {
            metric = evaluate(model, params, validation, config.batch_size);
        } catch (const NumericError& e) {
            throw NumericError("validation diverged at epoch " + std::to_string(epoch) + ": " + e.what());
        }
        const bool improved = !have_best || metric > result.best_metric;
        if (improved) {
            result.best = params;
            result.best_epoch = epoch;
            result.best_metric = metric;
            have_best = true;
        }
        const double steps = static_cast<double>(steps_per_epoch);
        nlohmann::json line{{"epoch", epoch},
                            {"lr", lr},
                            {"train_task_loss", task_sum / steps},
                            {"train_reconstruction_loss", recon_sum / steps},
                            {"train_total_loss", (task_sum + recon_sum) / steps},
                            {"validation_metric", metric},
                            {"best", improved}};
        if (on_epoch) on_epoch(line);
        result.log.push_back(std::move(line));
    }
    return result;
}

}  // namespace tttlab
