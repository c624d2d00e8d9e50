#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tttlab/model.hpp"

namespace tttlab {

enum class TrainMode { finetune, linear_probe };

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(std::string_view text);

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    double max_lr = 1e-4;
    double min_lr = 1e-6;
    double weight_decay = 0.05;
    std::size_t warmup_epochs = 10;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::finetune;

    void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Linear warm-up with lr(0) = max_lr / warmup_steps reaching max_lr on the
// last warm-up step, then cosine annealing that lands on min_lr at the final
// step. Step counts are in optimizer updates.
double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double max_lr,
             double min_lr);
double lr_at(std::size_t step, std::size_t steps_per_epoch, const TrainConfig& config);

struct AdamState {
    std::vector<double> m, v;
    std::size_t step = 0;
};

// Decoupled weight decay, beta = (0.9, 0.999), eps = 1e-8:
//   p <- p (1 - lr wd);  p <- p - lr m_hat / (sqrt(v_hat) + eps)
void adamw_step(std::span<double> params, const GradVector& grad, AdamState& state, double lr,
                double weight_decay);

// Loss terms of one joint-training step, with the gradient of their sum.
struct StepLosses {
    double task = 0.0;
    double reconstruction = 0.0;  // mean over modalities present in the batch
    std::size_t modalities = 0;
};

struct JointGradients {
    StepLosses losses;
    GradVector encoder, task, modality;
};

// Gradients of task + mean reconstruction loss on one batch. The task head
// only sees the task loss and the modality head only the reconstruction
// term, so one backward pass of the sum serves all three parameter sets.
JointGradients joint_gradients(const Model& model, const ModelParams& params, TileBatch batch);

// R^2 over labelled values for regression, mAP on logits for multilabel.
double task_metric(const TaskSpec& task, TileBatch tiles, const std::vector<std::vector<double>>& predictions);

double evaluate(const Model& model, const ModelParams& params, TileBatch tiles, std::size_t batch_size);

struct TrainResult {
    ModelParams best;
    std::size_t best_epoch = 0;  // 1-based
    double best_metric = 0.0;
    std::vector<nlohmann::json> log;  // one object per epoch
};

// Joint training with best-validation checkpoint selection. Tiles are
// ordered by id, then shuffled each epoch with seed + epoch. Throws
// NumericError with the epoch and step when a loss stops being finite.
TrainResult joint_train(const Model& model, const ModelParams& init, TileBatch train, TileBatch validation,
                        const TrainConfig& config,
                        const std::function<void(const nlohmann::json&)>& on_epoch = {});

}  // namespace tttlab
