#pragma once

// Test-time adaptation of the encoder from multimodal reconstruction.
//
// For every test batch the encoder starts from its post-training state and
// takes I steps of theta <- theta - lambda * mean_m(grad R_m / |grad R_m|),
// the mean running over modalities present in the batch. Decoders stay fixed.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tttlab/model.hpp"
#include "tttlab/splits.hpp"

namespace tttlab {

enum class Batching { random, geographic };

std::string to_string(Batching b);
Batching parse_batching(std::string_view text);

struct TttConfig {
    std::size_t batch_size = 8;
    double lr = 1e-2;
    std::size_t max_iterations = 5;
    Batching batching = Batching::random;
    std::uint64_t seed = 0;  // random batching only

    void validate() const;
};

nlohmann::json ttt_config_to_json(const TttConfig& c);
TttConfig ttt_config_from_json(const nlohmann::json& j);

// R_m per channel group with dR_m/dtheta. Absent modalities have loss 0,
// present = false and an all-zero gradient.
struct ReconstructionLosses {
    std::vector<double> loss;
    std::vector<bool> present;
    std::vector<GradVector> gradient;  // empty unless requested
};

// Throws DataError for an empty batch or when no task modality is present.
ReconstructionLosses batch_reconstruction_losses(const Model& model, const ParamStore& theta,
                                                 const ParamStore& alpha, TileBatch batch,
                                                 bool with_gradients = true);

struct Direction {
    GradVector value;
    std::size_t used = 0;  // modalities that contributed
};

// Mean over present, nonzero gradients of g / |g|. Zero when none qualify.
Direction normalized_mean_gradient(std::span<const GradVector> gradients, const std::vector<bool>& present);

// theta - lr * direction
void ttt_update(ParamStore& theta, const GradVector& direction, double lr);

// One adaptation iteration in place; returns the losses it used.
ReconstructionLosses adaptation_step(const Model& model, ParamStore& theta, const ParamStore& alpha,
                                     TileBatch batch, double lr);

// Batches in processing order. bbox is set for geographic batching.
struct TestBatch {
    std::vector<const NormalizedTile*> tiles;
    std::optional<BBox> bbox;
};

std::vector<TestBatch> make_batches(TileBatch tiles, const TttConfig& config);

struct IterationSelection {
    std::size_t iterations = 0;          // I*
    std::vector<std::size_t> best;       // per validation batch
    std::vector<std::vector<double>> task_loss;  // per batch, iterations 0..I_max
};

// Best iteration (0..I_max, earliest on ties) of each task-loss curve, then
// the mean over batches rounded half to even. Throws DataError on empty input.
IterationSelection choose_iterations(std::vector<std::vector<double>> task_loss);

// Runs I_max adaptation steps on every validation batch (batched as in
// config) and chooses I* from the task-loss curves.
IterationSelection select_iterations(const Model& model, const ModelParams& params, TileBatch validation,
                                     const TttConfig& config);

std::size_t round_half_even(double value);

struct TilePrediction {
    std::int64_t id = 0;
    std::vector<double> values;  // task head output (normalized units or logits)
};

struct BatchTrace {
    std::size_t batch = 0;
    std::vector<std::int64_t> tile_ids;
    std::optional<BBox> bbox;
    std::uint64_t start_checksum = 0;  // encoder checksum when the batch began
    std::vector<std::vector<std::optional<double>>> losses;  // per iteration, per group; nullopt if absent
    std::size_t iterations = 0;  // adaptation steps applied
    bool fallback = false;       // non-finite loss: predictions from the unadapted encoder
    std::string error;
    std::uint64_t prediction_digest = 0;
};

nlohmann::json trace_to_json(const BatchTrace& trace, const Model& model);

struct TttRun {
    std::vector<TilePrediction> predictions;  // sorted by tile id
    std::vector<BatchTrace> traces;           // in batch order
};

TttRun run_ttt(const Model& model, const ModelParams& params, TileBatch tiles, const TttConfig& config,
               std::size_t iterations);
// Same, over batches chosen by the caller.
TttRun run_ttt(const Model& model, const ModelParams& params, std::span<const TestBatch> batches,
               const TttConfig& config, std::size_t iterations);

}  // namespace tttlab
