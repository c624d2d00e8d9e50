#pragma once

// Toy encoder, task head and multimodal reconstruction head.
//
// Embeddings are a patch grid stored channel-last: one row per patch, tiles
// stacked, so a batch of B tiles gives a [B * P, D] matrix with
// P = (tile_size / patch_size)^2.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tttlab/autodiff.hpp"
#include "tttlab/normalize.hpp"
#include "tttlab/schema.hpp"

namespace tttlab {

struct ModelConfig {
    Schema schema;
    TaskSpec task;
    std::size_t tile_size = 16;
    std::size_t patch_size = 4;
    std::size_t embed_dim = 32;
    std::vector<std::string> input_modalities{"sentinel2"};
    // Reconstruction targets; empty means every schema modality.
    std::vector<std::string> task_modalities;

    void validate() const;
};

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Output channels of the reconstruction head that belong to one modality.
struct ChannelGroup {
    std::size_t modality = 0;  // schema index
    Scale scale = Scale::pixel;
    std::size_t offset = 0;    // within the pixel or the tile channel block
    std::size_t count = 0;     // bands, or K logits for categorical
};

// theta, g and alpha.
struct ModelParams {
    ParamStore encoder{"encoder"};
    ParamStore task{"task"};
    ParamStore modality{"modality"};

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

using TileBatch = std::span<const NormalizedTile* const>;

struct ModalityLoss {
    Var loss;
    bool present = false;   // false: no tile in the batch has a valid value
    std::size_t tiles = 0;  // tiles contributing to the mean
};

class Model {
public:
    explicit Model(ModelConfig config);

    const ModelConfig& config() const noexcept { return config_; }
    const std::vector<ChannelGroup>& groups() const noexcept { return groups_; }
    std::size_t patches_per_tile() const noexcept { return grid_ * grid_; }
    std::size_t patch_input_dim() const noexcept { return input_dim_; }

    ModelParams init(std::uint64_t seed) const;

    // [B*P, D]. Throws DataError when a tile lacks an input modality.
    Var encode(Tape& t, const ParamStore& theta, TileBatch batch) const;

    // Tile tasks: [B, output_dim]. Pixel task: [B*H*W, 1].
    Var decode_task(Tape& t, Var embeddings, const ParamStore& g, std::size_t batch) const;

    // One entry per channel group: pixel modalities [B*H*W, count],
    // tile modalities [B, count].
    std::vector<Var> decode_modalities(Tape& t, Var embeddings, const ParamStore& alpha,
                                       std::size_t batch) const;

    // Mean over tiles where the modality is present of the per-tile loss
    // (MSE over valid values or mean cross-entropy over valid pixels).
    ModalityLoss modality_loss(Tape& t, Var reconstruction, std::size_t group, TileBatch batch) const;

    // Regression: MSE in normalized label units over labelled values.
    // Multilabel: mean BCE with logits. Throws DataError without labels.
    Var task_loss(Tape& t, Var prediction, TileBatch batch) const;

    // Task head output per tile (normalized regression values or logits).
    std::vector<std::vector<double>> predict(const ParamStore& theta, const ParamStore& g,
                                             TileBatch batch) const;

private:
    ModelConfig config_;
    std::vector<std::size_t> inputs_;  // schema indices
    std::vector<ChannelGroup> groups_;
    std::size_t grid_ = 0, input_dim_ = 0;
    std::size_t pixel_channels_ = 0, tile_channels_ = 0;
};

}  // namespace tttlab
