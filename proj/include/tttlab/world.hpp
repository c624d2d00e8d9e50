#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "tttlab/schema.hpp"
#include "tttlab/splits.hpp"

namespace tttlab {

// Settings for the synthetic multimodal world.
//
// A smooth latent field over (lon, lat) drives the label and most task
// modalities. The input modalities observe the latent only through a sum
// with a second, spatially autocorrelated nuisance field, so reconstruction
// targets carry label information the encoder cannot see directly. Tiles
// inside the held-out region have their latent shifted by region_shift.
struct WorldConfig {
    std::size_t tiles = 1000;
    std::size_t tile_size = 16;
    TaskSpec task{TaskType::regression_tile, 0};
    double missing_rate = 0.1;     // per tile and non-input modality
    double region_shift = 1.0;     // latent offset inside the region
    double geo_nuisance = 0.6;     // amplitude of the nuisance field in the inputs
    double tile_noise = 0.35;      // non-spatial part of the tile latent
    double label_noise = 0.1;      // in latent units
    Polygon region = default_region();
    std::vector<std::string> input_modalities{"sentinel2"};

    void validate() const;
};

nlohmann::json world_config_to_json(const WorldConfig& config);
WorldConfig world_config_from_json(const nlohmann::json& j);

Dataset generate_world(const WorldConfig& config, std::uint64_t seed);

// Preset used by the experiments and the acceptance suite.
WorldConfig bundled_world_config();
inline constexpr std::uint64_t kBundledWorldSeed = 20240611;

}  // namespace tttlab
