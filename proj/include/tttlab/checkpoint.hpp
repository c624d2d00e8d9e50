#pragma once

// Checkpoint container:
//   8 bytes   magic "TTTLABCK"
//   8 bytes   manifest length L, unsigned little-endian
//   L bytes   manifest JSON: model config, schema hash, normalization
//             statistics, parameter layout, epoch, validation metric, seed
//   then the encoder, task and modality parameters as little-endian binary64

#include <cstdint>
#include <filesystem>

#include "json.hpp"
#include "tttlab/model.hpp"
#include "tttlab/normalize.hpp"

namespace tttlab {

struct Checkpoint {
    ModelConfig config;
    ModelParams params;
    NormStats norm;
    std::size_t epoch = 0;
    double validation_metric = 0.0;
    std::uint64_t seed = 0;
    nlohmann::json extras = nlohmann::json::object();
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
// Throws DataError on a malformed file or a parameter layout that does not
// match the stored model config.
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace tttlab
