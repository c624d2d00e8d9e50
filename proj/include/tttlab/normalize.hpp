#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "tttlab/schema.hpp"

namespace tttlab {

struct BandStats {
    double mean = 0.0;
    double std = 1.0;  // population standard deviation
    friend bool operator==(const BandStats&, const BandStats&) = default;
};

// Per-band statistics of the normalized continuous modalities, computed on
// training tiles with no-data values masked out. Modalities that are not
// normalized have an empty entry. Regression labels get their own entry.
struct NormStats {
    std::vector<std::vector<BandStats>> modalities;
    std::optional<BandStats> label;

    friend bool operator==(const NormStats&, const NormStats&) = default;
};

NormStats compute_norm_stats(const Dataset& dataset, std::span<const std::int64_t> train_ids);

nlohmann::json norm_stats_to_json(const NormStats& stats, const Schema& schema);
NormStats norm_stats_from_json(const nlohmann::json& j, const Schema& schema);

// Model-ready tile: continuous values centred, no-data replaced by 0 and
// recorded in a validity mask, categorical classes passed through.
struct NormalizedTile {
    std::int64_t id = 0;
    LonLat lonlat;
    std::vector<std::vector<double>> values;   // per modality; empty if missing
    std::vector<std::vector<std::uint8_t>> valid;
    std::vector<std::size_t> valid_count;      // valid entries per modality
    LabelKind label_kind = LabelKind::none;
    std::vector<double> label;                 // normalized for regression
    std::vector<std::uint8_t> label_valid;

    // Present on the tile with at least one valid value.
    bool has(std::size_t modality) const { return valid_count.at(modality) > 0; }
};

NormalizedTile normalize_tile(const Tile& tile, const Schema& schema, const NormStats& stats);
std::vector<NormalizedTile> normalize_dataset(const Dataset& dataset, const NormStats& stats);

// Inverse of normalize_tile; masked positions get the modality's sentinel.
Tile denormalize_tile(const NormalizedTile& tile, const Schema& schema, const NormStats& stats);

double denormalize_label(double value, const NormStats& stats);

}  // namespace tttlab
