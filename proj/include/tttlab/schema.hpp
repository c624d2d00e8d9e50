#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace tttlab {

enum class Scale { pixel, tile };
enum class Kind { continuous, categorical };

// Declarative description of one modality.
struct ModalitySchema {
    std::string name;
    Scale scale = Scale::pixel;
    Kind kind = Kind::continuous;
    std::size_t bands = 1;
    std::size_t classes = 0;          // K, categorical only
    std::optional<double> no_data;    // sentinel; categorical sentinel is K
    bool normalized = true;           // continuous bands centred with train statistics

    // Decoder output channels: bands for continuous, K logits for categorical.
    std::size_t channels() const { return kind == Kind::categorical ? classes : bands; }
    // Values stored per tile for this modality.
    std::size_t value_count(std::size_t tile_size) const {
        return scale == Scale::pixel ? bands * tile_size * tile_size : bands;
    }
    bool is_no_data(double v) const { return no_data && v == *no_data; }

    void validate() const;

    friend bool operator==(const ModalitySchema&, const ModalitySchema&) = default;
};

using Schema = std::vector<ModalitySchema>;

// Twelve modalities with band counts and no-data sentinels of the benchmark;
// geolocation and the image date are carried in their cyclic encodings.
Schema default_schema();

std::size_t schema_index(const Schema& schema, std::string_view name);
void validate_schema(const Schema& schema);

// 64-bit digest of the schema's JSON form; checkpoints record it so that
// artifacts built against a different schema are rejected.
std::uint64_t schema_hash(const Schema& schema);

enum class TaskType { regression_pixel, regression_tile, multilabel };

struct TaskSpec {
    TaskType type = TaskType::regression_tile;
    std::size_t classes = 0;  // multilabel only

    bool is_regression() const { return type != TaskType::multilabel; }
    // Output width of the tile-level head (1 for regression, C for multilabel).
    std::size_t output_dim() const { return type == TaskType::multilabel ? classes : 1; }
    friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

std::string to_string(TaskType type);
TaskType parse_task_type(std::string_view text);

// Sentinel for unlabelled pixels of a pixel-level regression target.
inline constexpr double kLabelNoData = -9999.0;

struct LonLat {
    double lon = 0.0;
    double lat = 0.0;
    friend bool operator==(const LonLat&, const LonLat&) = default;
};

enum class LabelKind { none, scalar, grid, multilabel };

struct Label {
    LabelKind kind = LabelKind::none;
    std::vector<double> values;  // 1, H*W (kLabelNoData where unlabelled), or C bits
    friend bool operator==(const Label&, const Label&) = default;
};

struct Tile {
    std::int64_t id = 0;
    LonLat lonlat;
    int month = 1;
    // Per schema entry; an empty vector means the modality is missing.
    std::vector<std::vector<double>> modalities;
    Label label;

    bool is_missing(std::size_t modality) const { return modalities.at(modality).empty(); }
    std::vector<std::string> missing(const Schema& schema) const;

    friend bool operator==(const Tile&, const Tile&) = default;
};

struct Dataset {
    Schema schema;
    TaskSpec task;
    std::size_t tile_size = 16;
    std::uint64_t seed = 0;
    std::vector<Tile> tiles;

    // Throws DataError when a tile breaks the schema contract.
    void validate() const;
    // Position of the tile with this id.
    std::size_t position_of(std::int64_t id) const;
};

// [cos(pi*month/6), sin(pi*month/6)]
std::array<double, 2> month_encoding(int month);
// [cos(lon), sin(lon), cos(lat), sin(lat)] with degrees converted to radians
std::array<double, 4> geolocation_encoding(LonLat p);

nlohmann::json schema_to_json(const Schema& schema);
Schema schema_from_json(const nlohmann::json& j);

}  // namespace tttlab
