#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>

#include "json.hpp"
#include "tttlab/schema.hpp"

namespace tttlab {

// Dataset container:
//   8 bytes   magic "TTTLABDS"
//   8 bytes   manifest length L, unsigned little-endian
//   L bytes   manifest, UTF-8 JSON (schema, task, tile count, seed,
//             record layout, per-tile metadata, optional extras)
//   N records one per tile in manifest order, each record_doubles
//             little-endian IEEE-754 binary64 values
// A record holds lon, lat, then every modality in schema order (band-major,
// row-major), then the label. Missing modalities are filled with their
// no-data sentinel and listed in the tile's "missing" array.
void write_dataset(const std::filesystem::path& path, const Dataset& dataset,
                   const nlohmann::json& extras = nlohmann::json::object());

struct LoadedDataset {
    Dataset dataset;
    nlohmann::json manifest;
};

LoadedDataset read_dataset(const std::filesystem::path& path);

// Shared by the dataset and checkpoint containers: 8-byte magic, manifest
// length as little-endian u64, manifest JSON.
void write_container_header(std::ostream& os, std::string_view magic, const nlohmann::json& manifest);
nlohmann::json read_container_header(std::istream& is, std::string_view magic, const std::string& what);

void write_le_doubles(std::ostream& os, std::span<const double> values);
void read_le_doubles(std::istream& is, std::span<double> values);

}  // namespace tttlab
