#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "tttlab/normalize.hpp"
#include "tttlab/schema.hpp"

namespace tttlab {

using Polygon = std::vector<LonLat>;

// Even-odd ray casting; points on an edge or vertex count as inside.
// Throws UsageError for polygons with fewer than three vertices.
bool point_in_polygon(LonLat p, const Polygon& polygon);

// Held-out region used by default for the geographic test split.
Polygon default_region();

struct SplitRatios {
    double train = 0.70;
    double validation = 0.15;
    double test = 0.15;
};

// Tile ids per split. train5 is a subset of train50, which is a subset of
// train100; train100, validation and random_test partition the tiles
// outside the region; geo_test holds exactly the tiles inside it.
struct SplitSet {
    std::vector<std::int64_t> train100, train50, train5;
    std::vector<std::int64_t> validation, random_test, geo_test;
    Polygon region;
    std::uint64_t seed = 0;

    const std::vector<std::int64_t>& train(int percent) const;
    friend bool operator==(const SplitSet&, const SplitSet&) = default;
};

SplitSet make_splits(const Dataset& dataset, const Polygon& region, SplitRatios ratios,
                     std::uint64_t seed);

// Checks the nesting and disjointness contracts; returns an empty string
// when they hold, otherwise a description of the first violation.
std::string check_split_invariants(const SplitSet& splits, const Dataset& dataset);

nlohmann::json splits_to_json(const SplitSet& splits);
SplitSet splits_from_json(const nlohmann::json& j);

struct BBox {
    double lon_min = 0, lat_min = 0, lon_max = 0, lat_max = 0;
    bool contains(LonLat p) const {
        return p.lon >= lon_min && p.lon <= lon_max && p.lat >= lat_min && p.lat <= lat_max;
    }
    friend bool operator==(const BBox&, const BBox&) = default;
};

struct GeoPoint {
    std::int64_t id = 0;
    LonLat lonlat;
};

struct GeoBatch {
    std::vector<std::int64_t> tile_ids;
    BBox bbox;
};

// Recursive k-d style partition into geographically contiguous batches of
// batch_size tiles; the last leaf in recursion order also takes the
// N mod batch_size remainder.
std::vector<GeoBatch> geographic_partition(std::span<const GeoPoint> points, std::size_t batch_size);

// Seeded shuffle cut into consecutive batches; the last absorbs the remainder.
std::vector<std::vector<std::int64_t>> random_partition(std::span<const std::int64_t> ids,
                                                        std::size_t batch_size, std::uint64_t seed);

}  // namespace tttlab
