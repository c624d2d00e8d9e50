#include "tttlab/splits.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "tttlab/errors.hpp"
#include "tttlab/rng.hpp"

namespace tttlab {
namespace {

bool on_segment(LonLat p, LonLat a, LonLat b) {
    const double cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
    const double scale = std::max({std::abs(b.lon - a.lon), std::abs(b.lat - a.lat), 1.0});
    if (std::abs(cross) > 1e-12 * scale * scale) return false;
    return p.lon >= std::min(a.lon, b.lon) && p.lon <= std::max(a.lon, b.lon) &&
           p.lat >= std::min(a.lat, b.lat) && p.lat <= std::max(a.lat, b.lat);
}

std::vector<std::int64_t> sorted_copy(std::vector<std::int64_t> v) {
    std::sort(v.begin(), v.end());
    return v;
}

}  // namespace

bool point_in_polygon(LonLat p, const Polygon& polygon) {
    if (polygon.size() < 3) throw UsageError("degenerate polygon: fewer than three vertices");
    bool inside = false;
    for (std::size_t i = 0, j = polygon.size() - 1; i < polygon.size(); j = i++) {
        const LonLat a = polygon[i], b = polygon[j];
        if (on_segment(p, a, b)) return true;
        if ((a.lat > p.lat) != (b.lat > p.lat)) {
            const double x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
            if (p.lon < x) inside = !inside;
        }
    }
    return inside;
}

Polygon default_region() {
    // Coarse continental outline, counter-clockwise.
    return {{-18.0, 14.0}, {-17.0, 22.0}, {-10.0, 30.0}, {-6.0, 36.0}, {10.0, 37.5}, {32.0, 32.0},
            {35.0, 28.0},  {43.0, 12.0},  {52.0, 11.0},  {40.0, -5.0}, {40.0, -15.0}, {33.0, -28.0},
            {20.0, -35.0}, {17.0, -29.0}, {12.0, -17.0}, {9.0, -1.0},  {9.0, 4.0},   {-8.0, 4.0}};
}

const std::vector<std::int64_t>& SplitSet::train(int percent) const {
    switch (percent) {
        case 100: return train100;
        case 50: return train50;
        case 5: return train5;
        default: throw UsageError("training subset must be 5, 50 or 100, got " + std::to_string(percent));
    }
}

namespace {

// floor(ratio * n) without losing a whole tile to representation error,
// e.g. 0.7 * 90 evaluates to 62.999...
std::size_t floor_cut(double ratio, double n) {
    return static_cast<std::size_t>(std::floor(ratio * n * (1.0 + 1e-12)));
}

}  // namespace

SplitSet make_splits(const Dataset& dataset, const Polygon& region, SplitRatios ratios,
                     std::uint64_t seed) {
    if (dataset.tiles.empty()) throw DataError("cannot split an empty dataset");
    if (ratios.train <= 0 || ratios.validation < 0 || ratios.test < 0 ||
        std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9) {
        throw UsageError("split ratios must be non-negative and sum to 1");
    }
    SplitSet s;
    s.region = region;
    s.seed = seed;

    std::vector<std::pair<std::int64_t, LonLat>> tiles;
    for (const Tile& t : dataset.tiles) tiles.emplace_back(t.id, t.lonlat);
    std::sort(tiles.begin(), tiles.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

    std::vector<std::int64_t> rest;
    for (const auto& [id, p] : tiles) {
        if (point_in_polygon(p, region)) {
            s.geo_test.push_back(id);
        } else {
            rest.push_back(id);
        }
    }
    if (rest.empty()) throw DataError("no tiles outside the held-out region");

    Rng rng(derive_seed(seed, "split"));
    rng.shuffle(rest);
    const auto n = static_cast<double>(rest.size());
    const auto cut_train = floor_cut(ratios.train, n);
    const auto cut_val = floor_cut(ratios.train + ratios.validation, n);
    if (cut_train == 0) throw DataError("too few tiles outside the region for a training split");
    s.train100.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(cut_train));
    s.validation.assign(rest.begin() + static_cast<std::ptrdiff_t>(cut_train),
                        rest.begin() + static_cast<std::ptrdiff_t>(cut_val));
    s.random_test.assign(rest.begin() + static_cast<std::ptrdiff_t>(cut_val), rest.end());

    // One shuffled order of train100; both subsets are prefixes of it.
    std::vector<std::int64_t> order = s.train100;
    Rng sub_rng(derive_seed(seed, "subsets"));
    sub_rng.shuffle(order);
    const auto n50 = floor_cut(0.50, static_cast<double>(order.size()));
    const auto n5 = floor_cut(0.05, static_cast<double>(order.size()));
    s.train50.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n50));
    s.train5.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n5));
    return s;
}

std::string check_split_invariants(const SplitSet& s, const Dataset& dataset) {
    auto as_set = [](const std::vector<std::int64_t>& v) { return std::set<std::int64_t>(v.begin(), v.end()); };
    const auto t100 = as_set(s.train100), t50 = as_set(s.train50), t5 = as_set(s.train5);
    const auto val = as_set(s.validation), rnd = as_set(s.random_test), geo = as_set(s.geo_test);
    if (t100.size() != s.train100.size() || val.size() != s.validation.size() ||
        rnd.size() != s.random_test.size() || geo.size() != s.geo_test.size()) {
        return "a split lists the same tile twice";
    }
    if (!std::includes(t50.begin(), t50.end(), t5.begin(), t5.end())) return "train5 is not a subset of train50";
    if (!std::includes(t100.begin(), t100.end(), t50.begin(), t50.end())) return "train50 is not a subset of train100";
    std::set<std::int64_t> all;
    for (const auto* part : {&t100, &val, &rnd, &geo}) {
        for (auto id : *part) {
            if (!all.insert(id).second) return "tile " + std::to_string(id) + " appears in two splits";
        }
    }
    for (const Tile& t : dataset.tiles) {
        const bool in_region = point_in_polygon(t.lonlat, s.region);
        if (in_region != geo.count(t.id)) return "tile " + std::to_string(t.id) + " is on the wrong side of the region";
        if (!all.count(t.id)) return "tile " + std::to_string(t.id) + " is in no split";
    }
    if (all.size() != dataset.tiles.size()) return "splits reference unknown tiles";
    return {};
}

nlohmann::json splits_to_json(const SplitSet& s) {
    nlohmann::json region = nlohmann::json::array();
    for (const auto& p : s.region) region.push_back({p.lon, p.lat});
    return {{"seed", s.seed},
            {"region", region},
            {"train100", s.train100},
            {"train50", s.train50},
            {"train5", s.train5},
            {"validation", s.validation},
            {"random_test", s.random_test},
            {"geo_test", s.geo_test}};
}

SplitSet splits_from_json(const nlohmann::json& j) {
    try {
        SplitSet s;
        s.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& p : j.at("region")) s.region.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        s.train100 = j.at("train100").get<std::vector<std::int64_t>>();
        s.train50 = j.at("train50").get<std::vector<std::int64_t>>();
        s.train5 = j.at("train5").get<std::vector<std::int64_t>>();
        s.validation = j.at("validation").get<std::vector<std::int64_t>>();
        s.random_test = j.at("random_test").get<std::vector<std::int64_t>>();
        s.geo_test = j.at("geo_test").get<std::vector<std::int64_t>>();
        return s;
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("malformed split file: ") + ex.what());
    }
}

// ------------------------------------------------------------ partitioning

namespace {

struct PartitionState {
    std::size_t batch_size;
    std::size_t max_leaf;  // batch_size + remainder
    std::vector<GeoBatch> out;
};

void partition_node(std::vector<GeoPoint>& pts, std::size_t first, std::size_t last, BBox rect,
                    PartitionState& st) {
    const std::size_t n = last - first;
    if (n <= st.max_leaf) {
        GeoBatch batch;
        batch.bbox = rect;
        for (std::size_t i = first; i < last; ++i) batch.tile_ids.push_back(pts[i].id);
        st.out.push_back(std::move(batch));
        return;
    }
    const bool split_lon = (rect.lon_max - rect.lon_min) >= (rect.lat_max - rect.lat_min);
    auto key = [split_lon](const GeoPoint& p) { return split_lon ? p.lonlat.lon : p.lonlat.lat; };
    std::sort(pts.begin() + static_cast<std::ptrdiff_t>(first), pts.begin() + static_cast<std::ptrdiff_t>(last),
              [&](const GeoPoint& a, const GeoPoint& b) {
                  const double ka = key(a), kb = key(b);
                  return ka != kb ? ka < kb : a.id < b.id;
              });
    const std::size_t left = std::max(st.batch_size, (n / (2 * st.batch_size)) * st.batch_size);
    const std::size_t mid = first + left;
    const double cut = 0.5 * (key(pts[mid - 1]) + key(pts[mid]));
    BBox lo = rect, hi = rect;
    if (split_lon) {
        lo.lon_max = cut;
        hi.lon_min = cut;
    } else {
        lo.lat_max = cut;
        hi.lat_min = cut;
    }
    partition_node(pts, first, mid, lo, st);
    partition_node(pts, mid, last, hi, st);
}

}  // namespace

std::vector<GeoBatch> geographic_partition(std::span<const GeoPoint> points, std::size_t batch_size) {
    if (batch_size == 0) throw UsageError("batch size must be at least 1");
    if (points.size() < batch_size) {
        throw UsageError("geographic partition needs at least " + std::to_string(batch_size) + " tiles, got " +
                         std::to_string(points.size()));
    }
    std::vector<GeoPoint> pts(points.begin(), points.end());
    BBox root{pts[0].lonlat.lon, pts[0].lonlat.lat, pts[0].lonlat.lon, pts[0].lonlat.lat};
    for (const auto& p : pts) {
        root.lon_min = std::min(root.lon_min, p.lonlat.lon);
        root.lon_max = std::max(root.lon_max, p.lonlat.lon);
        root.lat_min = std::min(root.lat_min, p.lonlat.lat);
        root.lat_max = std::max(root.lat_max, p.lonlat.lat);
    }
    PartitionState st{batch_size, batch_size + pts.size() % batch_size, {}};
    partition_node(pts, 0, pts.size(), root, st);
    return std::move(st.out);
}

std::vector<std::vector<std::int64_t>> random_partition(std::span<const std::int64_t> ids,
                                                        std::size_t batch_size, std::uint64_t seed) {
    if (batch_size == 0) throw UsageError("batch size must be at least 1");
    if (ids.size() < batch_size) {
        throw UsageError("random partition needs at least " + std::to_string(batch_size) + " tiles, got " +
                         std::to_string(ids.size()));
    }
    std::vector<std::int64_t> order = sorted_copy({ids.begin(), ids.end()});
    Rng rng(seed);
    rng.shuffle(order);
    const std::size_t batches = order.size() / batch_size;
    std::vector<std::vector<std::int64_t>> out(batches);
    for (std::size_t b = 0; b < batches; ++b) {
        const std::size_t begin = b * batch_size;
        const std::size_t end = (b + 1 == batches) ? order.size() : begin + batch_size;
        out[b].assign(order.begin() + static_cast<std::ptrdiff_t>(begin),
                      order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

}  // namespace tttlab
