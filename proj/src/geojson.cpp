#include "tttlab/geojson.hpp"

#include <unordered_set>

#include "json.hpp"
#include "tttlab/errors.hpp"

namespace tttlab {

std::vector<GeoPoint> ingest_points(std::string_view geojson) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(geojson);
    } catch (const nlohmann::json::parse_error& ex) {
        throw DataError(std::string("malformed GeoJSON: ") + ex.what());
    }
    if (!doc.is_object() || doc.value("type", "") != "FeatureCollection") {
        throw DataError("GeoJSON root must be a FeatureCollection");
    }
    if (!doc.contains("features") || !doc["features"].is_array()) {
        throw DataError("FeatureCollection without a features array");
    }
    std::vector<GeoPoint> out;
    std::unordered_set<std::int64_t> seen;
    for (const auto& f : doc["features"]) {
        if (!f.is_object() || f.value("type", "") != "Feature") throw DataError("feature entry is not a Feature");
        if (!f.contains("id") || !f["id"].is_number_integer()) throw DataError("feature without an integer id");
        const auto id = f["id"].get<std::int64_t>();
        if (!f.contains("geometry") || !f["geometry"].is_object()) {
            throw DataError("feature " + std::to_string(id) + " has no geometry");
        }
        const auto& g = f["geometry"];
        if (g.value("type", "") != "Point") {
            throw DataError("feature " + std::to_string(id) + " is not a Point");
        }
        const auto& c = g.contains("coordinates") ? g["coordinates"] : nlohmann::json();
        if (!c.is_array() || c.size() < 2 || !c[0].is_number() || !c[1].is_number()) {
            throw DataError("feature " + std::to_string(id) + " has malformed coordinates");
        }
        const LonLat p{c[0].get<double>(), c[1].get<double>()};
        if (p.lon < -180 || p.lon > 180 || p.lat < -90 || p.lat > 90) {
            throw DataError("feature " + std::to_string(id) + " lies outside lon/lat bounds");
        }
        if (!seen.insert(id).second) throw DataError("duplicate feature id " + std::to_string(id));
        out.push_back({id, p});
    }
    return out;
}

}  // namespace tttlab
