#pragma once

#include <string_view>
#include <vector>

#include "tttlab/splits.hpp"

namespace tttlab {

// Parses a FeatureCollection of Point features with integer ids, in
// document order. Throws DataError for malformed documents, non-point
// geometries, and duplicate ids.
std::vector<GeoPoint> ingest_points(std::string_view geojson);

}  // namespace tttlab
