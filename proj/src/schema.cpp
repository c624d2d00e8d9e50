#include "tttlab/schema.hpp"

#include <cmath>
#include <numbers>
#include <unordered_set>

#include "tttlab/errors.hpp"
#include "tttlab/rng.hpp"

namespace tttlab {

void ModalitySchema::validate() const {
    if (name.empty()) throw DataError("modality without a name");
    if (bands == 0) throw DataError("modality '" + name + "' has no bands");
    if (kind == Kind::categorical) {
        if (bands != 1) throw DataError("categorical modality '" + name + "' must have one band");
        if (classes < 2) throw DataError("categorical modality '" + name + "' needs K >= 2");
        if (!no_data || *no_data != static_cast<double>(classes)) {
            throw DataError("categorical modality '" + name + "' must use class index K as no-data");
        }
        if (normalized) throw DataError("categorical modality '" + name + "' cannot be normalized");
    }
}

Schema default_schema() {
    auto cont = [](std::string name, Scale scale, std::size_t bands, std::optional<double> nd,
                   bool normalized = true) {
        ModalitySchema m;
        m.name = std::move(name);
        m.scale = scale;
        m.kind = Kind::continuous;
        m.bands = bands;
        m.no_data = nd;
        m.normalized = normalized;
        return m;
    };
    auto cat = [](std::string name, Scale scale, std::size_t classes) {
        ModalitySchema m;
        m.name = std::move(name);
        m.scale = scale;
        m.kind = Kind::categorical;
        m.bands = 1;
        m.classes = classes;
        m.no_data = static_cast<double>(classes);
        m.normalized = false;
        return m;
    };
    return {
        cont("sentinel2", Scale::pixel, 12, 65535.0),
        cont("sentinel1", Scale::pixel, 8, -9999.0),
        cont("aster_gdem", Scale::pixel, 2, -9999.0),
        cont("eth_canopy_height", Scale::pixel, 2, 255.0),
        cat("dynamic_world", Scale::pixel, 9),
        cat("esa_worldcover", Scale::pixel, 11),
        cont("precipitation", Scale::tile, 3, -9999.0),
        cont("temperature", Scale::tile, 9, -9999.0),
        cont("geolocation", Scale::tile, 4, std::nullopt, false),
        cont("sentinel2_date", Scale::tile, 2, std::nullopt, false),
        cat("biome", Scale::tile, 14),
        cat("ecoregion", Scale::tile, 846),
    };
}

std::size_t schema_index(const Schema& schema, std::string_view name) {
    for (std::size_t i = 0; i < schema.size(); ++i) {
        if (schema[i].name == name) return i;
    }
    throw DataError("unknown modality '" + std::string(name) + "'");
}

void validate_schema(const Schema& schema) {
    std::unordered_set<std::string> names;
    for (const auto& m : schema) {
        m.validate();
        if (!names.insert(m.name).second) throw DataError("duplicate modality '" + m.name + "'");
    }
}

std::uint64_t schema_hash(const Schema& schema) {
    const std::string text = schema_to_json(schema).dump();
    return fnv1a(text.data(), text.size());
}

std::string to_string(TaskType type) {
    switch (type) {
        case TaskType::regression_pixel: return "regression-pixel";
        case TaskType::regression_tile: return "regression-tile";
        case TaskType::multilabel: return "multilabel";
    }
    return "?";
}

TaskType parse_task_type(std::string_view text) {
    if (text == "regression-pixel") return TaskType::regression_pixel;
    if (text == "regression-tile") return TaskType::regression_tile;
    if (text == "multilabel") return TaskType::multilabel;
    throw UsageError("unknown task type '" + std::string(text) + "'");
}

std::vector<std::string> Tile::missing(const Schema& schema) const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < schema.size(); ++i) {
        if (is_missing(i)) out.push_back(schema[i].name);
    }
    return out;
}

void Dataset::validate() const {
    validate_schema(schema);
    if (tile_size == 0) throw DataError("tile size must be positive");
    std::unordered_set<std::int64_t> ids;
    for (const Tile& t : tiles) {
        const std::string where = "tile " + std::to_string(t.id);
        if (!ids.insert(t.id).second) throw DataError("duplicate tile id " + std::to_string(t.id));
        if (t.lonlat.lon < -180 || t.lonlat.lon > 180 || t.lonlat.lat < -90 || t.lonlat.lat > 90) {
            throw DataError(where + ": location out of range");
        }
        if (t.modalities.size() != schema.size()) throw DataError(where + ": modality count mismatch");
        for (std::size_t m = 0; m < schema.size(); ++m) {
            const auto& values = t.modalities[m];
            if (values.empty()) continue;
            const auto& ms = schema[m];
            if (values.size() != ms.value_count(tile_size)) {
                throw DataError(where + ": modality '" + ms.name + "' has wrong shape");
            }
            if (ms.kind == Kind::categorical) {
                for (double v : values) {
                    const bool valid_class = v >= 0 && v < static_cast<double>(ms.classes) && v == std::floor(v);
                    if (!valid_class && !ms.is_no_data(v)) {
                        throw DataError(where + ": modality '" + ms.name + "' has invalid class value");
                    }
                }
            }
        }
        const std::size_t expected = [&]() -> std::size_t {
            switch (t.label.kind) {
                case LabelKind::none: return 0;
                case LabelKind::scalar: return 1;
                case LabelKind::grid: return tile_size * tile_size;
                case LabelKind::multilabel: return task.classes;
            }
            return 0;
        }();
        if (t.label.values.size() != expected) throw DataError(where + ": label has wrong shape");
    }
}

std::size_t Dataset::position_of(std::int64_t id) const {
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        if (tiles[i].id == id) return i;
    }
    throw DataError("no tile with id " + std::to_string(id));
}

std::array<double, 2> month_encoding(int month) {
    if (month < 1 || month > 12) throw UsageError("month out of range: " + std::to_string(month));
    const double a = std::numbers::pi * month / 6.0;
    return {std::cos(a), std::sin(a)};
}

std::array<double, 4> geolocation_encoding(LonLat p) {
    constexpr double deg = std::numbers::pi / 180.0;
    return {std::cos(p.lon * deg), std::sin(p.lon * deg), std::cos(p.lat * deg), std::sin(p.lat * deg)};
}

nlohmann::json schema_to_json(const Schema& schema) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& m : schema) {
        nlohmann::json j;
        j["name"] = m.name;
        j["scale"] = m.scale == Scale::pixel ? "pixel" : "tile";
        j["kind"] = m.kind == Kind::continuous ? "continuous" : "categorical";
        j["bands"] = m.bands;
        j["classes"] = m.classes;
        j["no_data"] = m.no_data ? nlohmann::json(*m.no_data) : nlohmann::json(nullptr);
        j["normalized"] = m.normalized;
        arr.push_back(std::move(j));
    }
    return arr;
}

Schema schema_from_json(const nlohmann::json& j) {
    try {
        Schema schema;
        for (const auto& e : j) {
            ModalitySchema m;
            m.name = e.at("name").get<std::string>();
            const auto scale = e.at("scale").get<std::string>();
            if (scale != "pixel" && scale != "tile") throw DataError("bad scale '" + scale + "'");
            m.scale = scale == "pixel" ? Scale::pixel : Scale::tile;
            const auto kind = e.at("kind").get<std::string>();
            if (kind != "continuous" && kind != "categorical") throw DataError("bad kind '" + kind + "'");
            m.kind = kind == "continuous" ? Kind::continuous : Kind::categorical;
            m.bands = e.at("bands").get<std::size_t>();
            m.classes = e.at("classes").get<std::size_t>();
            if (!e.at("no_data").is_null()) m.no_data = e.at("no_data").get<double>();
            m.normalized = e.at("normalized").get<bool>();
            schema.push_back(std::move(m));
        }
        validate_schema(schema);
        return schema;
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("malformed schema: ") + ex.what());
    }
}

}  // namespace tttlab
