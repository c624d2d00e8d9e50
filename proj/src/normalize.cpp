#include "tttlab/normalize.hpp"

#include <algorithm>
#include <cmath>

#include "tttlab/errors.hpp"

namespace tttlab {
namespace {

struct Accumulator {
    std::vector<double> values;

    BandStats finish(const std::string& what) const {
        if (values.empty()) throw DataError(what + ": every training value is no-data");
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        var /= static_cast<double>(values.size());
        const double sd = std::sqrt(var);
        if (!(sd > 0.0)) throw DataError(what + ": zero variance over training tiles");
        return {mean, sd};
    }
};

}  // namespace

NormStats compute_norm_stats(const Dataset& dataset, std::span<const std::int64_t> train_ids) {
    if (train_ids.empty()) throw DataError("normalization statistics need training tiles");
    // Aggregate in id order so the result does not depend on how ids were listed.
    std::vector<std::int64_t> ids(train_ids.begin(), train_ids.end());
    std::sort(ids.begin(), ids.end());
    std::vector<const Tile*> tiles;
    tiles.reserve(ids.size());
    for (std::int64_t id : ids) tiles.push_back(&dataset.tiles.at(dataset.position_of(id)));

    const std::size_t hw = dataset.tile_size * dataset.tile_size;
    NormStats stats;
    stats.modalities.resize(dataset.schema.size());
    for (std::size_t m = 0; m < dataset.schema.size(); ++m) {
        const auto& ms = dataset.schema[m];
        if (ms.kind != Kind::continuous || !ms.normalized) continue;
        const std::size_t per_band = ms.scale == Scale::pixel ? hw : 1;
        for (std::size_t b = 0; b < ms.bands; ++b) {
            Accumulator acc;
            for (const Tile* t : tiles) {
                if (t->is_missing(m)) continue;
                const auto& v = t->modalities[m];
                for (std::size_t i = 0; i < per_band; ++i) {
                    const double x = v[b * per_band + i];
                    if (!ms.is_no_data(x)) acc.values.push_back(x);
                }
            }
            stats.modalities[m].push_back(acc.finish(ms.name + " band " + std::to_string(b)));
        }
    }
    if (dataset.task.is_regression()) {
        Accumulator acc;
        for (const Tile* t : tiles) {
            for (double y : t->label.values) {
                if (y != kLabelNoData) acc.values.push_back(y);
            }
        }
        if (!acc.values.empty()) stats.label = acc.finish("label");
    }
    return stats;
}

nlohmann::json norm_stats_to_json(const NormStats& stats, const Schema& schema) {
    nlohmann::json j;
    j["std_convention"] = "population";
    nlohmann::json mods = nlohmann::json::object();
    for (std::size_t m = 0; m < schema.size(); ++m) {
        if (stats.modalities.at(m).empty()) continue;
        nlohmann::json bands = nlohmann::json::array();
        for (const auto& b : stats.modalities[m]) bands.push_back({{"mean", b.mean}, {"std", b.std}});
        mods[schema[m].name] = std::move(bands);
    }
    j["modalities"] = std::move(mods);
    j["label"] = stats.label ? nlohmann::json{{"mean", stats.label->mean}, {"std", stats.label->std}}
                             : nlohmann::json(nullptr);
    return j;
}

NormStats norm_stats_from_json(const nlohmann::json& j, const Schema& schema) {
    try {
        NormStats stats;
        stats.modalities.resize(schema.size());
        for (const auto& [name, bands] : j.at("modalities").items()) {
            auto& out = stats.modalities.at(schema_index(schema, name));
            for (const auto& b : bands) out.push_back({b.at("mean").get<double>(), b.at("std").get<double>()});
            if (out.size() != schema[schema_index(schema, name)].bands) {
                throw DataError("normalization stats for '" + name + "' have the wrong band count");
            }
        }
        if (!j.at("label").is_null()) {
            stats.label = BandStats{j["label"].at("mean").get<double>(), j["label"].at("std").get<double>()};
        }
        return stats;
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("malformed normalization stats: ") + ex.what());
    }
}

NormalizedTile normalize_tile(const Tile& tile, const Schema& schema, const NormStats& stats) {
    NormalizedTile out;
    out.id = tile.id;
    out.lonlat = tile.lonlat;
    out.values.resize(schema.size());
    out.valid.resize(schema.size());
    out.valid_count.assign(schema.size(), 0);
    for (std::size_t m = 0; m < schema.size(); ++m) {
        if (tile.is_missing(m)) continue;
        const auto& ms = schema[m];
        const auto& src = tile.modalities[m];
        auto& dst = out.values[m];
        auto& valid = out.valid[m];
        dst.resize(src.size());
        valid.resize(src.size());
        const bool centre = ms.kind == Kind::continuous && ms.normalized;
        if (centre && stats.modalities.at(m).size() != ms.bands) {
            throw DataError("normalization stats do not cover modality '" + ms.name + "'");
        }
        const std::size_t per_band = src.size() / ms.bands;
        for (std::size_t i = 0; i < src.size(); ++i) {
            if (ms.is_no_data(src[i])) {
                dst[i] = ms.kind == Kind::categorical ? src[i] : 0.0;
                continue;
            }
            valid[i] = 1;
            ++out.valid_count[m];
            if (centre) {
                const BandStats& b = stats.modalities[m][i / per_band];
                dst[i] = (src[i] - b.mean) / b.std;
            } else {
                dst[i] = src[i];
            }
        }
    }
    out.label_kind = tile.label.kind;
    out.label = tile.label.values;
    out.label_valid.assign(out.label.size(), 1);
    if (tile.label.kind == LabelKind::scalar || tile.label.kind == LabelKind::grid) {
        const BandStats b = stats.label.value_or(BandStats{});
        for (std::size_t i = 0; i < out.label.size(); ++i) {
            if (out.label[i] == kLabelNoData) {
                out.label[i] = 0.0;
                out.label_valid[i] = 0;
            } else {
                out.label[i] = (out.label[i] - b.mean) / b.std;
            }
        }
    }
    return out;
}

std::vector<NormalizedTile> normalize_dataset(const Dataset& dataset, const NormStats& stats) {
    std::vector<NormalizedTile> out;
    out.reserve(dataset.tiles.size());
    for (const Tile& t : dataset.tiles) out.push_back(normalize_tile(t, dataset.schema, stats));
    return out;
}

Tile denormalize_tile(const NormalizedTile& tile, const Schema& schema, const NormStats& stats) {
    Tile out;
    out.id = tile.id;
    out.lonlat = tile.lonlat;
    out.modalities.resize(schema.size());
    for (std::size_t m = 0; m < schema.size(); ++m) {
        const auto& src = tile.values[m];
        if (src.empty()) continue;
        const auto& ms = schema[m];
        const bool centre = ms.kind == Kind::continuous && ms.normalized;
        const std::size_t per_band = src.size() / ms.bands;
        auto& dst = out.modalities[m];
        dst.resize(src.size());
        for (std::size_t i = 0; i < src.size(); ++i) {
            if (!tile.valid[m][i]) {
                dst[i] = ms.no_data.value_or(0.0);
            } else if (centre) {
                const BandStats& b = stats.modalities[m][i / per_band];
                dst[i] = src[i] * b.std + b.mean;
            } else {
                dst[i] = src[i];
            }
        }
    }
    out.label.kind = tile.label_kind;
    out.label.values = tile.label;
    if (tile.label_kind == LabelKind::scalar || tile.label_kind == LabelKind::grid) {
        for (std::size_t i = 0; i < out.label.values.size(); ++i) {
            out.label.values[i] = tile.label_valid[i] ? denormalize_label(tile.label[i], stats) : kLabelNoData;
        }
    }
    return out;
}

double denormalize_label(double value, const NormStats& stats) {
    const BandStats b = stats.label.value_or(BandStats{});
    return value * b.std + b.mean;
}

}  // namespace tttlab
