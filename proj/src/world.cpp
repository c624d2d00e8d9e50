#include "tttlab/world.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tttlab/errors.hpp"
#include "tttlab/rng.hpp"

namespace tttlab {
namespace {

constexpr double kLatMin = -58.0;
constexpr double kLatMax = 72.0;

struct Bump {
    LonLat centre;
    double amplitude;
    double width;
};

// Sum of Gaussian bumps over the lon/lat plane (longitude wraps), scaled
// to zero mean and unit variance over a regular grid.
class SmoothField {
public:
    SmoothField(Rng& rng, std::size_t bumps, double min_width, double max_width) {
        for (std::size_t k = 0; k < bumps; ++k) {
            Bump b;
            b.centre = {rng.uniform(-180.0, 180.0), rng.uniform(kLatMin, kLatMax)};
            b.amplitude = rng.uniform(-1.0, 1.0);
            b.width = rng.uniform(min_width, max_width);
            bumps_.push_back(b);
        }
        double s = 0.0, ss = 0.0;
        std::size_t n = 0;
        for (double lon = -180.0; lon < 180.0; lon += 3.0) {
            for (double lat = kLatMin; lat <= kLatMax; lat += 3.0) {
                const double v = raw({lon, lat});
                s += v;
                ss += v * v;
                ++n;
            }
        }
        mean_ = s / static_cast<double>(n);
        sd_ = std::sqrt(std::max(ss / static_cast<double>(n) - mean_ * mean_, 1e-12));
    }

    double operator()(LonLat p) const { return (raw(p) - mean_) / sd_; }

private:
    double raw(LonLat p) const {
        double v = 0.0;
        for (const auto& b : bumps_) {
            const double dlon = std::remainder(p.lon - b.centre.lon, 360.0);
            const double dlat = p.lat - b.centre.lat;
            v += b.amplitude * std::exp(-(dlon * dlon + dlat * dlat) / (2.0 * b.width * b.width));
        }
        return v;
    }

    std::vector<Bump> bumps_;
    double mean_ = 0.0;
    double sd_ = 1.0;
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double clamp_class(double v, std::size_t classes) {
    return std::clamp(std::floor(v), 0.0, static_cast<double>(classes - 1));
}

}  // namespace

void WorldConfig::validate() const {
    if (tiles == 0) throw UsageError("world needs at least one tile");
    if (tile_size < 2) throw UsageError("tile size must be at least 2");
    if (missing_rate < 0.0 || missing_rate >= 1.0) throw UsageError("missing rate must be in [0, 1)");
    if (task.type == TaskType::multilabel && task.classes < 1) {
        throw UsageError("multilabel task needs at least one class");
    }
    if (geo_nuisance < 0.0 || tile_noise < 0.0 || label_noise < 0.0) {
        throw UsageError("noise amplitudes must be non-negative");
    }
    if (region.size() < 3) throw UsageError("region polygon needs at least three vertices");
    if (input_modalities.empty()) throw UsageError("at least one input modality is required");
}

nlohmann::json world_config_to_json(const WorldConfig& c) {
    nlohmann::json region = nlohmann::json::array();
    for (const auto& p : c.region) region.push_back({p.lon, p.lat});
    return {{"tiles", c.tiles},
            {"tile_size", c.tile_size},
            {"task", to_string(c.task.type)},
            {"task_classes", c.task.classes},
            {"missing_rate", c.missing_rate},
            {"region_shift", c.region_shift},
            {"geo_nuisance", c.geo_nuisance},
            {"tile_noise", c.tile_noise},
            {"label_noise", c.label_noise},
            {"region", region},
            {"input_modalities", c.input_modalities}};
}

WorldConfig world_config_from_json(const nlohmann::json& j) {
    try {
        WorldConfig c;
        c.tiles = j.at("tiles").get<std::size_t>();
        c.tile_size = j.at("tile_size").get<std::size_t>();
        c.task.type = parse_task_type(j.at("task").get<std::string>());
        c.task.classes = j.at("task_classes").get<std::size_t>();
        c.missing_rate = j.at("missing_rate").get<double>();
        c.region_shift = j.at("region_shift").get<double>();
        c.geo_nuisance = j.at("geo_nuisance").get<double>();
        c.tile_noise = j.at("tile_noise").get<double>();
        c.label_noise = j.at("label_noise").get<double>();
        c.region.clear();
        for (const auto& p : j.at("region")) c.region.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        c.input_modalities = j.at("input_modalities").get<std::vector<std::string>>();
        return c;
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("malformed world config: ") + ex.what());
    }
}

WorldConfig bundled_world_config() {
    WorldConfig c;
    c.tiles = 1200;
    // strong enough that geographic batches share a visible input offset
    c.geo_nuisance = 1.0;
    return c;
}

Dataset generate_world(const WorldConfig& config, std::uint64_t seed) {
    config.validate();
    Dataset ds;
    ds.schema = default_schema();
    ds.task = config.task;
    ds.tile_size = config.tile_size;
    ds.seed = seed;

    const Schema& schema = ds.schema;
    std::vector<bool> is_input(schema.size(), false);
    for (const auto& name : config.input_modalities) {
        const std::size_t m = schema_index(schema, name);
        if (schema[m].kind != Kind::continuous) {
            throw UsageError("input modality '" + name + "' must be continuous");
        }
        is_input[m] = true;
    }

    Rng field_rng(derive_seed(seed, "fields"));
    const SmoothField latent(field_rng, 10, 18.0, 45.0);
    const SmoothField nuisance(field_rng, 24, 8.0, 18.0);

    // Per-band response coefficients shared by every tile.
    std::vector<double> s2_gain(12), s2_offset(12), s1_gain(8), s1_offset(8);
    for (std::size_t b = 0; b < 12; ++b) {
        s2_gain[b] = field_rng.uniform(0.6, 1.4);
        s2_offset[b] = field_rng.uniform(800.0, 2500.0);
    }
    for (std::size_t b = 0; b < 8; ++b) {
        s1_gain[b] = field_rng.uniform(0.6, 1.2);
        s1_offset[b] = field_rng.uniform(-20.0, -8.0);
    }
    std::vector<double> class_slope(config.task.classes), class_bias(config.task.classes);
    for (std::size_t c = 0; c < config.task.classes; ++c) {
        class_slope[c] = (field_rng.bernoulli(0.5) ? 1.0 : -1.0) * field_rng.uniform(1.0, 2.5);
        class_bias[c] = field_rng.uniform(-1.0, 1.0);
    }

    const std::size_t n = config.tile_size;
    const std::size_t hw = n * n;
    const double centre = 0.5 * static_cast<double>(n - 1);
    const std::size_t i_s2 = schema_index(schema, "sentinel2");
    const std::size_t i_s1 = schema_index(schema, "sentinel1");
    const std::size_t i_dem = schema_index(schema, "aster_gdem");
    const std::size_t i_gch = schema_index(schema, "eth_canopy_height");
    const std::size_t i_dw = schema_index(schema, "dynamic_world");
    const std::size_t i_wc = schema_index(schema, "esa_worldcover");
    const std::size_t i_pr = schema_index(schema, "precipitation");
    const std::size_t i_tm = schema_index(schema, "temperature");
    const std::size_t i_geo = schema_index(schema, "geolocation");
    const std::size_t i_date = schema_index(schema, "sentinel2_date");
    const std::size_t i_bio = schema_index(schema, "biome");
    const std::size_t i_eco = schema_index(schema, "ecoregion");

    Rng rng(derive_seed(seed, "tiles"));
    ds.tiles.reserve(config.tiles);
    for (std::size_t k = 0; k < config.tiles; ++k) {
        Tile t;
        t.id = static_cast<std::int64_t>(k);
        t.lonlat = {rng.uniform(-180.0, 180.0), rng.uniform(kLatMin, kLatMax)};
        t.month = 1 + static_cast<int>(rng.index(12));
        const bool inside = point_in_polygon(t.lonlat, config.region);

        const double z_tile = latent(t.lonlat) + config.tile_noise * rng.normal() +
                              (inside ? config.region_shift : 0.0);
        const double q_tile = config.geo_nuisance * nuisance(t.lonlat);
        const double ramp_amp = 0.25 * rng.normal();
        const double ramp_dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
        std::vector<double> z_pix(hw);
        for (std::size_t y = 0; y < n; ++y) {
            for (std::size_t x = 0; x < n; ++x) {
                const double u = (static_cast<double>(x) - centre) / static_cast<double>(n);
                const double v = (static_cast<double>(y) - centre) / static_cast<double>(n);
                z_pix[y * n + x] = z_tile + ramp_amp * (u * std::cos(ramp_dir) + v * std::sin(ramp_dir));
            }
        }
        const double hemisphere = t.lonlat.lat >= 0 ? 1.0 : -1.0;
        const double season = hemisphere * std::cos(std::numbers::pi * t.month / 6.0);
        const double season_prev = hemisphere * std::cos(std::numbers::pi * (t.month - 1) / 6.0);

        t.modalities.assign(schema.size(), {});
        auto& s2 = t.modalities[i_s2];
        s2.resize(12 * hw);
        for (std::size_t b = 0; b < 12; ++b)
            for (std::size_t p = 0; p < hw; ++p)
                s2[b * hw + p] = std::clamp(
                    s2_offset[b] + 500.0 * s2_gain[b] * (z_pix[p] + q_tile) + 60.0 * rng.normal(), 0.0, 65000.0);

        auto& s1 = t.modalities[i_s1];
        s1.resize(8 * hw);
        const bool half_orbit = rng.bernoulli(0.2);
        for (std::size_t b = 0; b < 8; ++b)
            for (std::size_t p = 0; p < hw; ++p)
                s1[b * hw + p] = (half_orbit && p < hw / 2)
                                     ? -9999.0
                                     : s1_offset[b] + 3.0 * s1_gain[b] * z_pix[p] + 1.0 * rng.normal();

        auto& dem = t.modalities[i_dem];
        dem.resize(2 * hw);
        for (std::size_t p = 0; p < hw; ++p) {
            dem[p] = 600.0 + 300.0 * z_pix[p] + 30.0 * rng.normal();
            dem[hw + p] = std::max(0.0, 10.0 + 3.0 * z_pix[p] + 2.0 * rng.normal());
        }

        auto& gch = t.modalities[i_gch];
        gch.resize(2 * hw);
        for (std::size_t p = 0; p < hw; ++p) {
            if (rng.bernoulli(0.02)) {
                gch[p] = gch[hw + p] = 255.0;
                continue;
            }
            gch[p] = std::clamp(15.0 + 7.0 * z_pix[p] + 1.5 * rng.normal(), 0.0, 60.0);
            gch[hw + p] = std::clamp(8.0 + 2.0 * rng.normal(), 0.0, 250.0);
        }

        auto& dw = t.modalities[i_dw];
        auto& wc = t.modalities[i_wc];
        dw.resize(hw);
        wc.resize(hw);
        for (std::size_t p = 0; p < hw; ++p) {
            dw[p] = clamp_class(2.0 * (z_pix[p] + 0.3 * rng.normal()) + 4.5, 9);
            wc[p] = clamp_class(2.5 * (z_pix[p] + 0.4 * rng.normal()) + 5.5, 11);
        }

        t.modalities[i_pr] = {
            std::max(0.0, 2.0 + 0.8 * z_tile + 0.4 * season_prev + 0.2 * rng.normal()),
            std::max(0.0, 2.0 + 0.8 * z_tile + 0.4 * season + 0.2 * rng.normal()),
            std::max(0.0, 2.0 + 0.8 * z_tile + 0.1 * rng.normal())};

        auto& tm = t.modalities[i_tm];
        const double base = 300.0 - 0.35 * std::abs(t.lonlat.lat) + 2.5 * z_tile;
        const double spread[3] = {5.0, 0.0, -5.0};
        for (int s = 0; s < 3; ++s) tm.push_back(base + 3.0 * season_prev + spread[s] + 0.5 * rng.normal());
        for (int s = 0; s < 3; ++s) tm.push_back(base + 3.0 * season + spread[s] + 0.5 * rng.normal());
        for (int s = 0; s < 3; ++s) tm.push_back(base + 1.6 * spread[s] + 0.5 * rng.normal());

        const auto geo = geolocation_encoding(t.lonlat);
        t.modalities[i_geo].assign(geo.begin(), geo.end());
        const auto date = month_encoding(t.month);
        t.modalities[i_date].assign(date.begin(), date.end());

        const double biome = clamp_class(2.0 * (z_tile + 0.3 * rng.normal()) + 7.0, 14);
        t.modalities[i_bio] = {biome};
        const double lon_bin = std::min(9.0, std::floor((t.lonlat.lon + 180.0) / 36.0));
        const double lat_bin = std::clamp(std::floor((t.lonlat.lat - kLatMin) / 22.0), 0.0, 5.0);
        t.modalities[i_eco] = {biome * 60.0 + lon_bin * 6.0 + lat_bin};

        switch (config.task.type) {
            case TaskType::regression_tile:
                t.label = {LabelKind::scalar, {30.0 + 10.0 * (z_tile + config.label_noise * rng.normal())}};
                break;
            case TaskType::regression_pixel: {
                t.label.kind = LabelKind::grid;
                t.label.values.assign(hw, kLabelNoData);
                const std::size_t anchor = rng.index(hw);
                for (std::size_t p = 0; p < hw; ++p) {
                    if (p == anchor || rng.bernoulli(0.15)) {
                        t.label.values[p] = 100.0 + 40.0 * (z_pix[p] + config.label_noise * rng.normal());
                    }
                }
                break;
            }
            case TaskType::multilabel:
                t.label.kind = LabelKind::multilabel;
                for (std::size_t c = 0; c < config.task.classes; ++c) {
                    const double p = sigmoid(class_slope[c] * z_tile + class_bias[c]);
                    t.label.values.push_back(rng.bernoulli(p) ? 1.0 : 0.0);
                }
                break;
        }

        // Whole-modality gaps, never on inputs or on the always-known metadata.
        for (std::size_t m = 0; m < schema.size(); ++m) {
            if (is_input[m] || m == i_geo || m == i_date) continue;
            if (rng.bernoulli(config.missing_rate)) t.modalities[m].clear();
        }
        ds.tiles.push_back(std::move(t));
    }
    ds.validate();
    return ds;
}

}  // namespace tttlab
