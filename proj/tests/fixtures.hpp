#pragma once

// Small random model instances: a four-modality schema covering every
// (scale, kind) combination, and normalized tiles with random validity masks.

#include <vector>

#include "tttlab/model.hpp"
#include "tttlab/rng.hpp"

namespace tttlab::testing {

inline Schema tiny_schema() {
    Schema s(4);
    s[0] = {"px", Scale::pixel, Kind::continuous, 2, 0, -1.0, true};
    s[1] = {"pc", Scale::pixel, Kind::categorical, 1, 3, 3.0, false};
    s[2] = {"tc", Scale::tile, Kind::continuous, 2, 0, -1.0, true};
    s[3] = {"tk", Scale::tile, Kind::categorical, 1, 4, 4.0, false};
    return s;
}

inline ModelConfig tiny_config(TaskSpec task, std::size_t tile_size = 4, std::size_t patch = 2,
                               std::size_t dim = 3) {
    ModelConfig c;
    c.schema = tiny_schema();
    c.task = task;
    c.tile_size = tile_size;
    c.patch_size = patch;
    c.embed_dim = dim;
    c.input_modalities = {"px", "tc"};
    return c;
}

// missing_rate applies to the non-input modalities.
inline NormalizedTile random_tile(const ModelConfig& c, Rng& rng, std::int64_t id, double missing_rate = 0.2) {
    NormalizedTile t;
    t.id = id;
    t.lonlat = {rng.uniform(-170, 170), rng.uniform(-60, 70)};
    const std::size_t n = c.schema.size();
    t.values.resize(n);
    t.valid.resize(n);
    t.valid_count.assign(n, 0);
    for (std::size_t m = 0; m < n; ++m) {
        const auto& ms = c.schema[m];
        const bool input = m == 0 || m == 2;
        if (!input && rng.bernoulli(missing_rate)) continue;
        const std::size_t count = ms.value_count(c.tile_size);
        t.values[m].resize(count);
        t.valid[m].resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            const bool ok = rng.bernoulli(0.85);
            t.valid[m][i] = ok;
            t.valid_count[m] += ok;
            if (ms.kind == Kind::categorical) {
                t.values[m][i] = ok ? static_cast<double>(rng.index(ms.classes)) : static_cast<double>(ms.classes);
            } else {
                t.values[m][i] = ok ? rng.normal() : 0.0;
            }
        }
    }
    const std::size_t hw = c.tile_size * c.tile_size;
    switch (c.task.type) {
        case TaskType::regression_tile:
            t.label_kind = LabelKind::scalar;
            t.label = {rng.normal()};
            t.label_valid = {1};
            break;
        case TaskType::regression_pixel:
            t.label_kind = LabelKind::grid;
            t.label.assign(hw, 0.0);
            t.label_valid.assign(hw, 0);
            for (std::size_t i = 0; i < hw; ++i) {
                if (i == 0 || rng.bernoulli(0.5)) {
                    t.label[i] = rng.normal();
                    t.label_valid[i] = 1;
                }
            }
            break;
        case TaskType::multilabel:
            t.label_kind = LabelKind::multilabel;
            for (std::size_t k = 0; k < c.task.classes; ++k) t.label.push_back(rng.bernoulli(0.4) ? 1.0 : 0.0);
            t.label_valid.assign(c.task.classes, 1);
            break;
    }
    return t;
}

inline std::vector<NormalizedTile> random_tiles(const ModelConfig& c, Rng& rng, std::size_t n,
                                                double missing_rate = 0.2) {
    std::vector<NormalizedTile> tiles;
    for (std::size_t i = 0; i < n; ++i) tiles.push_back(random_tile(c, rng, static_cast<std::int64_t>(i), missing_rate));
    return tiles;
}

inline std::vector<const NormalizedTile*> pointers(const std::vector<NormalizedTile>& tiles) {
    std::vector<const NormalizedTile*> out;
    for (const auto& t : tiles) out.push_back(&t);
    return out;
}

inline void perturb(ParamStore& s, Rng& rng, double scale = 0.5) {
    for (double& v : s.values()) v += rng.normal(0.0, scale);
}

inline TaskSpec random_task(Rng& rng) {
    switch (rng.index(3)) {
        case 0: return {TaskType::regression_tile, 0};
        case 1: return {TaskType::regression_pixel, 0};
        default: return {TaskType::multilabel, 3};
    }
}

}  // namespace tttlab::testing
