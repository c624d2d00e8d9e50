#include "tttlab/model.hpp"

#include <cmath>

#include "tttlab/errors.hpp"
#include "tttlab/rng.hpp"

namespace tttlab {
namespace {

bool is_pixel_task(const TaskSpec& task) { return task.type == TaskType::regression_pixel; }

void init_weight(ParamStore& s, const std::string& name, Rng& rng) {
    const auto& blk = s.block(name);
    const double sd = 1.0 / std::sqrt(static_cast<double>(blk.shape.at(0)));
    for (double& v : s.block_values(name)) v = rng.normal() * sd;
}

}  // namespace

void ModelConfig::validate() const {
    validate_schema(schema);
    if (patch_size == 0 || tile_size == 0 || tile_size % patch_size != 0) {
        throw UsageError("tile size " + std::to_string(tile_size) + " is not a multiple of patch size " +
                         std::to_string(patch_size));
    }
    if (embed_dim == 0) throw UsageError("embedding dimension must be positive");
    if (input_modalities.empty()) throw UsageError("at least one input modality is required");
    for (const auto& name : input_modalities) schema_index(schema, name);
    for (const auto& name : task_modalities) schema_index(schema, name);
    if (task.type == TaskType::multilabel && task.classes == 0) {
        throw UsageError("multilabel task needs at least one class");
    }
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {{"schema", schema_to_json(c.schema)},
            {"task", to_string(c.task.type)},
            {"task_classes", c.task.classes},
            {"tile_size", c.tile_size},
            {"patch_size", c.patch_size},
            {"embed_dim", c.embed_dim},
            {"input_modalities", c.input_modalities},
            {"task_modalities", c.task_modalities}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    try {
        ModelConfig c;
        c.schema = schema_from_json(j.at("schema"));
        c.task = {parse_task_type(j.at("task").get<std::string>()), j.at("task_classes").get<std::size_t>()};
        c.tile_size = j.at("tile_size").get<std::size_t>();
        c.patch_size = j.at("patch_size").get<std::size_t>();
        c.embed_dim = j.at("embed_dim").get<std::size_t>();
        c.input_modalities = j.at("input_modalities").get<std::vector<std::string>>();
        c.task_modalities = j.at("task_modalities").get<std::vector<std::string>>();
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model config: ") + e.what());
    } catch (const UsageError& e) {
        throw DataError(std::string("model config: ") + e.what());
    }
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    grid_ = config_.tile_size / config_.patch_size;
    const std::size_t p2 = config_.patch_size * config_.patch_size;
    for (const auto& name : config_.input_modalities) {
        const std::size_t m = schema_index(config_.schema, name);
        const auto& ms = config_.schema[m];
        inputs_.push_back(m);
        input_dim_ += ms.channels() * (ms.scale == Scale::pixel ? p2 : 1);
    }
    std::vector<std::size_t> targets;
    if (config_.task_modalities.empty()) {
        for (std::size_t m = 0; m < config_.schema.size(); ++m) targets.push_back(m);
    } else {
        for (const auto& name : config_.task_modalities) targets.push_back(schema_index(config_.schema, name));
    }
    for (std::size_t m : targets) {
        const auto& ms = config_.schema[m];
        std::size_t& used = ms.scale == Scale::pixel ? pixel_channels_ : tile_channels_;
        groups_.push_back({m, ms.scale, used, ms.channels()});
        used += ms.channels();
    }
}

ModelParams Model::init(std::uint64_t seed) const {
    const std::size_t d = config_.embed_dim;
    ModelParams p;
    p.encoder.add_block("patch.weight", {input_dim_, d});
    p.encoder.add_block("patch.bias", {d});
    p.encoder.add_block("hidden.weight", {d, d});
    p.encoder.add_block("hidden.bias", {d});
    {
        Rng rng(derive_seed(seed, "init/encoder"));
        init_weight(p.encoder, "patch.weight", rng);
        init_weight(p.encoder, "hidden.weight", rng);
    }
    {
        Rng rng(derive_seed(seed, "init/task"));
        if (is_pixel_task(config_.task)) {
            p.task.add_block("conv.weight", {d, 1});
            p.task.add_block("conv.bias", {1});
            init_weight(p.task, "conv.weight", rng);
        } else {
            const std::size_t out = config_.task.output_dim();
            p.task.add_block("norm.gamma", {d});
            p.task.add_block("norm.beta", {d});
            p.task.add_block("head.weight", {d, out});
            p.task.add_block("head.bias", {out});
            for (double& v : p.task.block_values("norm.gamma")) v = 1.0;
            init_weight(p.task, "head.weight", rng);
        }
    }
    {
        Rng rng(derive_seed(seed, "init/modality"));
        if (pixel_channels_) {
            p.modality.add_block("pixel.weight", {d, pixel_channels_});
            p.modality.add_block("pixel.bias", {pixel_channels_});
            init_weight(p.modality, "pixel.weight", rng);
        }
        if (tile_channels_) {
            p.modality.add_block("tile.weight", {d, tile_channels_});
            p.modality.add_block("tile.bias", {tile_channels_});
            init_weight(p.modality, "tile.weight", rng);
        }
    }
    return p;
}

Var Model::encode(Tape& t, const ParamStore& theta, TileBatch batch) const {
    if (batch.empty()) throw UsageError("encode: empty batch");
    const std::size_t h = config_.tile_size, p = config_.patch_size, P = grid_ * grid_;
    Tensor x({batch.size() * P, input_dim_});
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const NormalizedTile& tile = *batch[b];
        for (std::size_t m : inputs_) {
            if (tile.values.at(m).empty()) {
                throw DataError("tile " + std::to_string(tile.id) + ": input modality " +
                                config_.schema[m].name + " is missing");
            }
        }
        for (std::size_t py = 0; py < grid_; ++py) {
            for (std::size_t px = 0; px < grid_; ++px) {
                double* row = &x.data()[((b * P) + py * grid_ + px) * input_dim_];
                std::size_t col = 0;
                for (std::size_t m : inputs_) {
                    const auto& ms = config_.schema[m];
                    const auto& v = tile.values[m];
                    const auto& ok = tile.valid[m];
                    const bool cat = ms.kind == Kind::categorical;
                    if (ms.scale == Scale::tile) {
                        if (cat) {
                            if (ok[0]) row[col + static_cast<std::size_t>(v[0])] = 1.0;
                            col += ms.classes;
                        } else {
                            for (std::size_t band = 0; band < ms.bands; ++band) row[col++] = v[band];
                        }
                        continue;
                    }
                    for (std::size_t band = 0; band < ms.bands; ++band) {
                        for (std::size_t dy = 0; dy < p; ++dy) {
                            for (std::size_t dx = 0; dx < p; ++dx) {
                                const std::size_t i = band * h * h + (py * p + dy) * h + px * p + dx;
                                if (cat) {
                                    if (ok[i]) row[col + static_cast<std::size_t>(v[i]) * p * p + dy * p + dx] = 1.0;
                                } else {
                                    row[col + dy * p + dx] = v[i];
                                }
                            }
                        }
                        if (!cat) col += p * p;
                    }
                    if (cat) col += ms.classes * p * p;
                }
            }
        }
    }
    auto hidden = tanh(t, affine(t, t.constant(std::move(x)), t.parameter(theta, "patch.weight"),
                                 t.parameter(theta, "patch.bias")));
    return affine(t, hidden, t.parameter(theta, "hidden.weight"), t.parameter(theta, "hidden.bias"));
}

Var Model::decode_task(Tape& t, Var embeddings, const ParamStore& g, std::size_t batch) const {
    const std::size_t h = config_.tile_size;
    if (is_pixel_task(config_.task)) {
        if (!g.has_block("conv.weight")) throw UsageError("task head does not match a pixel-level task");
        auto up = upsample_bilinear(t, embeddings, {batch, grid_, grid_, h, h});
        return affine(t, up, t.parameter(g, "conv.weight"), t.parameter(g, "conv.bias"));
    }
    if (!g.has_block("head.weight")) throw UsageError("task head does not match a tile-level task");
    auto pooled = group_mean(t, embeddings, grid_ * grid_);
    auto normed = layer_norm(t, pooled, t.parameter(g, "norm.gamma"), t.parameter(g, "norm.beta"));
    return affine(t, normed, t.parameter(g, "head.weight"), t.parameter(g, "head.bias"));
}

std::vector<Var> Model::decode_modalities(Tape& t, Var embeddings, const ParamStore& alpha,
                                          std::size_t batch) const {
    const std::size_t h = config_.tile_size;
    const GridResize grid{batch, grid_, grid_, h, h};
    Var pixel{}, tile{};
    if (pixel_channels_) {
        if (!alpha.has_block("pixel.weight")) throw UsageError("modality decoder lacks pixel channels");
        // The 1x1 convolution commutes with the bilinear resize (interpolation
        // weights sum to one), so convolve on the coarse grid and resize after.
        auto conv = affine(t, embeddings, t.parameter(alpha, "pixel.weight"), t.parameter(alpha, "pixel.bias"));
        pixel = upsample_bilinear(t, conv, grid);
    }
    if (tile_channels_) {
        if (!alpha.has_block("tile.weight")) throw UsageError("modality decoder lacks tile channels");
        auto pooled = group_mean(t, upsample_bilinear(t, embeddings, grid), h * h);
        tile = affine(t, pooled, t.parameter(alpha, "tile.weight"), t.parameter(alpha, "tile.bias"));
    }
    std::vector<Var> out;
    out.reserve(groups_.size());
    for (const auto& grp : groups_) {
        const bool px = grp.scale == Scale::pixel;
        const std::size_t total = px ? pixel_channels_ : tile_channels_;
        Var src = px ? pixel : tile;
        out.push_back(grp.count == total ? src : slice_columns(t, src, grp.offset, grp.count));
    }
    return out;
}

ModalityLoss Model::modality_loss(Tape& t, Var reconstruction, std::size_t group, TileBatch batch) const {
    const ChannelGroup& grp = groups_.at(group);
    const auto& ms = config_.schema[grp.modality];
    const std::size_t m = grp.modality;
    const std::size_t pix = grp.scale == Scale::pixel ? config_.tile_size * config_.tile_size : 1;
    const Tensor& rec = t.value(reconstruction);
    if (rec.rank() != 2 || rec.dim(0) != batch.size() * pix || rec.dim(1) != grp.count) {
        throw ShapeError("modality_loss: " + ms.name + " reconstruction " + shape_string(rec.shape()));
    }

    ModalityLoss out;
    for (const auto* tile : batch) out.tiles += tile->has(m) ? 1 : 0;
    out.present = out.tiles > 0;
    if (!out.present) {
        out.loss = t.constant(Tensor::scalar(0.0));
        return out;
    }
    const double per_tile = 1.0 / static_cast<double>(out.tiles);

    if (ms.kind == Kind::categorical) {
        std::vector<std::size_t> classes(batch.size() * pix, 0);
        std::vector<double> w(batch.size() * pix, 0.0);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const NormalizedTile& tile = *batch[b];
            if (!tile.has(m)) continue;
            const double wt = per_tile / static_cast<double>(tile.valid_count[m]);
            for (std::size_t i = 0; i < pix; ++i) {
                if (!tile.valid[m][i]) continue;
                classes[b * pix + i] = static_cast<std::size_t>(tile.values[m][i]);
                w[b * pix + i] = wt;
            }
        }
        out.loss = weighted_softmax_cross_entropy(t, reconstruction, classes, w);
        return out;
    }

    // Stored band-major; the reconstruction is [pixel, band].
    Tensor target(rec.shape()), w(rec.shape());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const NormalizedTile& tile = *batch[b];
        if (!tile.has(m)) continue;
        const double wt = per_tile / static_cast<double>(tile.valid_count[m]);
        for (std::size_t band = 0; band < ms.bands; ++band) {
            for (std::size_t i = 0; i < pix; ++i) {
                const std::size_t src = band * pix + i;
                const std::size_t dst = (b * pix + i) * ms.bands + band;
                if (!tile.valid[m][src]) continue;
                target[dst] = tile.values[m][src];
                w[dst] = wt;
            }
        }
    }
    out.loss = weighted_squared_error(t, reconstruction, target, w);
    return out;
}

Var Model::task_loss(Tape& t, Var prediction, TileBatch batch) const {
    const Tensor& pv = t.value(prediction);
    Tensor target(pv.shape()), w(pv.shape());
    const std::size_t per = pv.size() / std::max<std::size_t>(batch.size(), 1);
    if (pv.size() != per * batch.size() || batch.empty()) {
        throw ShapeError("task_loss: prediction " + shape_string(pv.shape()) + " for " +
                         std::to_string(batch.size()) + " tiles");
    }
    std::size_t labelled = 0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const NormalizedTile& tile = *batch[b];
        if (tile.label_kind == LabelKind::none || tile.label.size() != per) {
            throw DataError("tile " + std::to_string(tile.id) + " has no usable task label");
        }
        for (std::size_t i = 0; i < per; ++i) {
            target[b * per + i] = tile.label[i];
            w[b * per + i] = tile.label_valid[i];
            labelled += tile.label_valid[i];
        }
    }
    if (labelled == 0) throw DataError("no supervised pixels in batch");
    for (double& v : w.data()) v /= static_cast<double>(labelled);
    if (config_.task.type == TaskType::multilabel) return weighted_bce_with_logits(t, prediction, target, w);
    return weighted_squared_error(t, prediction, target, w);
}

std::vector<std::vector<double>> Model::predict(const ParamStore& theta, const ParamStore& g,
                                                TileBatch batch) const {
    Tape t;
    const Tensor& out = t.value(decode_task(t, encode(t, theta, batch), g, batch.size()));
    const std::size_t per = out.size() / batch.size();
    std::vector<std::vector<double>> preds(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        preds[b].assign(out.data().begin() + b * per, out.data().begin() + (b + 1) * per);
    }
    return preds;
}

}  // namespace tttlab
