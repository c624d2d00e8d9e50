#include "tttlab/ttt.hpp"

#include <algorithm>
#include <cmath>

#include "tttlab/errors.hpp"
#include "tttlab/rng.hpp"

namespace tttlab {

std::string to_string(Batching b) { return b == Batching::random ? "random" : "geographic"; }

Batching parse_batching(std::string_view text) {
    if (text == "random") return Batching::random;
    if (text == "geographic" || text == "geo") return Batching::geographic;
    throw UsageError("unknown batching '" + std::string(text) + "'");
}

void TttConfig::validate() const {
    if (batch_size == 0) throw UsageError("TTT batch size must be at least 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw UsageError("TTT learning rate must be finite and positive");
    if (max_iterations == 0) throw UsageError("TTT needs at least one iteration");
}

nlohmann::json ttt_config_to_json(const TttConfig& c) {
    return {{"batch_size", c.batch_size},
            {"lr", c.lr},
            {"max_iterations", c.max_iterations},
            {"batching", to_string(c.batching)},
            {"seed", c.seed}};
}

TttConfig ttt_config_from_json(const nlohmann::json& j) {
    try {
        TttConfig c;
        c.batch_size = j.at("batch_size").get<std::size_t>();
        c.lr = j.at("lr").get<double>();
        c.max_iterations = j.at("max_iterations").get<std::size_t>();
        c.batching = parse_batching(j.at("batching").get<std::string>());
        c.seed = j.at("seed").get<std::uint64_t>();
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("ttt config: ") + e.what());
    }
}

ReconstructionLosses batch_reconstruction_losses(const Model& model, const ParamStore& theta,
                                                 const ParamStore& alpha, TileBatch batch, bool with_gradients) {
    if (batch.empty()) throw DataError("reconstruction losses of an empty batch");
    Tape t;
    auto recs = model.decode_modalities(t, model.encode(t, theta, batch), alpha, batch.size());
    ReconstructionLosses out;
    std::vector<Var> vars;
    for (std::size_t g = 0; g < recs.size(); ++g) {
        auto l = model.modality_loss(t, recs[g], g, batch);
        out.loss.push_back(t.value(l.loss).item());
        out.present.push_back(l.present);
        vars.push_back(l.loss);
    }
    if (std::none_of(out.present.begin(), out.present.end(), [](bool p) { return p; })) {
        throw DataError("no task modality is present on any tile of the batch");
    }
    if (with_gradients) {
        for (std::size_t g = 0; g < vars.size(); ++g) {
            out.gradient.push_back(out.present[g] ? t.backward(vars[g]).of(theta) : GradVector(theta.size()));
        }
    }
    return out;
}

Direction normalized_mean_gradient(std::span<const GradVector> gradients, const std::vector<bool>& present) {
    if (gradients.empty()) throw UsageError("normalized_mean_gradient: no gradients");
    if (present.size() != gradients.size()) throw ShapeError("normalized_mean_gradient: presence flags mismatch");
    Direction d{GradVector(gradients[0].size()), 0};
    std::vector<double> inv_norm(gradients.size(), 0.0);
    for (std::size_t m = 0; m < gradients.size(); ++m) {
        if (gradients[m].size() != d.value.size()) throw ShapeError("normalized_mean_gradient: ragged gradients");
        if (!present[m]) continue;
        const double n = grad_norm(gradients[m]);
        if (n == 0.0) continue;
        inv_norm[m] = 1.0 / n;
        ++d.used;
    }
    if (d.used == 0) return d;
    const double inv_count = 1.0 / static_cast<double>(d.used);
    for (std::size_t m = 0; m < gradients.size(); ++m) {
        if (inv_norm[m] == 0.0) continue;
        for (std::size_t j = 0; j < d.value.size(); ++j) d.value[j] += gradients[m][j] * inv_norm[m];
    }
    for (double& v : d.value.values) v *= inv_count;
    return d;
}

void ttt_update(ParamStore& theta, const GradVector& direction, double lr) {
    if (direction.size() != theta.size()) throw ShapeError("ttt_update: direction does not match the encoder");
    auto v = theta.values();
    for (std::size_t j = 0; j < v.size(); ++j) v[j] -= lr * direction[j];
}

ReconstructionLosses adaptation_step(const Model& model, ParamStore& theta, const ParamStore& alpha,
                                     TileBatch batch, double lr) {
    auto losses = batch_reconstruction_losses(model, theta, alpha, batch, true);
    const auto dir = normalized_mean_gradient(losses.gradient, losses.present);
    ttt_update(theta, dir.value, lr);
    return losses;
}

std::vector<TestBatch> make_batches(TileBatch tiles, const TttConfig& config) {
    config.validate();
    std::vector<TestBatch> out;
    if (config.batching == Batching::geographic) {
        std::vector<GeoPoint> pts;
        for (const auto* t : tiles) pts.push_back({t->id, t->lonlat});
        std::vector<const NormalizedTile*> by_id(tiles.begin(), tiles.end());
        std::sort(by_id.begin(), by_id.end(), [](const auto* a, const auto* b) { return a->id < b->id; });
        auto lookup = [&](std::int64_t id) {
            auto it = std::lower_bound(by_id.begin(), by_id.end(), id, [](const auto* t, std::int64_t v) { return t->id < v; });
            return *it;
        };
        for (auto& gb : geographic_partition(pts, config.batch_size)) {
            TestBatch b;
            for (auto id : gb.tile_ids) b.tiles.push_back(lookup(id));
            b.bbox = gb.bbox;
            out.push_back(std::move(b));
        }
        return out;
    }
    std::vector<std::int64_t> ids;
    for (const auto* t : tiles) ids.push_back(t->id);
    std::vector<const NormalizedTile*> by_id(tiles.begin(), tiles.end());
    std::sort(by_id.begin(), by_id.end(), [](const auto* a, const auto* b) { return a->id < b->id; });
    for (const auto& chunk : random_partition(ids, config.batch_size, config.seed)) {
        TestBatch b;
        for (auto id : chunk) {
            auto it = std::lower_bound(by_id.begin(), by_id.end(), id, [](const auto* t, std::int64_t v) { return t->id < v; });
            b.tiles.push_back(*it);
        }
        out.push_back(std::move(b));
    }
    return out;
}

std::size_t round_half_even(double value) {
    if (!(value >= 0.0)) throw UsageError("round_half_even: negative or NaN value");
    return static_cast<std::size_t>(std::nearbyint(value));  // default FE_TONEAREST is ties-to-even
}

IterationSelection choose_iterations(std::vector<std::vector<double>> task_loss) {
    if (task_loss.empty()) throw DataError("iteration selection needs at least one batch");
    IterationSelection sel;
    double total = 0.0;
    for (const auto& curve : task_loss) {
        if (curve.empty()) throw DataError("empty task-loss curve");
        const auto best = static_cast<std::size_t>(std::min_element(curve.begin(), curve.end()) - curve.begin());
        sel.best.push_back(best);
        total += static_cast<double>(best);
    }
    sel.iterations = round_half_even(total / static_cast<double>(sel.best.size()));
    sel.task_loss = std::move(task_loss);
    return sel;
}

IterationSelection select_iterations(const Model& model, const ModelParams& params, TileBatch validation,
                                     const TttConfig& config) {
    if (validation.empty()) throw DataError("iteration selection needs validation tiles");
    std::vector<std::vector<double>> curves;
    for (const auto& batch : make_batches(validation, config)) {
        ParamStore theta = params.encoder;
        std::vector<double> curve;
        auto task_loss = [&] {
            Tape t;
            auto pred = model.decode_task(t, model.encode(t, theta, batch.tiles), params.task, batch.tiles.size());
            return t.value(model.task_loss(t, pred, batch.tiles)).item();
        };
        try {
            curve.push_back(task_loss());
            for (std::size_t i = 1; i <= config.max_iterations; ++i) {
                adaptation_step(model, theta, params.modality, batch.tiles, config.lr);
                curve.push_back(task_loss());
            }
        } catch (const NumericError&) {
            // iterations past a non-finite state are never selected
            curve.resize(config.max_iterations + 1, INFINITY);
        }
        curves.push_back(std::move(curve));
    }
    return choose_iterations(std::move(curves));
}

nlohmann::json trace_to_json(const BatchTrace& tr, const Model& model) {
    nlohmann::json losses = nlohmann::json::array();
    for (const auto& it : tr.losses) {
        nlohmann::json row = nlohmann::json::object();
        for (std::size_t g = 0; g < it.size(); ++g) {
            const auto& name = model.config().schema[model.groups()[g].modality].name;
            row[name] = it[g] ? nlohmann::json(*it[g]) : nlohmann::json(nullptr);
        }
        losses.push_back(row);
    }
    nlohmann::json j{{"batch", tr.batch},
                     {"tile_ids", tr.tile_ids},
                     {"encoder_checksum", tr.start_checksum},
                     {"reconstruction_losses", losses},
                     {"iterations", tr.iterations},
                     {"fallback", tr.fallback},
                     {"prediction_digest", tr.prediction_digest}};
    if (tr.bbox) j["bbox"] = {tr.bbox->lon_min, tr.bbox->lat_min, tr.bbox->lon_max, tr.bbox->lat_max};
    if (!tr.error.empty()) j["error"] = tr.error;
    return j;
}

TttRun run_ttt(const Model& model, const ModelParams& params, TileBatch tiles, const TttConfig& config,
               std::size_t iterations) {
    const auto batches = make_batches(tiles, config);
    return run_ttt(model, params, batches, config, iterations);
}

TttRun run_ttt(const Model& model, const ModelParams& params, std::span<const TestBatch> batches,
               const TttConfig& config, std::size_t iterations) {
    config.validate();
    if (iterations > config.max_iterations) {
        throw UsageError("iteration count " + std::to_string(iterations) + " exceeds the maximum " +
                         std::to_string(config.max_iterations));
    }
    TttRun run;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        const auto& batch = batches[bi];
        BatchTrace tr;
        tr.batch = bi;
        tr.bbox = batch.bbox;
        for (const auto* t : batch.tiles) tr.tile_ids.push_back(t->id);

        // Private copy: every batch starts from the trained encoder.
        ParamStore theta = params.encoder;
        tr.start_checksum = theta.checksum();
        auto record = [&](const ReconstructionLosses& l) {
            std::vector<std::optional<double>> row;
            for (std::size_t g = 0; g < l.loss.size(); ++g) row.push_back(l.present[g] ? std::optional(l.loss[g]) : std::nullopt);
            tr.losses.push_back(std::move(row));
        };
        std::vector<std::vector<double>> preds;
        try {
            for (std::size_t i = 0; i < iterations; ++i) {
                record(adaptation_step(model, theta, params.modality, batch.tiles, config.lr));
                ++tr.iterations;
            }
            if (iterations > 0) record(batch_reconstruction_losses(model, theta, params.modality, batch.tiles, false));
            preds = model.predict(theta, params.task, batch.tiles);
        } catch (const NumericError& e) {
            tr.fallback = true;
            tr.error = e.what();
            tr.iterations = 0;
            preds = model.predict(params.encoder, params.task, batch.tiles);
        }
        std::uint64_t digest = fnv1a(nullptr, 0);
        for (std::size_t k = 0; k < preds.size(); ++k) {
            digest = fnv1a(preds[k].data(), preds[k].size() * sizeof(double), digest);
            run.predictions.push_back({batch.tiles[k]->id, std::move(preds[k])});
        }
        tr.prediction_digest = digest;
        run.traces.push_back(std::move(tr));
    }
    std::sort(run.predictions.begin(), run.predictions.end(),
              [](const TilePrediction& a, const TilePrediction& b) { return a.id < b.id; });
    return run;
}

}  // namespace tttlab
