#include "tttlab/experiment.hpp"

#include <algorithm>

#include "tttlab/errors.hpp"
#include "tttlab/rng.hpp"

namespace tttlab {

std::string to_string(Method m) {
    switch (m) {
        case Method::jt: return "jt";
        case Method::ttt_mmr: return "ttt-mmr";
        case Method::ttt_mmr_geo: return "ttt-mmr-geo";
    }
    return "?";
}

Method parse_method(std::string_view text) {
    if (text == "jt") return Method::jt;
    if (text == "ttt-mmr") return Method::ttt_mmr;
    if (text == "ttt-mmr-geo") return Method::ttt_mmr_geo;
    throw UsageError("unknown method '" + std::string(text) + "' (expected jt, ttt-mmr or ttt-mmr-geo)");
}

std::string to_string(TestSplit s) { return s == TestSplit::random ? "random" : "geo"; }

TestSplit parse_test_split(std::string_view text) {
    if (text == "random") return TestSplit::random;
    if (text == "geo") return TestSplit::geo;
    throw UsageError("unknown test split '" + std::string(text) + "' (expected random or geo)");
}

nlohmann::json architecture_to_json(const Architecture& a) {
    return {{"patch_size", a.patch_size},
            {"embed_dim", a.embed_dim},
            {"input_modalities", a.input_modalities},
            {"task_modalities", a.task_modalities}};
}

Architecture architecture_from_json(const nlohmann::json& j) {
    try {
        Architecture a;
        a.patch_size = j.at("patch_size").get<std::size_t>();
        a.embed_dim = j.at("embed_dim").get<std::size_t>();
        a.input_modalities = j.at("input_modalities").get<std::vector<std::string>>();
        a.task_modalities = j.value("task_modalities", std::vector<std::string>{});
        return a;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("architecture: ") + e.what());
    }
}

ModelConfig model_config_for(const Dataset& dataset, const Architecture& arch) {
    ModelConfig c;
    c.schema = dataset.schema;
    c.task = dataset.task;
    c.tile_size = dataset.tile_size;
    c.patch_size = arch.patch_size;
    c.embed_dim = arch.embed_dim;
    c.input_modalities = arch.input_modalities;
    c.task_modalities = arch.task_modalities;
    c.validate();
    return c;
}

TrainConfig desk_train_config() {
    TrainConfig c;
    c.epochs = 30;
    c.batch_size = 16;
    c.max_lr = 2e-3;
    c.min_lr = 1e-5;
    c.weight_decay = 0.05;
    c.warmup_epochs = 3;
    return c;
}

std::vector<NormalizedTile> normalized_subset(const Dataset& dataset, std::span<const std::int64_t> ids,
                                              const NormStats& stats) {
    std::vector<std::int64_t> sorted(ids.begin(), ids.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<NormalizedTile> out;
    out.reserve(sorted.size());
    for (auto id : sorted) out.push_back(normalize_tile(dataset.tiles[dataset.position_of(id)], dataset.schema, stats));
    return out;
}

namespace {

std::vector<const NormalizedTile*> pointers_to(const std::vector<NormalizedTile>& tiles) {
    std::vector<const NormalizedTile*> out;
    for (const auto& t : tiles) out.push_back(&t);
    return out;
}

}  // namespace

TrainedModel train_on_split(const Dataset& dataset, const SplitSet& splits, int subset, const TrainConfig& config,
                            const Architecture& arch, const std::function<void(const nlohmann::json&)>& on_epoch) {
    config.validate();
    const auto& train_ids = splits.train(subset);
    if (train_ids.empty()) throw DataError("training subset " + std::to_string(subset) + "% is empty");
    if (splits.validation.empty()) throw DataError("validation split is empty");

    const Model model(model_config_for(dataset, arch));
    const NormStats stats = compute_norm_stats(dataset, train_ids);
    const auto train = normalized_subset(dataset, train_ids, stats);
    const auto validation = normalized_subset(dataset, splits.validation, stats);
    const auto tp = pointers_to(train);
    const auto vp = pointers_to(validation);

    auto result = joint_train(model, model.init(config.seed), tp, vp, config, on_epoch);
    TrainedModel out;
    out.checkpoint.config = model.config();
    out.checkpoint.params = std::move(result.best);
    out.checkpoint.norm = stats;
    out.checkpoint.epoch = result.best_epoch;
    out.checkpoint.validation_metric = result.best_metric;
    out.checkpoint.seed = config.seed;
    out.checkpoint.extras = {{"train", train_config_to_json(config)},
                             {"subset", subset},
                             {"split_seed", splits.seed},
                             {"dataset_seed", dataset.seed}};
    out.log = std::move(result.log);
    return out;
}

std::uint64_t ttt_seed_for(std::uint64_t train_seed) { return derive_seed(train_seed, "ttt/batching"); }

TttConfig ttt_config_for(Method method, const TttConfig& base) {
    TttConfig c = base;
    c.batching = method == Method::ttt_mmr_geo ? Batching::geographic : Batching::random;
    return c;
}

std::vector<MethodResult> evaluate_methods(const Dataset& dataset, const SplitSet& splits, const Checkpoint& checkpoint,
                                           const std::vector<Method>& methods, const std::vector<TestSplit>& test_splits,
                                           const TttConfig& base) {
    if (schema_hash(checkpoint.config.schema) != schema_hash(dataset.schema)) {
        throw DataError("checkpoint was trained on a dataset with a different schema");
    }
    if (!(checkpoint.config.task == dataset.task)) throw DataError("checkpoint task does not match the dataset");
    base.validate();
    const Model model(checkpoint.config);
    const auto& params = checkpoint.params;

    const auto validation = normalized_subset(dataset, splits.validation, checkpoint.norm);
    const auto vp = pointers_to(validation);
    std::vector<std::pair<TestSplit, std::vector<NormalizedTile>>> tests;
    for (auto s : test_splits) {
        const auto& ids = s == TestSplit::random ? splits.random_test : splits.geo_test;
        if (!ids.empty()) tests.emplace_back(s, normalized_subset(dataset, ids, checkpoint.norm));
    }

    std::vector<MethodResult> out;
    for (auto method : methods) {
        std::optional<IterationSelection> selection;
        TttConfig cfg = ttt_config_for(method, base);
        if (method != Method::jt) {
            if (vp.empty()) throw DataError("iteration selection needs validation tiles");
            selection = select_iterations(model, params, vp, cfg);
        }
        for (const auto& [split, tiles] : tests) {
            const auto tp = pointers_to(tiles);
            MethodResult r;
            r.method = method;
            r.split = split;
            r.selection = selection;
            r.iterations = selection ? selection->iterations : 0;
            r.run = run_ttt(model, params, tp, cfg, r.iterations);
            std::vector<std::vector<double>> preds;
            for (auto& p : r.run.predictions) preds.push_back(p.values);
            r.metric = task_metric(dataset.task, tp, preds);
            out.push_back(std::move(r));
        }
    }
    return out;
}

}  // namespace tttlab
