#include "tttlab/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "tttlab/checkpoint.hpp"
#include "tttlab/container.hpp"
#include "tttlab/errors.hpp"
#include "tttlab/experiment.hpp"
#include "tttlab/report.hpp"
#include "tttlab/rng.hpp"
#include "tttlab/world.hpp"

namespace tttlab {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Common {
    std::string out;
    bool force = false;

    fs::path dir() const {
        if (!out.empty()) return out;
        if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
        return ".";
    }
};

void prepare(const fs::path& path, bool force) {
    if (fs::exists(path) && !force) {
        throw UsageError("'" + path.string() + "' already exists (pass --force to replace it)");
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_text(const fs::path& path, const std::string& text, bool force) {
    prepare(path, force);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
    os << text;
    if (!os) throw DataError("failed writing '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

json read_json(const fs::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---- option groups shared by several subcommands ----

struct WorldOptions {
    WorldConfig config = bundled_world_config();
    std::string task = "regression-tile";
    std::uint64_t seed = kBundledWorldSeed;

    void add(CLI::App* app) {
        app->add_option("--tiles", config.tiles, "number of tiles")->capture_default_str();
        app->add_option("--tile-size", config.tile_size, "tile edge in pixels")->capture_default_str();
        app->add_option("--task", task, "regression-tile, regression-pixel or multilabel")->capture_default_str();
        app->add_option("--classes", config.task.classes, "classes for the multilabel task")->capture_default_str();
        app->add_option("--missing-rate", config.missing_rate)->capture_default_str();
        app->add_option("--region-shift", config.region_shift)->capture_default_str();
        app->add_option("--geo-nuisance", config.geo_nuisance)->capture_default_str();
        app->add_option("--data-seed", seed, "world seed")->capture_default_str();
    }

    WorldConfig resolved() const {
        WorldConfig c = config;
        c.task.type = parse_task_type(task);
        if (c.task.type == TaskType::multilabel && c.task.classes == 0) c.task.classes = 5;
        if (c.task.type != TaskType::multilabel) c.task.classes = 0;
        c.validate();
        return c;
    }
};

struct TrainOptions {
    TrainConfig config = desk_train_config();
    Architecture arch;
    std::string mode = "finetune";

    void add(CLI::App* app) {
        app->add_option("--epochs", config.epochs)->capture_default_str();
        app->add_option("--batch-size", config.batch_size)->capture_default_str();
        app->add_option("--lr", config.max_lr, "peak learning rate")->capture_default_str();
        app->add_option("--min-lr", config.min_lr)->capture_default_str();
        app->add_option("--weight-decay", config.weight_decay)->capture_default_str();
        app->add_option("--warmup", config.warmup_epochs, "warm-up epochs")->capture_default_str();
        app->add_option("--mode", mode, "finetune or linear-probe")->capture_default_str();
        app->add_option("--embed-dim", arch.embed_dim)->capture_default_str();
        app->add_option("--patch-size", arch.patch_size)->capture_default_str();
    }

    TrainConfig resolved(std::uint64_t seed) const {
        TrainConfig c = config;
        c.mode = parse_train_mode(mode);
        c.seed = seed;
        c.validate();
        return c;
    }
};

struct TttOptions {
    TttConfig config;

    void add(CLI::App* app) {
        app->add_option("--ttt-batch", config.batch_size, "test batch size")->capture_default_str();
        app->add_option("--ttt-lr", config.lr, "adaptation step length")->capture_default_str();
        app->add_option("--ttt-iters", config.max_iterations, "maximum adaptation iterations")->capture_default_str();
    }
};

void check_subset(int subset) {
    if (subset != 5 && subset != 50 && subset != 100) {
        throw UsageError("--subset must be 5, 50 or 100, got " + std::to_string(subset));
    }
}

// ---- artifact names ----

fs::path dataset_path(const fs::path& dir) { return dir / "dataset.ttd"; }
fs::path splits_path(const fs::path& dir) { return dir / "splits.json"; }
std::string run_name(int subset, std::uint64_t seed) {
    return "subset" + std::to_string(subset) + "_seed" + std::to_string(seed);
}
fs::path checkpoint_path(const fs::path& dir, int subset, std::uint64_t seed) {
    return dir / "checkpoints" / (run_name(subset, seed) + ".ckpt");
}
std::string result_name(Method m, TestSplit s, int subset, std::uint64_t seed) {
    return to_string(m) + "_" + to_string(s) + "_" + run_name(subset, seed);
}

// ---- commands ----

void gen_data(const WorldConfig& wc, std::uint64_t seed, const fs::path& path, bool force, std::ostream& out) {
    prepare(path, force);
    const Dataset ds = generate_world(wc, seed);
    write_dataset(path, ds, {{"generator", {{"world", world_config_to_json(wc)}, {"seed", seed}}}});
    out << "wrote " << ds.tiles.size() << " tiles to " << path.string() << "\n";
}

SplitSet split(const Dataset& ds, std::uint64_t seed, const fs::path& path, bool force, bool subset_check,
               std::ostream& out) {
    const SplitSet sp = make_splits(ds, default_region(), {}, seed);
    if (sp.geo_test.empty()) throw DataError("the held-out region contains no tiles; the geographic split would be empty");
    if (sp.train100.empty() || sp.validation.empty() || sp.random_test.empty()) {
        throw DataError("the held-out region leaves too few tiles outside it for train/validation/test");
    }
    if (subset_check) {
        const auto problem = check_split_invariants(sp, ds);
        if (!problem.empty()) throw DataError("split invariant violated: " + problem);
        out << "subsets nested: train5 " << sp.train5.size() << " <= train50 " << sp.train50.size()
            << " <= train100 " << sp.train100.size() << "\n";
    }
    write_text(path, splits_to_json(sp).dump(1) + "\n", force);
    out << "train " << sp.train100.size() << ", validation " << sp.validation.size() << ", random test "
        << sp.random_test.size() << ", geo test " << sp.geo_test.size() << " -> " << path.string() << "\n";
    return sp;
}

void train(const Dataset& ds, const SplitSet& sp, int subset, const TrainConfig& tc, const Architecture& arch,
           const fs::path& dir, bool force, std::ostream& out) {
    check_subset(subset);
    const auto ck_path = checkpoint_path(dir, subset, tc.seed);
    const auto log_path = dir / "logs" / ("train_" + run_name(subset, tc.seed) + ".jsonl");
    prepare(ck_path, force);
    prepare(log_path, force);
    std::string log;
    auto trained = train_on_split(ds, sp, subset, tc, arch, [&](const json& row) { log += row.dump() + "\n"; });
    trained.checkpoint.extras["architecture"] = architecture_to_json(arch);
    write_checkpoint(ck_path, trained.checkpoint);
    write_text(log_path, log, true);
    out << "trained " << run_name(subset, tc.seed) << ": best epoch " << trained.checkpoint.epoch
        << ", validation metric " << trained.checkpoint.validation_metric << " -> " << ck_path.string() << "\n";
}

void ttt(const Dataset& ds, const SplitSet& sp, const Checkpoint& ck, const std::vector<Method>& methods,
         const std::vector<TestSplit>& splits, const TttConfig& base_in, const fs::path& dir, bool force,
         std::ostream& out) {
    const int subset = ck.extras.value("subset", 100);
    TttConfig base = base_in;
    base.seed = ttt_seed_for(ck.seed);
    const auto results = evaluate_methods(ds, sp, ck, methods, splits, base);
    const Model model(ck.config);
    for (const auto& r : results) {
        const auto name = result_name(r.method, r.split, subset, ck.seed);
        Cell cell{r.method, r.split, subset, ck.seed, r.metric, r.iterations};
        json res = cell_to_json(cell);
        res["ttt"] = ttt_config_to_json(ttt_config_for(r.method, base));
        if (r.selection) {
            res["selection"] = {{"iterations", r.selection->iterations}, {"best_per_batch", r.selection->best}};
        }
        res["fallback_batches"] = std::count_if(r.run.traces.begin(), r.run.traces.end(),
                                                [](const BatchTrace& t) { return t.fallback; });

        std::string preds = "id";
        const std::size_t width = r.run.predictions.empty() ? 0 : r.run.predictions[0].values.size();
        for (std::size_t k = 0; k < width; ++k) preds += ",p" + std::to_string(k);
        preds += "\n";
        for (const auto& p : r.run.predictions) {
            preds += std::to_string(p.id);
            for (double v : p.values) preds += "," + fmt17(v);
            preds += "\n";
        }
        std::string traces;
        for (const auto& t : r.run.traces) traces += trace_to_json(t, model).dump() + "\n";

        write_text(dir / "predictions" / (name + ".csv"), preds, force);
        write_text(dir / "traces" / (name + ".jsonl"), traces, force);
        write_text(dir / "results" / (name + ".json"), res.dump(1) + "\n", force);
        out << name << ": metric " << fmt17(r.metric) << ", iterations " << r.iterations << "\n";
    }
}

void report(const fs::path& dir, bool force, std::ostream& out) {
    const auto rdir = dir / "results";
    if (!fs::is_directory(rdir)) throw DataError("no results directory at '" + rdir.string() + "'");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(rdir)) {
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no result files in '" + rdir.string() + "'");
    std::vector<Cell> cells;
    for (const auto& f : files) cells.push_back(cell_from_json(read_json(f)));

    std::string metric = "r2";
    if (fs::exists(dataset_path(dir))) {
        // metric name follows the task when the dataset sits alongside
        metric = read_dataset(dataset_path(dir)).dataset.task.type == TaskType::multilabel ? "map" : "r2";
    }
    const json rep = build_report(cells, metric);
    if (!rep.at("consistency").at("ok").get<bool>()) throw NumericError("report deltas are inconsistent with the raw cells");
    write_text(dir / "report.csv", cells_to_csv(cells), force);
    write_text(dir / "report.json", rep.dump(1) + "\n", force);
    out << "report over " << cells.size() << " cells -> " << (dir / "report.json").string() << "\n";
}

template <class T>
std::vector<T> parse_list(const std::vector<std::string>& names, T (*parse)(std::string_view)) {
    std::vector<T> out;
    for (const auto& n : names) out.push_back(parse(n));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

Dataset load_dataset(const std::string& path) {
    if (path.empty()) throw UsageError("--dataset is required");
    if (!fs::exists(path)) throw DataError("dataset '" + path + "' does not exist");
    return read_dataset(path).dataset;
}

SplitSet load_splits(const std::string& path, const Dataset& ds) {
    if (path.empty()) throw UsageError("--splits is required");
    if (!fs::exists(path)) throw DataError("splits file '" + path + "' does not exist");
    SplitSet sp = splits_from_json(read_json(path));
    const auto problem = check_split_invariants(sp, ds);
    if (!problem.empty()) throw DataError("splits do not fit the dataset: " + problem);
    return sp;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Test-time adaptation with multimodal reconstruction on synthetic geospatial tiles", "tttlab"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--out", common.out, "output directory (default $" + std::string(kOutDirEnv) + " or .)");
        sub->add_flag("--force", common.force, "replace existing outputs");
    };

    WorldOptions world;
    TrainOptions tr;
    TttOptions tt;
    std::string dataset, splits_file, checkpoint;
    std::uint64_t seed = 0, split_seed = 0;
    int subset = 100;
    bool subset_check = false;
    std::vector<std::string> method_names{"jt", "ttt-mmr", "ttt-mmr-geo"};
    std::vector<std::string> split_names{"random", "geo"};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::vector<int> subsets{100};

    auto* c_gen = app.add_subcommand("gen-data", "generate the synthetic world");
    add_common(c_gen);
    world.add(c_gen);
    c_gen->add_option("--seed", world.seed, "world seed (alias of --data-seed)");

    auto* c_split = app.add_subcommand("split", "cut train/validation/test splits");
    add_common(c_split);
    c_split->add_option("--dataset", dataset, "dataset file");
    c_split->add_option("--seed", split_seed, "split seed")->capture_default_str();
    c_split->add_flag("--subset-check", subset_check, "verify that 5% <= 50% <= 100% are nested");

    auto* c_train = app.add_subcommand("train", "joint training on a split subset");
    add_common(c_train);
    c_train->add_option("--dataset", dataset, "dataset file");
    c_train->add_option("--splits", splits_file, "splits JSON");
    c_train->add_option("--subset", subset, "training subset percent: 5, 50 or 100")->capture_default_str();
    c_train->add_option("--seed", seed, "training seed")->capture_default_str();
    tr.add(c_train);

    auto* c_ttt = app.add_subcommand("ttt", "evaluate JT and test-time adaptation from a checkpoint");
    add_common(c_ttt);
    c_ttt->add_option("--dataset", dataset, "dataset file");
    c_ttt->add_option("--splits", splits_file, "splits JSON");
    c_ttt->add_option("--checkpoint", checkpoint, "checkpoint file");
    c_ttt->add_option("--method", method_names, "jt, ttt-mmr, ttt-mmr-geo (repeatable)")->capture_default_str();
    c_ttt->add_option("--split", split_names, "random, geo (repeatable)")->capture_default_str();
    tt.add(c_ttt);

    auto* c_report = app.add_subcommand("report", "aggregate result files into CSV and JSON");
    add_common(c_report);

    auto* c_pipe = app.add_subcommand("pipeline", "gen-data, split, train, ttt and report in one go");
    add_common(c_pipe);
    world.add(c_pipe);
    c_pipe->add_option("--split-seed", split_seed)->capture_default_str();
    c_pipe->add_option("--seeds", seeds, "training seeds")->capture_default_str();
    c_pipe->add_option("--subset", subsets, "training subsets (repeatable)")->capture_default_str();
    c_pipe->add_option("--method", method_names, "methods (repeatable)")->capture_default_str();
    c_pipe->add_option("--split", split_names, "test splits (repeatable)")->capture_default_str();
    tr.add(c_pipe);
    tt.add(c_pipe);

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        const fs::path dir = common.dir();
        if (*c_gen) {
            gen_data(world.resolved(), world.seed, dataset_path(dir), common.force, out);
        } else if (*c_split) {
            const Dataset ds = load_dataset(dataset);
            split(ds, split_seed, splits_path(dir), common.force, subset_check, out);
        } else if (*c_train) {
            const Dataset ds = load_dataset(dataset);
            const SplitSet sp = load_splits(splits_file, ds);
            train(ds, sp, subset, tr.resolved(seed), tr.arch, dir, common.force, out);
        } else if (*c_ttt) {
            const Dataset ds = load_dataset(dataset);
            const SplitSet sp = load_splits(splits_file, ds);
            if (checkpoint.empty()) throw UsageError("--checkpoint is required");
            if (!fs::exists(checkpoint)) throw DataError("checkpoint '" + checkpoint + "' does not exist");
            const Checkpoint ck = read_checkpoint(checkpoint);
            tt.config.validate();
            ttt(ds, sp, ck, parse_list(method_names, parse_method), parse_list(split_names, parse_test_split),
                tt.config, dir, common.force, out);
        } else if (*c_report) {
            report(dir, common.force, out);
        } else if (*c_pipe) {
            const auto methods = parse_list(method_names, parse_method);
            const auto test_splits = parse_list(split_names, parse_test_split);
            for (int s : subsets) check_subset(s);
            if (seeds.empty()) throw UsageError("--seeds needs at least one seed");
            tt.config.validate();
            tr.resolved(seeds.front());
            gen_data(world.resolved(), world.seed, dataset_path(dir), common.force, out);
            const Dataset ds = read_dataset(dataset_path(dir)).dataset;
            const SplitSet sp = split(ds, split_seed, splits_path(dir), common.force, true, out);
            for (int s : subsets) {
                for (auto sd : seeds) {
                    const auto tc = tr.resolved(sd);
                    train(ds, sp, s, tc, tr.arch, dir, common.force, out);
                    const Checkpoint ck = read_checkpoint(checkpoint_path(dir, s, sd));
                    ttt(ds, sp, ck, methods, test_splits, tt.config, dir, common.force, out);
                }
            }
            report(dir, common.force, out);
        }
        return kExitOk;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const Error& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    }
}

}  // namespace tttlab
