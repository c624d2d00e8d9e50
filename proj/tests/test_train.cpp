#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "tttlab/checkpoint.hpp"
#include "tttlab/errors.hpp"
#include "tttlab/train.hpp"

using namespace tttlab;
using namespace tttlab::testing;

namespace {

// Regression target the encoder can actually see: mean of the first input band.
std::vector<NormalizedTile> learnable_tiles(const ModelConfig& cfg, Rng& rng, std::size_t n) {
    auto tiles = random_tiles(cfg, rng, n);
    for (auto& t : tiles) {
        double s = 0;
        const std::size_t hw = cfg.tile_size * cfg.tile_size;
        for (std::size_t i = 0; i < hw; ++i) s += t.values[0][i];
        t.label = {s / static_cast<double>(hw)};
    }
    return tiles;
}

TrainConfig small_config() {
    TrainConfig c;
    c.epochs = 3;
    c.batch_size = 4;
    c.max_lr = 1e-2;
    c.min_lr = 1e-4;
    c.warmup_epochs = 1;
    c.seed = 11;
    return c;
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("tttlab_test_" + name);
}

}  // namespace

TEST_CASE("learning-rate schedule") {
    TrainConfig c;  // paper defaults: 100 epochs, 10 warm-up, 1e-4 -> 1e-6
    const std::size_t spe = 7, total = spe * c.epochs, warm = spe * c.warmup_epochs;
    CHECK(lr_at(0, spe, c) == doctest::Approx(1e-4 / warm).epsilon(1e-15));
    CHECK(lr_at(warm - 1, spe, c) == doctest::Approx(1e-4).epsilon(1e-15));
    CHECK(lr_at(total - 1, spe, c) == doctest::Approx(1e-6).epsilon(1e-15));
    for (std::size_t s = 1; s < warm; ++s) CHECK(lr_at(s, spe, c) > lr_at(s - 1, spe, c));
    for (std::size_t s = warm; s < total; ++s) CHECK(lr_at(s, spe, c) < lr_at(s - 1, spe, c));
    CHECK_THROWS_AS(lr_at(total, spe, c), UsageError);
    // no warm-up: cosine from the first step
    CHECK(lr_at(0, 10, 0, 1.0, 0.0) == 1.0);
    CHECK(lr_at(9, 10, 0, 1.0, 0.0) == doctest::Approx(0.0));
}

TEST_CASE("train config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.warmup_epochs = c.epochs;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = TrainConfig{};
    c.min_lr = 1.0;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c.min_lr = 0.0;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = TrainConfig{};
    c.mode = TrainMode::linear_probe;
    CHECK(train_config_from_json(train_config_to_json(c)).mode == TrainMode::linear_probe);
}

TEST_CASE("adamw examples") {
    SUBCASE("zero gradient and zero decay leave parameters unchanged") {
        std::vector<double> p{1.5, -2.0};
        AdamState s;
        adamw_step(p, GradVector(2), s, 1e-3, 0.0);
        CHECK(p == std::vector<double>{1.5, -2.0});
    }
    SUBCASE("first step closed form") {
        const double p0 = 0.7, g = -0.3, lr = 1e-3, wd = 0.05;
        std::vector<double> p{p0};
        AdamState s;
        adamw_step(p, GradVector(std::vector<double>{g}), s, lr, wd);
        // m_hat = g, v_hat = g^2
        const double expect = p0 * (1 - lr * wd) - lr * g / (std::abs(g) + 1e-8);
        CHECK(std::abs(p[0] - expect) < 1e-12);
        // second step by hand
        const double g2 = 0.5;
        const double m = 0.9 * 0.1 * g + 0.1 * g2, v = 0.999 * 0.001 * g * g + 0.001 * g2 * g2;
        const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
        const double expect2 = expect * (1 - lr * wd) - lr * mh / (std::sqrt(vh) + 1e-8);
        adamw_step(p, GradVector(std::vector<double>{g2}), s, lr, wd);
        CHECK(std::abs(p[0] - expect2) < 1e-12);
    }
    SUBCASE("decay alone shrinks by 1 - lr wd") {
        std::vector<double> p{2.0, -3.0};
        AdamState s;
        adamw_step(p, GradVector(2), s, 0.1, 0.05);
        CHECK(p[0] == 2.0 * (1 - 0.1 * 0.05));
        CHECK(p[1] == -3.0 * (1 - 0.1 * 0.05));
    }
    SUBCASE("mismatched state") {
        std::vector<double> p{1.0};
        AdamState s;
        CHECK_THROWS_AS(adamw_step(p, GradVector(2), s, 0.1, 0.0), ShapeError);
    }
}

TEST_CASE("encoder gradient is the sum of the two loss terms' gradients") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        auto cfg = tiny_config(random_task(rng));
        Model model(cfg);
        auto p = model.init(trial);
        perturb(p.encoder, rng, 0.3);
        perturb(p.task, rng, 0.3);
        perturb(p.modality, rng, 0.3);
        auto tiles = random_tiles(cfg, rng, 3);
        auto batch = pointers(tiles);
        const auto joint = joint_gradients(model, p, batch);

        Tape t1;
        auto e1 = model.encode(t1, p.encoder, batch);
        auto task_grad = t1.backward(model.task_loss(t1, model.decode_task(t1, e1, p.task, 3), batch)).of(p.encoder);

        Tape t2;
        auto e2 = model.encode(t2, p.encoder, batch);
        auto recs = model.decode_modalities(t2, e2, p.modality, 3);
        std::vector<GradVector> per;
        for (std::size_t g = 0; g < recs.size(); ++g) {
            auto l = model.modality_loss(t2, recs[g], g, batch);
            if (l.present) per.push_back(t2.backward(l.loss).of(p.encoder));
        }
        REQUIRE(per.size() == joint.losses.modalities);
        for (std::size_t i = 0; i < joint.encoder.size(); ++i) {
            double recon = 0;
            for (const auto& g : per) recon += g[i] / static_cast<double>(per.size());
            CHECK(std::abs(joint.encoder[i] - (task_grad[i] + recon)) < 1e-10);
        }
    }
}

TEST_CASE("a modality absent on every batch tile contributes nothing") {
    auto cfg = tiny_config({TaskType::regression_tile, 0});
    Model model(cfg);
    Rng rng(2);
    auto tiles = random_tiles(cfg, rng, 4, 0.0);
    for (auto& t : tiles) {  // drop "pc" everywhere
        t.values[1].clear();
        t.valid[1].clear();
        t.valid_count[1] = 0;
    }
    auto batch = pointers(tiles);
    auto p = model.init(3);
    perturb(p.encoder, rng, 0.3);
    const auto base = joint_gradients(model, p, batch);
    CHECK(base.losses.modalities == 3);

    // its decoder channels get no gradient, and changing them changes nothing
    const auto& grp = model.groups()[1];
    const auto& blk = p.modality.block("pixel.weight");
    const std::size_t cols = blk.shape[1];
    for (std::size_t r = 0; r < blk.shape[0]; ++r)
        for (std::size_t c = grp.offset; c < grp.offset + grp.count; ++c) {
            CHECK(base.modality[blk.offset + r * cols + c] == 0.0);
            p.modality.values()[blk.offset + r * cols + c] += rng.normal();
        }
    const auto moved = joint_gradients(model, p, batch);
    CHECK(moved.encoder == base.encoder);
    CHECK(moved.losses.reconstruction == base.losses.reconstruction);
}

TEST_CASE("a zero learning-rate floor is rejected before training") {
    auto cfg = tiny_config({TaskType::regression_tile, 0});
    Model model(cfg);
    Rng rng(3);
    auto tiles = learnable_tiles(cfg, rng, 12);
    auto batch = pointers(tiles);
    TrainConfig c = small_config();
    c.min_lr = 0.0;
    CHECK_THROWS_AS(joint_train(model, model.init(4), std::span(batch).first(8), std::span(batch).subspan(8), c),
                    UsageError);
}

TEST_CASE("linear probe freezes the encoder and is reproducible") {
    auto cfg = tiny_config({TaskType::regression_tile, 0});
    Model model(cfg);
    Rng rng(5);
    auto tiles = learnable_tiles(cfg, rng, 16);
    auto batch = pointers(tiles);
    auto init = model.init(6);
    TrainConfig c = small_config();
    c.mode = TrainMode::linear_probe;
    auto a = joint_train(model, init, std::span(batch).first(12), std::span(batch).subspan(12), c);
    auto b = joint_train(model, init, std::span(batch).first(12), std::span(batch).subspan(12), c);
    CHECK(a.best.encoder == init.encoder);
    CHECK(a.best.encoder.checksum() == init.encoder.checksum());
    CHECK(a.best.task == b.best.task);
    CHECK(a.best.modality == b.best.modality);
    CHECK_FALSE(a.best.task == init.task);
}

TEST_CASE("finetuning is deterministic and keeps the best validation epoch") {
    auto cfg = tiny_config({TaskType::regression_tile, 0});
    Model model(cfg);
    Rng rng(7);
    auto tiles = learnable_tiles(cfg, rng, 20);
    auto batch = pointers(tiles);
    auto init = model.init(8);
    TrainConfig c = small_config();
    c.epochs = 6;
    auto train = std::span(batch).first(14);
    auto val = std::span(batch).subspan(14);
    auto a = joint_train(model, init, train, val, c);
    // tile order in the input does not matter: tiles are sorted by id first
    std::vector<const NormalizedTile*> reversed(train.rbegin(), train.rend());
    auto b = joint_train(model, init, reversed, val, c);
    CHECK(a.best == b.best);
    CHECK(a.log == b.log);
    double best = -1e300;
    std::size_t best_epoch = 0;
    for (const auto& line : a.log) {
        if (line["validation_metric"].get<double>() > best) {
            best = line["validation_metric"];
            best_epoch = line["epoch"];
        }
    }
    CHECK(a.best_epoch == best_epoch);
    CHECK(a.best_metric == best);
    CHECK(evaluate(model, a.best, val, 4) == a.best_metric);
}

TEST_CASE("training loss decreases on a learnable task") {
    // every objective is learnable: the label and the reconstruction target
    // are both functions of the input
    auto cfg = tiny_config({TaskType::regression_tile, 0}, 4, 2, 8);
    cfg.task_modalities = {"px"};
    Model model(cfg);
    Rng rng(9);
    auto tiles = learnable_tiles(cfg, rng, 24);
    auto batch = pointers(tiles);
    TrainConfig c;
    c.epochs = 200;
    c.batch_size = 16;  // full batch: epoch averages are not reshuffling noise
    c.max_lr = 1e-2;
    c.min_lr = 1e-5;
    c.warmup_epochs = 10;
    c.weight_decay = 0.0;
    c.seed = 1;
    auto r = joint_train(model, model.init(10), std::span(batch).first(16), std::span(batch).subspan(16), c);
    std::size_t rises = 0, counted = 0;
    for (std::size_t e = c.warmup_epochs + 1; e < r.log.size(); ++e) {
        ++counted;
        rises += r.log[e]["train_task_loss"].get<double>() > r.log[e - 1]["train_task_loss"].get<double>();
    }
    CHECK(static_cast<double>(rises) <= 0.05 * static_cast<double>(counted));
    CHECK(r.log.back()["train_task_loss"].get<double>() < 0.1 * r.log.front()["train_task_loss"].get<double>());
}

TEST_CASE("a non-finite value aborts training with a diagnostic") {
    auto cfg = tiny_config({TaskType::regression_tile, 0});
    Model model(cfg);
    Rng rng(11);
    auto tiles = learnable_tiles(cfg, rng, 8);
    tiles[2].values[0][0] = std::nan("");
    auto batch = pointers(tiles);
    CHECK_THROWS_WITH_AS(joint_train(model, model.init(1), std::span(batch).first(6), std::span(batch).subspan(6),
                                     small_config()),
                         doctest::Contains("epoch 1"), NumericError);
}

TEST_CASE("checkpoint round-trip") {
    auto cfg = tiny_config({TaskType::multilabel, 3});
    Model model(cfg);
    Rng rng(12);
    Checkpoint ck;
    ck.config = cfg;
    ck.params = model.init(2);
    perturb(ck.params.encoder, rng);
    ck.norm.modalities.resize(cfg.schema.size());
    ck.norm.modalities[0] = {{0.5, 2.0}, {-1.0, 0.25}};
    ck.norm.modalities[2] = {{3.0, 1.0}, {4.0, 1.5}};
    ck.epoch = 7;
    ck.validation_metric = 0.625;
    ck.seed = 99;
    ck.extras = {{"note", "x"}};
    const auto path = temp_path("ck.bin");
    write_checkpoint(path, ck);
    const auto back = read_checkpoint(path);
    CHECK(back.params == ck.params);
    CHECK(back.norm == ck.norm);
    CHECK(back.epoch == 7);
    CHECK(back.validation_metric == 0.625);
    CHECK(back.seed == 99);
    CHECK(back.extras == ck.extras);
    CHECK(model_config_to_json(back.config) == model_config_to_json(cfg));

    // truncation and foreign files are data errors
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 8);
    CHECK_THROWS_AS(read_checkpoint(path), DataError);
    {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os << "not a checkpoint at all";
    }
    CHECK_THROWS_AS(read_checkpoint(path), DataError);
    std::filesystem::remove(path);
}
