#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "tttlab/errors.hpp"
#include "tttlab/ttt.hpp"

using namespace tttlab;
using namespace tttlab::testing;

namespace {

struct Setup {
    ModelConfig cfg;
    Model model;
    ModelParams params;
    std::vector<NormalizedTile> tiles;
};

Setup make_setup(std::uint64_t seed, std::size_t n, double missing = 0.2) {
    Rng rng(seed);
    auto cfg = tiny_config({TaskType::regression_tile, 0});
    Setup s{cfg, Model(cfg), {}, {}};
    s.params = s.model.init(seed);
    perturb(s.params.encoder, rng, 0.3);
    perturb(s.params.task, rng, 0.3);
    perturb(s.params.modality, rng, 0.3);
    s.tiles = random_tiles(cfg, rng, n, missing);
    return s;
}

GradVector random_grad(Rng& rng, std::size_t n) {
    GradVector g(n);
    for (double& v : g.values) v = rng.normal();
    return g;
}

}  // namespace

TEST_CASE("batch reconstruction losses") {
    auto s = make_setup(1, 6);
    auto batch = pointers(s.tiles);

    SUBCASE("identical tiles give the single-tile loss") {
        std::vector<const NormalizedTile*> same(4, &s.tiles[0]);
        const NormalizedTile* one[] = {&s.tiles[0]};
        auto a = batch_reconstruction_losses(s.model, s.params.encoder, s.params.modality, same, false);
        auto b = batch_reconstruction_losses(s.model, s.params.encoder, s.params.modality, one, false);
        for (std::size_t g = 0; g < a.loss.size(); ++g) CHECK(a.loss[g] == doctest::Approx(b.loss[g]).epsilon(1e-14));
    }
    SUBCASE("per-tile loop oracle") {
        auto r = batch_reconstruction_losses(s.model, s.params.encoder, s.params.modality, batch, false);
        for (std::size_t g = 0; g < r.loss.size(); ++g) {
            double acc = 0;
            int n = 0;
            for (const auto& tile : s.tiles) {
                if (!tile.has(g)) continue;
                const NormalizedTile* one[] = {&tile};
                acc += batch_reconstruction_losses(s.model, s.params.encoder, s.params.modality, one, false).loss[g];
                ++n;
            }
            CHECK(r.present[g] == (n > 0));
            if (n) CHECK(std::abs(r.loss[g] - acc / n) < 1e-12);
        }
    }
    SUBCASE("perfect decoder on a continuous modality") {
        std::vector<const NormalizedTile*> same(3, &s.tiles[0]);
        // tile-level "tc": zero weights, bias equal to the target
        auto alpha = s.params.modality;
        const auto& blk = alpha.block("tile.weight");
        for (std::size_t r = 0; r < blk.shape[0]; ++r)
            for (std::size_t c = 0; c < 2; ++c) alpha.values()[blk.offset + r * blk.shape[1] + c] = 0.0;
        for (std::size_t c = 0; c < 2; ++c) alpha.block_values("tile.bias")[c] = s.tiles[0].values[2][c];
        auto r = batch_reconstruction_losses(s.model, s.params.encoder, alpha, same);
        CHECK(r.loss[2] == 0.0);
        CHECK(grad_norm(r.gradient[2]) == 0.0);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(batch_reconstruction_losses(s.model, s.params.encoder, s.params.modality, TileBatch{}), DataError);
        auto bare = s.tiles[0];
        for (std::size_t m = 0; m < bare.values.size(); ++m) {
            std::fill(bare.valid[m].begin(), bare.valid[m].end(), 0);
            bare.valid_count[m] = 0;
        }
        const NormalizedTile* one[] = {&bare};
        CHECK_THROWS_AS(batch_reconstruction_losses(s.model, s.params.encoder, s.params.modality, one), DataError);
    }
}

TEST_CASE("normalized mean gradient") {
    Rng rng(2);
    SUBCASE("single modality gives its unit vector") {
        const GradVector g = random_grad(rng, 7);
        auto d = normalized_mean_gradient(std::vector{g}, {true});
        CHECK(std::abs(grad_norm(d.value) - 1.0) < 1e-12);
        CHECK(d.used == 1);
        for (std::size_t j = 0; j < 7; ++j) CHECK(d.value[j] * grad_norm(g) == doctest::Approx(g[j]).epsilon(1e-14));
    }
    SUBCASE("opposite gradients cancel") {
        const GradVector g = random_grad(rng, 5);
        GradVector neg = g;
        for (double& v : neg.values) v = -v;
        auto d = normalized_mean_gradient(std::vector{g, neg}, {true, true});
        for (double v : d.value.values) CHECK(std::abs(v) < 1e-15);
    }
    SUBCASE("three random 5-vectors against normalize-then-average") {
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<GradVector> gs{random_grad(rng, 5), random_grad(rng, 5), random_grad(rng, 5)};
            for (double& v : gs[1].values) v *= 1e3;  // very different scales
            auto d = normalized_mean_gradient(gs, {true, true, true});
            for (std::size_t j = 0; j < 5; ++j) {
                long double acc = 0;
                for (const auto& g : gs) {
                    long double n = 0;
                    for (double v : g.values) n += static_cast<long double>(v) * v;
                    acc += g[j] / std::sqrt(n);
                }
                CHECK(std::abs(d.value[j] - static_cast<double>(acc / 3)) < 1e-12);
            }
        }
    }
    SUBCASE("absent and zero-norm gradients are skipped") {
        const GradVector g = random_grad(rng, 4);
        auto d = normalized_mean_gradient(std::vector{g, random_grad(rng, 4), GradVector(4)}, {true, false, true});
        CHECK(d.used == 1);
        CHECK(std::abs(grad_norm(d.value) - 1.0) < 1e-12);
        auto zero = normalized_mean_gradient(std::vector{GradVector(4)}, {true});
        CHECK(zero.used == 0);
        CHECK(zero.value == GradVector(4));
    }
}

TEST_CASE("ttt update") {
    Rng rng(3);
    auto s = make_setup(3, 4);
    SUBCASE("zero direction leaves theta unchanged") {
        auto theta = s.params.encoder;
        ttt_update(theta, GradVector(theta.size()), 1e-2);
        CHECK(theta == s.params.encoder);
    }
    SUBCASE("single modality moves exactly lambda") {
        auto theta = s.params.encoder;
        auto d = normalized_mean_gradient(std::vector{random_grad(rng, theta.size())}, {true});
        ttt_update(theta, d.value, 1e-2);
        double sq = 0;
        for (std::size_t j = 0; j < theta.size(); ++j) sq += std::pow(theta.values()[j] - s.params.encoder.values()[j], 2);
        CHECK(std::sqrt(sq) == doctest::Approx(1e-2).epsilon(1e-12));
    }
    SUBCASE("two modalities against the direct formula") {
        for (int trial = 0; trial < 20; ++trial) {
            auto theta = s.params.encoder;
            std::vector<GradVector> gs{random_grad(rng, theta.size()), random_grad(rng, theta.size())};
            auto d = normalized_mean_gradient(gs, {true, true});
            ttt_update(theta, d.value, 1e-2);
            const double n0 = grad_norm(gs[0]), n1 = grad_norm(gs[1]);
            for (std::size_t j = 0; j < theta.size(); ++j) {
                const double expect = s.params.encoder.values()[j] - (1e-2 / 2) * (gs[0][j] / n0 + gs[1][j] / n1);
                CHECK(std::abs(theta.values()[j] - expect) < 1e-12);
            }
        }
    }
    SUBCASE("the decoders are not touched by adaptation") {
        auto theta = s.params.encoder;
        const auto alpha = s.params.modality;
        adaptation_step(s.model, theta, s.params.modality, pointers(s.tiles), 1e-2);
        CHECK(s.params.modality == alpha);
        CHECK_FALSE(theta == s.params.encoder);
    }
}

TEST_CASE("iteration selection rule") {
    CHECK(round_half_even(0.5) == 0);
    CHECK(round_half_even(1.5) == 2);
    CHECK(round_half_even(2.5) == 2);
    CHECK(round_half_even(2.4) == 2);
    CHECK(round_half_even(2.6) == 3);

    // adaptation hurts every batch
    CHECK(choose_iterations({{1, 2, 3, 4, 5, 6}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}}).iterations == 0);
    // best at the last iteration everywhere
    CHECK(choose_iterations({{6, 5, 4, 3, 2, 1}, {9, 8, 7, 6, 5, 4}}).iterations == 5);
    auto sel = choose_iterations({{5, 1, 2, 3, 4, 5}, {5, 4, 1, 2, 3, 4}, {5, 4, 3, 1, 2, 3}});
    CHECK(sel.best == std::vector<std::size_t>{1, 2, 3});
    CHECK(sel.iterations == 2);
    // ties resolve to the earliest iteration
    CHECK(choose_iterations({{1, 1, 1}}).iterations == 0);
    CHECK_THROWS_AS(choose_iterations({}), DataError);
}

TEST_CASE("select_iterations on a model") {
    auto s = make_setup(4, 16);
    TttConfig c;
    c.batch_size = 4;
    auto sel = select_iterations(s.model, s.params, pointers(s.tiles), c);
    CHECK(sel.best.size() == 4);
    for (const auto& curve : sel.task_loss) CHECK(curve.size() == 6);
    CHECK(sel.iterations <= 5);
    c.lr = 0.0;
    CHECK_THROWS_AS(select_iterations(s.model, s.params, pointers(s.tiles), c), UsageError);
    c.lr = 1e-2;
    CHECK_THROWS_AS(select_iterations(s.model, s.params, TileBatch{}, c), DataError);
}

TEST_CASE("run_ttt: no-op adaptation reproduces plain inference") {
    auto s = make_setup(5, 20);
    auto tiles = pointers(s.tiles);
    TttConfig c;
    c.batch_size = 4;
    auto plain = s.model.predict(s.params.encoder, s.params.task, tiles);
    auto check_plain = [&](const TttRun& run) {
        REQUIRE(run.predictions.size() == tiles.size());
        for (const auto& p : run.predictions) CHECK(p.values == plain[static_cast<std::size_t>(p.id)]);
    };
    check_plain(run_ttt(s.model, s.params, tiles, c, 0));
    auto adapted = run_ttt(s.model, s.params, tiles, c, 3);
    bool differs = false;
    for (const auto& p : adapted.predictions) differs = differs || p.values != plain[static_cast<std::size_t>(p.id)];
    CHECK(differs);
    CHECK_THROWS_AS(run_ttt(s.model, s.params, tiles, c, 6), UsageError);
}

TEST_CASE("run_ttt: reset and batch independence") {
    auto s = make_setup(6, 27);
    auto tiles = pointers(s.tiles);
    const auto before = s.params.encoder.checksum();
    for (Batching mode : {Batching::random, Batching::geographic}) {
        TttConfig c;
        c.batching = mode;
        c.seed = 3;
        auto batches = make_batches(tiles, c);
        auto run = run_ttt(s.model, s.params, batches, c, 4);
        for (const auto& tr : run.traces) {
            CHECK(tr.start_checksum == before);
            CHECK(tr.iterations == 4);
            CHECK(tr.losses.size() == 5);
            CHECK(tr.bbox.has_value() == (mode == Batching::geographic));
        }
        std::reverse(batches.begin(), batches.end());
        auto rev = run_ttt(s.model, s.params, batches, c, 4);
        std::rotate(batches.begin(), batches.begin() + 1, batches.end());
        auto rot = run_ttt(s.model, s.params, batches, c, 4);
        REQUIRE(run.predictions.size() == 27);
        for (std::size_t i = 0; i < 27; ++i) {
            CHECK(run.predictions[i].id == rev.predictions[i].id);
            CHECK(run.predictions[i].values == rev.predictions[i].values);
            CHECK(run.predictions[i].values == rot.predictions[i].values);
        }
    }
    CHECK(s.params.encoder.checksum() == before);
}

TEST_CASE("batching modes partition the tiles") {
    auto s = make_setup(7, 37);
    auto tiles = pointers(s.tiles);
    for (Batching mode : {Batching::random, Batching::geographic}) {
        TttConfig c;
        c.batching = mode;
        auto batches = make_batches(tiles, c);
        CHECK(batches.size() == 4);
        std::set<std::int64_t> ids;
        std::size_t big = 0;
        for (const auto& b : batches) {
            for (const auto* t : b.tiles) CHECK(ids.insert(t->id).second);
            big += b.tiles.size() == 8 + 37 % 8;
            if (b.bbox) {
                for (const auto* t : b.tiles) CHECK(b.bbox->contains(t->lonlat));
            }
        }
        CHECK(ids.size() == 37);
        CHECK(big == 1);
    }
}

TEST_CASE("scaling one modality's targets keeps its contribution at unit norm") {
    auto s = make_setup(8, 6, 0.0);
    auto scaled = s.tiles;
    for (auto& t : scaled)
        for (double& v : t.values[2]) v *= 10.0;  // tile-level continuous target
    auto a = batch_reconstruction_losses(s.model, s.params.encoder, s.params.modality, pointers(s.tiles));
    auto b = batch_reconstruction_losses(s.model, s.params.encoder, s.params.modality, pointers(scaled));
    CHECK(b.loss[2] != doctest::Approx(a.loss[2]));
    for (const auto* r : {&a, &b}) {
        auto one = normalized_mean_gradient(std::vector{r->gradient[2]}, {true});
        CHECK(std::abs(grad_norm(one.value) - 1.0) < 1e-10);
    }
}

TEST_CASE("traces serialize") {
    auto s = make_setup(9, 16);
    TttConfig c;
    c.batching = Batching::geographic;
    auto run = run_ttt(s.model, s.params, pointers(s.tiles), c, 2);
    auto j = trace_to_json(run.traces[0], s.model);
    CHECK(j["iterations"] == 2);
    CHECK(j["reconstruction_losses"].size() == 3);
    CHECK(j["bbox"].size() == 4);
    CHECK(j["reconstruction_losses"][0].contains("px"));
    CHECK(ttt_config_from_json(ttt_config_to_json(c)).batching == Batching::geographic);
}
