#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "tttlab/autodiff.hpp"
#include "tttlab/errors.hpp"
#include "tttlab/rng.hpp"

using namespace tttlab;
using tttlab::testing::finite_difference;
using tttlab::testing::max_relative_error;

namespace {

void randomize(ParamStore& store, Rng& rng, double scale = 1.0) {
    for (double& v : store.values()) v = rng.normal(0.0, scale);
}

Tensor random_tensor(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.normal();
    return t;
}

}  // namespace

TEST_CASE("forward examples") {
    Tape t;
    auto x = t.constant(Tensor::matrix(1, 2, {1, 2}));
    auto w = t.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
    auto b = t.constant(Tensor::vector({0, 0}));
    auto y = affine(t, x, w, b);
    CHECK(t.value(y).values() == std::vector<double>{1, 2});

    CHECK(t.value(tanh(t, t.constant(Tensor::scalar(0.0)))).item() == 0.0);

    auto pred = t.constant(Tensor::vector({1, 3}));
    CHECK(t.value(mse(t, pred, Tensor::vector({1, 1}))).item() == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("derivative of x squared at 3") {
    ParamStore s("x");
    s.add_block("x", {});
    s.values()[0] = 3.0;
    Tape t;
    auto x = t.parameter(s, "x");
    auto g = t.backward(mul(t, x, x));
    CHECK(g.of(s)[0] == 6.0);
}

TEST_CASE("mse(Wx, y) gradient matches finite differences") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        ParamStore s("w");
        s.add_block("W", {3, 3});
        randomize(s, rng);
        const Tensor x = random_tensor({1, 3}, rng);
        const Tensor y = random_tensor({1, 3}, rng);
        auto loss = [&] {
            Tape t;
            return t.value(mse(t, matmul(t, t.constant(x), t.parameter(s, "W")), y)).item();
        };
        Tape t;
        auto g = t.backward(mse(t, matmul(t, t.constant(x), t.parameter(s, "W")), y)).of(s);
        auto fd = finite_difference(loss, s.values());
        CHECK(max_relative_error(g.values, fd) < 1e-6);
    }
}

TEST_CASE("every primitive passes the finite-difference check on 100 instances") {
    Rng rng(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t batch = 1 + rng.index(2), h = 1 + rng.index(3), w = 1 + rng.index(3);
        const std::size_t c = 1 + rng.index(3), k = 2 + rng.index(3);
        const std::size_t rows = batch * h * w;
        ParamStore s("p");
        s.add_block("x", {rows, c});
        s.add_block("W", {c, k});
        s.add_block("b", {k});
        s.add_block("gamma", {k});
        s.add_block("beta", {k});
        randomize(s, rng);
        const GridResize grid{batch, h, w, h + 1 + rng.index(3), w + 1 + rng.index(3)};
        const std::size_t up_rows = batch * grid.out_h * grid.out_w;
        const Tensor target = random_tensor({up_rows, k}, rng);
        Tensor weight({up_rows, k});
        for (double& v : weight.data()) v = rng.bernoulli(0.8) ? rng.uniform(0.1, 1.0) : 0.0;
        std::vector<std::size_t> classes(batch);
        std::vector<double> row_w(batch);
        for (std::size_t i = 0; i < batch; ++i) {
            classes[i] = rng.index(k);
            row_w[i] = rng.uniform(0.2, 1.0);
        }
        Tensor bin_target({batch, k});
        for (double& v : bin_target.data()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;

        auto build = [&](Tape& t) {
            auto x = t.parameter(s, "x");
            auto hid = tanh(t, affine(t, x, t.parameter(s, "W"), t.parameter(s, "b")));
            auto up = upsample_bilinear(t, hid, grid);
            auto l1 = weighted_squared_error(t, up, target, weight);
            auto pooled = group_mean(t, up, grid.out_h * grid.out_w);
            auto ln = layer_norm(t, pooled, t.parameter(s, "gamma"), t.parameter(s, "beta"));
            auto l2 = weighted_softmax_cross_entropy(t, ln, classes, row_w);
            auto l3 = weighted_bce_with_logits(t, add(t, pooled, scale(t, ln, 0.5)), bin_target,
                                               Tensor(bin_target.shape(), std::vector<double>(bin_target.size(), 0.3)));
            auto tail = slice_columns(t, up, k - 2, 2);
            auto l4 = scale(t, sum(t, mul(t, tail, tail)), 0.05);
            return add(t, add(t, add(t, l1, l2), l4), add(t, l3, scale(t, sum(t, mul(t, hid, hid)), 0.1)));
        };
        auto f = [&] {
            Tape t;
            return t.value(build(t)).item();
        };
        Tape t;
        auto g = t.backward(build(t)).of(s);
        auto fd = finite_difference(f, s.values());
        worst = std::max(worst, max_relative_error(g.values, fd));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("chain rule composes across stages") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        ParamStore s("w");
        s.add_block("W", {4, 3});
        ParamStore v("v");
        v.add_block("V", {3, 2});
        randomize(s, rng);
        randomize(v, rng);
        const Tensor x = random_tensor({5, 4}, rng);
        const Tensor y = random_tensor({5, 2}, rng);

        Tape full;
        auto h = tanh(full, matmul(full, full.constant(x), full.parameter(s, "W")));
        auto whole = full.backward(mse(full, matmul(full, h, full.parameter(v, "V")), y)).of(s);

        // Stage 2 alone: dL/dh, with h held as a parameter.
        ParamStore hs("h");
        hs.add_block("h", {5, 3});
        std::copy(full.value(h).data().begin(), full.value(h).data().end(), hs.values().begin());
        Tape t2;
        auto dldh = t2.backward(mse(t2, matmul(t2, t2.parameter(hs, "h"), t2.constant(v.block_tensor("V"))), y)).of(hs);

        // Stage 1 alone: vector-Jacobian product with dL/dh.
        Tape t1;
        auto h1 = tanh(t1, matmul(t1, t1.constant(x), t1.parameter(s, "W")));
        auto staged = t1.backward(sum(t1, mul(t1, h1, t1.constant(Tensor({5, 3}, dldh.values))))).of(s);
        for (std::size_t i = 0; i < whole.size(); ++i) CHECK(std::abs(whole[i] - staged[i]) < 1e-12);
    }
}

TEST_CASE("forward and backward are bitwise deterministic") {
    Rng rng(9);
    ParamStore s("w");
    s.add_block("W", {6, 6});
    randomize(s, rng);
    const Tensor x = random_tensor({4, 6}, rng);
    auto run = [&] {
        Tape t;
        auto y = tanh(t, matmul(t, t.constant(x), t.parameter(s, "W")));
        return t.backward(sum(t, mul(t, y, y))).of(s);
    };
    CHECK(run() == run());
}

TEST_CASE("grad_norm") {
    CHECK(grad_norm(GradVector({3.0, 4.0})) == 5.0);
    CHECK(grad_norm(GradVector(7)) == 0.0);
    Rng rng(3);
    GradVector v(10);
    double ss = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
        v[i] = rng.normal();
        ss += v[i] * v[i];
    }
    CHECK(std::abs(grad_norm(v) - std::sqrt(ss)) < 1e-12);
}

TEST_CASE("bilinear upsampling maps corners exactly and preserves constants") {
    Tape t;
    auto x = t.constant(Tensor::matrix(4, 1, {1, 2, 3, 4}));  // 2x2 grid
    auto up = upsample_bilinear(t, x, {1, 2, 2, 5, 5});
    const Tensor& v = t.value(up);
    CHECK(v.at(0, 0) == 1.0);
    CHECK(v.at(4, 0) == 2.0);
    CHECK(v.at(20, 0) == 3.0);
    CHECK(v.at(24, 0) == 4.0);
    CHECK(v.at(12, 0) == doctest::Approx(2.5));

    auto c = t.constant(Tensor::matrix(4, 2, {7, -1, 7, -1, 7, -1, 7, -1}));
    auto cu = upsample_bilinear(t, c, {1, 2, 2, 8, 8});
    for (std::size_t r = 0; r < 64; ++r) {
        CHECK(t.value(cu).at(r, 0) == doctest::Approx(7.0).epsilon(1e-15));
        CHECK(t.value(cu).at(r, 1) == doctest::Approx(-1.0).epsilon(1e-15));
    }
}

TEST_CASE("error paths") {
    Tape t;
    auto a = t.constant(Tensor::matrix(2, 3, std::vector<double>(6, 1.0)));
    auto b = t.constant(Tensor::matrix(2, 3, std::vector<double>(6, 1.0)));
    CHECK_THROWS_AS(matmul(t, a, b), ShapeError);
    CHECK_THROWS_AS(t.constant(Tensor::scalar(std::nan(""))), NumericError);
    auto big = t.constant(Tensor::scalar(1e300));
    CHECK_THROWS_AS(mul(t, big, big), NumericError);

    ParamStore s("w");
    s.add_block("W", {2});
    Tape t2;
    auto w = t2.parameter(s, "W");
    CHECK_THROWS_AS(t2.backward(w), UsageError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), ShapeError);
}
