#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "tttlab/errors.hpp"
#include "tttlab/metrics.hpp"
#include "tttlab/rng.hpp"

using namespace tttlab;

namespace {

double r2_oracle(const std::vector<double>& y, const std::vector<double>& f) {
    long double mean = 0, res = 0, tot = 0;
    for (double v : y) mean += v;
    mean /= y.size();
    for (std::size_t i = 0; i < y.size(); ++i) {
        res += (static_cast<long double>(y[i]) - f[i]) * (static_cast<long double>(y[i]) - f[i]);
        tot += (y[i] - mean) * (y[i] - mean);
    }
    return static_cast<double>(1.0L - res / tot);
}

// Precision at every positive's own threshold, ties ranked by input order.
double ap_oracle(const std::vector<double>& labels, const std::vector<double>& scores) {
    double total = 0, positives = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 1.0) continue;
        positives += 1;
        double above = 0, pos_above = 0;
        for (std::size_t j = 0; j < labels.size(); ++j) {
            const bool ahead = scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
            if (!ahead) continue;
            above += 1;
            pos_above += labels[j];
        }
        total += pos_above / above;
    }
    return total / positives;
}

// P(W+ >= observed) by enumerating every sign assignment of the ranks.
double wilcoxon_oracle(const std::vector<double>& d) {
    std::vector<double> nz;
    for (double x : d)
        if (x != 0) nz.push_back(x);
    const std::size_t n = nz.size();
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n; ++i) {
        double less = 0, equal = 0;
        for (std::size_t j = 0; j < n; ++j) {
            less += std::abs(nz[j]) < std::abs(nz[i]);
            equal += std::abs(nz[j]) == std::abs(nz[i]);
        }
        ranks[i] = less + (equal + 1) / 2;
    }
    double observed = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (nz[i] > 0) observed += ranks[i];
    std::size_t hits = 0;
    for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
        double w = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask >> i & 1) w += ranks[i];
        hits += w >= observed - 1e-9;
    }
    return static_cast<double>(hits) / static_cast<double>(std::size_t{1} << n);
}

}  // namespace

TEST_CASE("r_squared examples") {
    const std::vector<double> y{1, 2, 3};
    CHECK(r_squared(y, y) == 1.0);
    CHECK(r_squared(y, std::vector<double>{2, 2, 2}) == 0.0);
    CHECK(r_squared(y, std::vector<double>{1, 2, 2}) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK_THROWS_AS(r_squared(std::vector<double>{4, 4, 4}, y), DataError);
    CHECK_THROWS_AS(r_squared(std::vector<double>{1}, std::vector<double>{1}), DataError);
    CHECK_THROWS_AS(r_squared(y, std::vector<double>{1, 2}), ShapeError);
}

TEST_CASE("r_squared and AP match brute-force oracles on 1000 instances") {
    Rng rng(1);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng.index(40);
        std::vector<double> y(n), f(n), labels(n), scores(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = rng.normal(3, 2);
            f[i] = y[i] + rng.normal(0, 1.5);
            labels[i] = rng.bernoulli(0.3) ? 1.0 : 0.0;
            scores[i] = std::round(rng.normal() * 4) / 4;  // plenty of ties
        }
        if (std::none_of(labels.begin(), labels.end(), [](double v) { return v == 1.0; })) labels[0] = 1.0;
        CHECK(std::abs(r_squared(y, f) - r2_oracle(y, f)) < 1e-9);
        CHECK(std::abs(average_precision(labels, scores) - ap_oracle(labels, scores)) < 1e-9);
    }
}

TEST_CASE("average precision examples and invariance") {
    CHECK(average_precision(std::vector<double>{1, 1, 0, 0}, std::vector<double>{4, 3, 2, 1}) == 1.0);
    CHECK(average_precision(std::vector<double>{0, 1}, std::vector<double>{0.9, 0.1}) == 0.5);
    // stable tie order: the earlier item ranks first
    CHECK(average_precision(std::vector<double>{0, 1}, std::vector<double>{0.5, 0.5}) == 0.5);
    CHECK(average_precision(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}) == 1.0);
    CHECK_THROWS_AS(average_precision(std::vector<double>{0, 0}, std::vector<double>{1, 2}), DataError);

    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> labels(12), scores(12), mono(12);
        for (std::size_t i = 0; i < 12; ++i) {
            labels[i] = rng.bernoulli(0.4);
            scores[i] = rng.normal();
            mono[i] = std::exp(3 * scores[i]) + 1;
        }
        labels[rng.index(12)] = 1.0;
        CHECK(average_precision(labels, scores) == doctest::Approx(average_precision(labels, mono)).epsilon(1e-15));
        CHECK(std::abs(average_precision(labels, scores) - ap_oracle(labels, scores)) < 1e-12);
    }
}

TEST_CASE("r_squared shift invariance") {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> y(10), f(10), ys(10), fs(10), off(10);
        const double c = rng.uniform(-100, 100);
        for (std::size_t i = 0; i < 10; ++i) {
            y[i] = rng.normal();
            f[i] = y[i] + rng.normal(0, 0.5);
            ys[i] = y[i] + c;
            fs[i] = f[i] + c;
            off[i] = y[i] + 0.1;
        }
        CHECK(std::abs(r_squared(y, f) - r_squared(ys, fs)) < 1e-9);
        CHECK(r_squared(y, off) < 1.0);
    }
}

TEST_CASE("mean average precision") {
    // class 0 perfect, class 1 with its positive ranked second
    const std::vector<double> labels{1, 0, 0, 1};
    const std::vector<double> scores{0.9, 0.8, 0.1, 0.2};
    auto r = mean_average_precision(labels, scores, 2);
    CHECK(r.value == 0.75);
    CHECK(r.skipped.empty());

    auto all = mean_average_precision(std::vector<double>{1, 1, 0, 0}, std::vector<double>{1, 1, 0, 0}, 2);
    CHECK(all.value == 1.0);

    auto skip = mean_average_precision(std::vector<double>{1, 0, 0, 0}, std::vector<double>{1, 0, 0, 1}, 2);
    CHECK(skip.skipped == std::vector<std::size_t>{1});
    CHECK(skip.value == 1.0);
    CHECK_THROWS_AS(mean_average_precision(std::vector<double>{0, 0}, std::vector<double>{1, 0}, 2), DataError);

    Rng rng(4);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng.index(20), c = 1 + rng.index(5);
        std::vector<double> l(n * c), s(n * c);
        for (std::size_t i = 0; i < n * c; ++i) {
            l[i] = rng.bernoulli(0.3);
            s[i] = rng.normal();
        }
        l[0] = 1.0;
        double total = 0;
        int used = 0;
        for (std::size_t k = 0; k < c; ++k) {
            std::vector<double> lk, sk;
            for (std::size_t i = 0; i < n; ++i) {
                lk.push_back(l[i * c + k]);
                sk.push_back(s[i * c + k]);
            }
            if (std::count(lk.begin(), lk.end(), 1.0) == 0) continue;
            total += ap_oracle(lk, sk);
            ++used;
        }
        CHECK(std::abs(mean_average_precision(l, s, c).value - total / used) < 1e-9);
    }
}

TEST_CASE("relative improvement") {
    CHECK(relative_improvement(0.4, 0.4) == 0.0);
    CHECK(relative_improvement(0.5, 0.75) == 0.5);
    CHECK(relative_improvement(-1.0, 0.0) == 0.5);
    CHECK_THROWS_AS(relative_improvement(1.0, 1.0), UsageError);
}

TEST_CASE("rank_methods") {
    CHECK(rank_methods(std::vector<double>{0.3, 0.2, 0.1}) == std::vector<double>{1, 2, 3});
    CHECK(rank_methods(std::vector<double>{0.3, 0.3, 0.1}) == std::vector<double>{1.5, 1.5, 3});
    CHECK(rank_methods(std::vector<double>{0.3, 0.2, 0.1}, false) == std::vector<double>{3, 2, 1});
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.index(8);
        std::vector<double> v(n);
        for (double& x : v) x = static_cast<double>(rng.index(4));
        auto r = rank_methods(v);
        double s = 0;
        for (double x : r) s += x;
        CHECK(s == n * (n + 1) / 2.0);
    }
}

TEST_CASE("wilcoxon exact examples") {
    auto all = wilcoxon_one_sided(std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5});
    CHECK(all.p_value == 1.0 / 32);
    CHECK(all.exact);
    CHECK(wilcoxon_one_sided(std::vector<double>{0.7}).p_value == 0.5);
    CHECK(wilcoxon_one_sided(std::vector<double>{-0.7}).p_value == 1.0);
    auto zeros = wilcoxon_one_sided(std::vector<double>{0.0, 0.2, 0.0});
    CHECK(zeros.n == 1);
    CHECK_THROWS_AS(wilcoxon_one_sided(std::vector<double>{0.0, 0.0}), DataError);
}

TEST_CASE("exact wilcoxon matches full sign enumeration for n <= 10") {
    Rng rng(6);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + rng.index(10);
        std::vector<double> d(n);
        for (double& x : d) x = std::round(rng.normal(0.2, 1) * 3) / 3;  // ties and zeros
        if (std::all_of(d.begin(), d.end(), [](double x) { return x == 0; })) d[0] = 1;
        CHECK(wilcoxon_one_sided(d).p_value == wilcoxon_oracle(d));
    }
    // a random n = 8 instance
    std::vector<double> d(8);
    for (double& x : d) x = rng.normal(0.5, 1);
    CHECK(wilcoxon_one_sided(d).p_value == wilcoxon_oracle(d));
}

TEST_CASE("wilcoxon normal approximation above 25 pairs") {
    // Reference from scipy.stats.wilcoxon(alternative="greater",
    // zero_method="wilcox", correction=True, method="approx").
    const std::vector<double> d{-0.5, -1.0, 0.1, 0.7, 1.4, 0.4, -0.3, -0.5, 1.0, 1.9, 0.6, -0.9, -0.7, 1.9, 0.5,
                                -1.4, 0.2, -0.9, -0.3, -0.2, -0.4, 0.9, 0.2, -0.3, 0.7, 1.1, -1.3, 0.0, -0.7, 0.1};
    auto r = wilcoxon_one_sided(d);
    CHECK_FALSE(r.exact);
    CHECK(r.n == 29);
    CHECK(r.w_plus == 229.5);
    CHECK(r.p_value == doctest::Approx(0.40172201177315714).epsilon(1e-12));
}

TEST_CASE("holm step-down") {
    auto one = holm_bonferroni(std::vector<double>{0.04});
    CHECK(one.reject == std::vector<bool>{true});
    auto both = holm_bonferroni(std::vector<double>{0.04, 0.01});
    CHECK(both.reject == std::vector<bool>{true, true});
    CHECK(both.adjusted == std::vector<double>{0.04, 0.02});
    auto none = holm_bonferroni(std::vector<double>{0.03, 0.04});
    CHECK(none.reject == std::vector<bool>{false, false});
    CHECK(none.adjusted[0] == 0.06);
    CHECK(none.adjusted[1] == 0.06);  // monotone
    auto stop = holm_bonferroni(std::vector<double>{0.02, 0.001, 0.04}, 0.05);
    CHECK(stop.reject == std::vector<bool>{true, true, true});
    // 0.04 would pass its own threshold but the step-down already stopped
    auto halt = holm_bonferroni(std::vector<double>{0.03, 0.001, 0.04}, 0.05);
    CHECK(halt.reject == std::vector<bool>{false, true, false});
}

TEST_CASE("holm decisions are monotone in the p-values") {
    Rng rng(7);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t m = 1 + rng.index(6);
        std::vector<double> p(m);
        for (double& x : p) x = rng.uniform() * 0.1;
        auto before = holm_bonferroni(p);
        auto lowered = p;
        const std::size_t k = rng.index(m);
        lowered[k] *= rng.uniform();
        auto after = holm_bonferroni(lowered);
        for (std::size_t i = 0; i < m; ++i)
            if (before.reject[i]) CHECK(after.reject[i]);
        for (std::size_t i = 0; i < m; ++i) CHECK(after.adjusted[i] <= before.adjusted[i]);
    }
}
