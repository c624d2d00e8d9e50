#include "tttlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tttlab/errors.hpp"

namespace tttlab {

double r_squared(std::span<const double> y, std::span<const double> f) {
    if (y.size() != f.size()) {
        throw ShapeError("r_squared: " + std::to_string(y.size()) + " observations vs " +
                         std::to_string(f.size()) + " predictions");
    }
    if (y.size() < 2) throw DataError("r_squared needs at least two observations");
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        ss_res += (y[i] - f[i]) * (y[i] - f[i]);
        ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    if (ss_tot == 0.0) throw DataError("r_squared undefined for constant observations");
    return 1.0 - ss_res / ss_tot;
}

double average_precision(std::span<const double> labels, std::span<const double> scores) {
    if (labels.size() != scores.size()) throw ShapeError("average_precision: length mismatch");
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const auto positives = static_cast<double>(std::count(labels.begin(), labels.end(), 1.0));
    if (positives == 0) throw DataError("average_precision: no positive labels");
    double ap = 0.0, tp = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (labels[order[k]] != 1.0) continue;
        tp += 1.0;
        ap += (1.0 / positives) * (tp / static_cast<double>(k + 1));
    }
    return ap;
}

MapResult mean_average_precision(std::span<const double> labels, std::span<const double> scores,
                                 std::size_t classes) {
    if (classes == 0 || labels.size() != scores.size() || labels.size() % classes != 0) {
        throw ShapeError("mean_average_precision: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(classes) + " classes");
    }
    const std::size_t n = labels.size() / classes;
    MapResult out;
    double total = 0.0;
    std::size_t used = 0;
    std::vector<double> l(n), s(n);
    for (std::size_t c = 0; c < classes; ++c) {
        bool any = false;
        for (std::size_t i = 0; i < n; ++i) {
            l[i] = labels[i * classes + c];
            s[i] = scores[i * classes + c];
            any = any || l[i] == 1.0;
        }
        if (!any) {
            out.skipped.push_back(c);
            continue;
        }
        total += average_precision(l, s);
        ++used;
    }
    if (used == 0) throw DataError("mean_average_precision: no class has a positive label");
    out.value = total / static_cast<double>(used);
    return out;
}

double relative_improvement(double old_value, double new_value) {
    if (!(old_value < 1.0)) throw UsageError("relative improvement undefined for a perfect baseline");
    return (new_value - old_value) / (1.0 - old_value);
}

namespace {

// 1-based ranks of values in ascending order, ties averaged.
std::vector<double> average_ranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

std::vector<double> rank_methods(std::span<const double> values, bool higher_is_better) {
    std::vector<double> keyed(values.begin(), values.end());
    if (higher_is_better)
        for (double& v : keyed) v = -v;
    return average_ranks(keyed);
}

WilcoxonResult wilcoxon_one_sided(std::span<const double> differences) {
    std::vector<double> d;
    for (double x : differences)
        if (x != 0.0) d.push_back(x);
    if (d.empty()) throw DataError("wilcoxon: every difference is zero");
    std::vector<double> mag(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) mag[i] = std::abs(d[i]);
    const auto ranks = average_ranks(mag);

    WilcoxonResult out;
    out.n = d.size();
    for (std::size_t i = 0; i < d.size(); ++i)
        if (d[i] > 0) out.w_plus += ranks[i];

    if (out.n <= 25) {
        // Averaged ranks are multiples of 1/2, so doubled ranks are integers.
        std::vector<std::size_t> twice(ranks.size());
        std::size_t max_sum = 0;
        for (std::size_t i = 0; i < ranks.size(); ++i) {
            twice[i] = static_cast<std::size_t>(std::lround(2.0 * ranks[i]));
            max_sum += twice[i];
        }
        std::vector<double> count(max_sum + 1, 0.0);
        count[0] = 1.0;
        for (std::size_t r : twice)
            for (std::size_t s = max_sum; s >= r; --s) {
                count[s] += count[s - r];
                if (s == r) break;
            }
        const auto observed = static_cast<std::size_t>(std::lround(2.0 * out.w_plus));
        double tail = 0.0;
        for (std::size_t s = observed; s <= max_sum; ++s) tail += count[s];
        out.p_value = tail / std::ldexp(1.0, static_cast<int>(out.n));
        return out;
    }

    out.exact = false;
    const auto n = static_cast<double>(out.n);
    double tie_term = 0.0;
    std::vector<double> sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
        const auto t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }
    const double mean = n * (n + 1) / 4.0;
    const double var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0;
    const double z = (out.w_plus - mean - 0.5) / std::sqrt(var);
    out.p_value = 0.5 * std::erfc(z / std::sqrt(2.0));
    return out;
}

HolmResult holm_bonferroni(std::span<const double> p_values, double alpha) {
    const std::size_t m = p_values.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
    HolmResult out{std::vector<bool>(m, false), std::vector<double>(m, 1.0)};
    bool rejecting = true;
    double running = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        const double p = p_values[order[k]];
        const auto factor = static_cast<double>(m - k);
        rejecting = rejecting && p <= alpha / factor;
        out.reject[order[k]] = rejecting;
        running = std::max(running, std::min(1.0, factor * p));
        out.adjusted[order[k]] = running;
    }
    return out;
}

}  // namespace tttlab
