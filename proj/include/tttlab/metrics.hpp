#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tttlab {

// 1 - SS_res / SS_tot. Throws DataError for constant y or fewer than two values.
double r_squared(std::span<const double> y, std::span<const double> f);

// Step-summed AP = sum_n (R_n - R_{n-1}) P_n over the descending-score order;
// equal scores keep their input order. Throws DataError without positives.
double average_precision(std::span<const double> labels, std::span<const double> scores);

struct MapResult {
    double value = 0.0;
    std::vector<std::size_t> skipped;  // classes without a positive
};

// labels/scores are row-major [items, classes]. Classes without a positive
// are skipped; throws DataError if every class is skipped.
MapResult mean_average_precision(std::span<const double> labels, std::span<const double> scores,
                                 std::size_t classes);

// (new - old) / (1 - old). Throws UsageError when old >= 1.
double relative_improvement(double old_value, double new_value);

// Rank 1 is best; ties share the mean of the ranks they cover.
std::vector<double> rank_methods(std::span<const double> values, bool higher_is_better = true);

struct WilcoxonResult {
    double p_value = 1.0;
    double w_plus = 0.0;
    std::size_t n = 0;  // pairs left after dropping zeros
    bool exact = true;
};

// One-sided signed-rank test of "differences > 0". Zero differences are
// dropped, tied magnitudes get averaged ranks. Exact null distribution up to
// 25 pairs, normal approximation with continuity and tie correction above.
// Throws DataError when every difference is zero.
WilcoxonResult wilcoxon_one_sided(std::span<const double> differences);

struct HolmResult {
    std::vector<bool> reject;
    std::vector<double> adjusted;  // in input order
};

HolmResult holm_bonferroni(std::span<const double> p_values, double alpha = 0.05);

}  // namespace tttlab
