#pragma once

// Aggregation of experiment cells (method x split x subset x seed -> metric)
// into the raw CSV table and the JSON summary of deltas, relative
// improvements, ranks and significance tests.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "tttlab/experiment.hpp"

namespace tttlab {

struct Cell {
    Method method = Method::jt;
    TestSplit split = TestSplit::random;
    int subset = 100;
    std::uint64_t seed = 0;
    double metric = 0.0;
    std::size_t iterations = 0;

    friend bool operator==(const Cell&, const Cell&) = default;
};

nlohmann::json cell_to_json(const Cell& c);
Cell cell_from_json(const nlohmann::json& j);

// Canonical order: subset, split, seed, method.
void sort_cells(std::vector<Cell>& cells);

// Header plus one row per cell; metrics printed with 17 significant digits.
std::string cells_to_csv(std::vector<Cell> cells);
std::vector<Cell> cells_from_csv(const std::string& text);

// Throws DataError on duplicate cells. `metric_name` is "r2" or "map".
nlohmann::json build_report(std::vector<Cell> cells, const std::string& metric_name, double alpha = 0.05);

// Largest |stored delta - (method metric - JT metric)| over the report's
// delta rows, recomputed from `cells`. Throws DataError when a row has no
// matching cells.
double max_delta_error(const nlohmann::json& report, const std::vector<Cell>& cells);

}  // namespace tttlab
