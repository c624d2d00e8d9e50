#include "tttlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "tttlab/errors.hpp"
#include "tttlab/metrics.hpp"

namespace tttlab {

using nlohmann::json;

json cell_to_json(const Cell& c) {
    return {{"method", to_string(c.method)}, {"split", to_string(c.split)}, {"subset", c.subset},
            {"seed", c.seed},               {"metric", c.metric},         {"iterations", c.iterations}};
}

Cell cell_from_json(const json& j) {
    try {
        Cell c;
        c.method = parse_method(j.at("method").get<std::string>());
        c.split = parse_test_split(j.at("split").get<std::string>());
        c.subset = j.at("subset").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.metric = j.at("metric").get<double>();
        c.iterations = j.at("iterations").get<std::size_t>();
        return c;
    } catch (const json::exception& e) {
        throw DataError(std::string("result cell: ") + e.what());
    } catch (const UsageError& e) {
        throw DataError(std::string("result cell: ") + e.what());
    }
}

namespace {

auto key(const Cell& c) { return std::tuple(c.subset, c.split, c.seed, c.method); }

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct MeanSe {
    double mean = 0.0;
    std::optional<double> se;
};

MeanSe mean_se(const std::vector<double>& v) {
    MeanSe r;
    if (v.empty()) return r;
    for (double x : v) r.mean += x;
    r.mean /= static_cast<double>(v.size());
    if (v.size() >= 2) {
        double ss = 0.0;
        for (double x : v) ss += (x - r.mean) * (x - r.mean);
        r.se = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
    }
    return r;
}

json to_json(const MeanSe& m) { return {{"mean", m.mean}, {"se", m.se ? json(*m.se) : json(nullptr)}}; }

}  // namespace

void sort_cells(std::vector<Cell>& cells) {
    std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) { return key(a) < key(b); });
}

std::string cells_to_csv(std::vector<Cell> cells) {
    sort_cells(cells);
    std::string out = "method,split,subset,seed,metric,iterations\n";
    for (const auto& c : cells) {
        out += to_string(c.method) + "," + to_string(c.split) + "," + std::to_string(c.subset) + "," +
               std::to_string(c.seed) + "," + fmt17(c.metric) + "," + std::to_string(c.iterations) + "\n";
    }
    return out;
}

std::vector<Cell> cells_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "method,split,subset,seed,metric,iterations") {
        throw DataError("report CSV: unexpected header");
    }
    std::vector<Cell> cells;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string part; std::getline(ls, part, ',');) f.push_back(part);
        if (f.size() != 6) throw DataError("report CSV: expected 6 fields in '" + line + "'");
        try {
            Cell c;
            c.method = parse_method(f[0]);
            c.split = parse_test_split(f[1]);
            c.subset = std::stoi(f[2]);
            c.seed = std::stoull(f[3]);
            c.metric = std::stod(f[4]);
            c.iterations = std::stoull(f[5]);
            cells.push_back(c);
        } catch (const std::exception& e) {
            throw DataError("report CSV: bad row '" + line + "': " + e.what());
        }
    }
    return cells;
}

json build_report(std::vector<Cell> cells, const std::string& metric_name, double alpha) {
    sort_cells(cells);
    for (std::size_t i = 1; i < cells.size(); ++i) {
        if (key(cells[i]) == key(cells[i - 1])) {
            throw DataError("duplicate result for " + to_string(cells[i].method) + " / " + to_string(cells[i].split) +
                            " / " + std::to_string(cells[i].subset) + "% / seed " + std::to_string(cells[i].seed));
        }
    }

    std::set<Method> methods;
    std::set<TestSplit> splits;
    std::set<int> subsets;
    std::set<std::uint64_t> seeds;
    std::map<std::tuple<int, TestSplit, std::uint64_t>, std::map<Method, double>> groups;
    for (const auto& c : cells) {
        methods.insert(c.method);
        splits.insert(c.split);
        subsets.insert(c.subset);
        seeds.insert(c.seed);
        groups[{c.subset, c.split, c.seed}][c.method] = c.metric;
    }

    json r;
    r["metric"] = metric_name;
    r["alpha"] = alpha;
    r["methods"] = json::array();
    for (auto m : methods) r["methods"].push_back(to_string(m));
    r["splits"] = json::array();
    for (auto s : splits) r["splits"].push_back(to_string(s));
    r["subsets"] = subsets;
    r["seeds"] = seeds;
    r["cells"] = cells.size();

    // Per (method, split, subset): mean and standard error over seeds.
    json summary = json::array();
    for (int sub : subsets) {
        for (auto sp : splits) {
            for (auto m : methods) {
                std::vector<double> v;
                for (const auto& c : cells) {
                    if (c.subset == sub && c.split == sp && c.method == m) v.push_back(c.metric);
                }
                if (v.empty()) continue;
                json row{{"method", to_string(m)}, {"split", to_string(sp)}, {"subset", sub}, {"n", v.size()}};
                row.update(to_json(mean_se(v)));
                summary.push_back(row);
            }
        }
    }
    r["summary"] = summary;

    // Paired differences against JT.
    json deltas = json::array();
    std::map<std::tuple<Method, int, TestSplit>, std::vector<double>> by_group;
    std::map<std::pair<Method, int>, std::vector<double>> by_subset;
    json missing = json::array();
    for (const auto& [k, vals] : groups) {
        const auto& [sub, sp, seed] = k;
        for (auto m : methods) {
            if (!vals.contains(m)) {
                missing.push_back({{"method", to_string(m)}, {"split", to_string(sp)}, {"subset", sub}, {"seed", seed}});
            }
        }
        auto jt = vals.find(Method::jt);
        if (jt == vals.end()) continue;
        for (const auto& [m, v] : vals) {
            if (m == Method::jt) continue;
            const double d = v - jt->second;
            json row{{"method", to_string(m)}, {"split", to_string(sp)}, {"subset", sub}, {"seed", seed},
                     {"jt", jt->second},       {"value", v},          {"delta", d}};
            row["relative_improvement"] = jt->second < 1.0 ? json(relative_improvement(jt->second, v)) : json(nullptr);
            deltas.push_back(row);
            by_group[{m, sub, sp}].push_back(d);
            by_subset[{m, sub}].push_back(d);
        }
    }
    r["deltas"] = deltas;
    r["missing"] = missing;

    json mean_deltas = json::array();
    for (const auto& [k, v] : by_group) {
        const auto& [m, sub, sp] = k;
        json row{{"method", to_string(m)}, {"split", to_string(sp)}, {"subset", sub}, {"n", v.size()}};
        row.update(to_json(mean_se(v)));
        mean_deltas.push_back(row);
    }
    r["mean_deltas"] = mean_deltas;

    // Ranks among the methods present in each (subset, split, seed) group.
    std::map<Method, std::vector<double>> rank_values;
    json rank_rows = json::array();
    for (const auto& [k, vals] : groups) {
        if (vals.size() < 2) continue;
        const auto& [sub, sp, seed] = k;
        std::vector<double> v;
        for (const auto& [m, x] : vals) v.push_back(x);
        const auto rk = rank_methods(v, true);
        json row{{"split", to_string(sp)}, {"subset", sub}, {"seed", seed}};
        json rj = json::object();
        std::size_t i = 0;
        for (const auto& [m, x] : vals) {
            rj[to_string(m)] = rk[i];
            rank_values[m].push_back(rk[i]);
            ++i;
        }
        row["ranks"] = rj;
        rank_rows.push_back(row);
    }
    json rank_mean = json::object();
    for (const auto& [m, v] : rank_values) {
        json row = to_json(mean_se(v));
        row["n"] = v.size();
        rank_mean[to_string(m)] = row;
    }
    r["ranks"] = {{"groups", rank_rows}, {"mean", rank_mean}};

    // One-sided Wilcoxon per (method, subset) over seeds x splits, then
    // Holm across the whole family.
    json tests = json::array();
    std::vector<double> pvals;
    std::vector<std::size_t> tested;
    for (const auto& [k, d] : by_subset) {
        json row{{"method", to_string(k.first)}, {"subset", k.second}, {"pairs", d.size()}};
        try {
            const auto w = wilcoxon_one_sided(d);
            row["n"] = w.n;
            row["w_plus"] = w.w_plus;
            row["exact"] = w.exact;
            row["p_value"] = w.p_value;
            tested.push_back(tests.size());
            pvals.push_back(w.p_value);
        } catch (const DataError& e) {
            row["n"] = 0;
            row["p_value"] = nullptr;
            row["note"] = e.what();
        }
        tests.push_back(row);
    }
    if (!pvals.empty()) {
        const auto holm = holm_bonferroni(pvals, alpha);
        for (std::size_t i = 0; i < tested.size(); ++i) {
            tests[tested[i]]["adjusted_p"] = holm.adjusted[i];
            tests[tested[i]]["reject"] = static_cast<bool>(holm.reject[i]);
        }
    }
    r["significance"] = tests;

    const double err = max_delta_error(r, cells);
    r["consistency"] = {{"max_delta_error", err}, {"ok", err <= 1e-12}};
    return r;
}

double max_delta_error(const json& report, const std::vector<Cell>& cells) {
    std::map<std::tuple<int, TestSplit, std::uint64_t, Method>, double> lookup;
    for (const auto& c : cells) lookup[key(c)] = c.metric;
    double worst = 0.0;
    for (const auto& row : report.at("deltas")) {
        const auto sub = row.at("subset").get<int>();
        const auto sp = parse_test_split(row.at("split").get<std::string>());
        const auto seed = row.at("seed").get<std::uint64_t>();
        const auto m = parse_method(row.at("method").get<std::string>());
        auto a = lookup.find({sub, sp, seed, m});
        auto b = lookup.find({sub, sp, seed, Method::jt});
        if (a == lookup.end() || b == lookup.end()) throw DataError("report delta row has no matching cells");
        worst = std::max(worst, std::abs(row.at("delta").get<double>() - (a->second - b->second)));
    }
    return worst;
}

}  // namespace tttlab
