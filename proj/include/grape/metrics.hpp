#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "grape/errors.hpp"

namespace grape {

// Descending-score total order over candidate item ids; ties break by
// ascending item id. `scores` is parallel to `candidates`.
inline std::vector<int> rank_all(std::span<const int> candidates, std::span<const double> scores) {
    if (candidates.size() != scores.size()) throw ShapeError("rank_all: candidates and scores differ in length");
    std::vector<int> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double sa = scores[static_cast<std::size_t>(a)], sb = scores[static_cast<std::size_t>(b)];
        if (sa != sb) return sa > sb;
        return candidates[static_cast<std::size_t>(a)] < candidates[static_cast<std::size_t>(b)];
    });
    std::vector<int> ranked(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) ranked[i] = candidates[static_cast<std::size_t>(order[i])];
    return ranked;
}

// HR@N and NDCG@N over one ranking per user, one test target per user.
// NDCG uses the single-relevant-item form 1/log2(rank + 1).
inline std::pair<double, double> hr_ndcg_at_n(const std::vector<std::vector<int>>& rankings, const std::vector<int>& targets,
                                              int N) {
    if (rankings.size() != targets.size()) throw ShapeError("hr_ndcg_at_n: rankings/targets size mismatch");
    if (rankings.empty()) throw ShapeError("hr_ndcg_at_n: no users");
    double hr = 0.0, ndcg = 0.0;
    for (std::size_t u = 0; u < rankings.size(); ++u) {
        const auto& list = rankings[u];
        const int limit = std::min<int>(N, static_cast<int>(list.size()));
        for (int r = 0; r < limit; ++r) {
            if (list[static_cast<std::size_t>(r)] == targets[u]) {
                hr += 1.0;
                ndcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
                break;
            }
        }
    }
    const double users = static_cast<double>(rankings.size());
    return {hr / users, ndcg / users};
}

// Mean over users of the mean raw indicator value of their top-N items.
inline std::vector<double> mean_indicator_at_n(const std::vector<std::vector<int>>& rankings,
                                               const std::vector<std::vector<double>>& item_raw, int n_indicators, int N) {
    if (rankings.empty()) throw ShapeError("mean_indicator_at_n: no users");
    std::vector<double> out(static_cast<std::size_t>(n_indicators), 0.0);
    for (const auto& list : rankings) {
        const int limit = std::min<int>(N, static_cast<int>(list.size()));
        if (limit == 0) throw ShapeError("mean_indicator_at_n: empty ranking");
        for (int j = 0; j < n_indicators; ++j) {
            double acc = 0.0;
            for (int r = 0; r < limit; ++r) {
                acc += item_raw[static_cast<std::size_t>(list[static_cast<std::size_t>(r)])][static_cast<std::size_t>(j)];
            }
            out[static_cast<std::size_t>(j)] += acc / static_cast<double>(limit);
        }
    }
    for (double& v : out) v /= static_cast<double>(rankings.size());
    return out;
}

struct CutoffMetrics {
    int cutoff = 0;
    double hr = 0.0;
    double ndcg = 0.0;
    std::vector<double> mean_indicators;  // raw scale, per indicator

    friend bool operator==(const CutoffMetrics&, const CutoffMetrics&) = default;
};

struct EvalReport {
    std::vector<CutoffMetrics> cutoffs;          // ascending by cutoff
    std::vector<std::string> indicator_names;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    int epoch = 0;

    const CutoffMetrics& at(int cutoff) const {
        for (const auto& c : cutoffs) {
            if (c.cutoff == cutoff) return c;
        }
        throw IndexError("no metrics for cutoff " + std::to_string(cutoff));
    }

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

}  // namespace grape
