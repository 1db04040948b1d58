#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "grape/dataset.hpp"
#include "grape/errors.hpp"
#include "grape/tape.hpp"

namespace grape {

enum class GreenMode { NonPrioritized, Prioritized };

inline std::string to_string(GreenMode m) {
    return m == GreenMode::NonPrioritized ? "non_prioritized" : "prioritized";
}

inline GreenMode green_mode_from_string(const std::string& s) {
    if (s == "non_prioritized" || s == "nonprioritized" || s == "ng") return GreenMode::NonPrioritized;
    if (s == "prioritized" || s == "pg") return GreenMode::Prioritized;
    throw ConfigError("unknown green_mode '" + s + "'");
}

struct GreenLossConfig {
    double alpha = 1.0;
    GreenMode mode = GreenMode::NonPrioritized;
    std::vector<int> priority;   // indicator indices, highest priority first
    std::vector<double> beta;    // raw-scale threshold per indicator index
    bool raw_green_deltas = false;  // use raw direction-folded gaps instead of normalized ones
    bool all_pass_zero = false;     // literal gate: no valid indicator when every threshold passes
    int green_pairs_per_step = 2;

    void validate(const std::vector<IndicatorSpec>& specs) const {
        const int n = static_cast<int>(specs.size());
        if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must be in [0, 1]");
        if (green_pairs_per_step < 0 || green_pairs_per_step > 2) throw ConfigError("green_pairs_per_step must be 0, 1 or 2");
        if (mode == GreenMode::Prioritized || !priority.empty()) {
            if (static_cast<int>(priority.size()) != n) throw ConfigError("priority must list every indicator exactly once");
            std::vector<char> seen(static_cast<std::size_t>(n), 0);
            for (const int j : priority) {
                if (j < 0 || j >= n || seen[static_cast<std::size_t>(j)]) {
                    throw ConfigError("priority must be a permutation of the indicator indices");
                }
                seen[static_cast<std::size_t>(j)] = 1;
            }
        }
        if (mode == GreenMode::Prioritized) {
            if (static_cast<int>(beta.size()) != n) throw ConfigError("beta must give one threshold per indicator");
            for (int j = 0; j < n; ++j) {
                const auto& s = specs[static_cast<std::size_t>(j)];
                if (s.observed_min < s.observed_max &&
                    (beta[static_cast<std::size_t>(j)] < s.observed_min || beta[static_cast<std::size_t>(j)] > s.observed_max)) {
                    throw ConfigError("beta for '" + s.name + "' is outside the observed raw range [" +
                                      std::to_string(s.observed_min) + ", " + std::to_string(s.observed_max) + "]");
                }
            }
        }
    }
};

// Scores and indicator context for one same-side green pair. Deltas are on
// the normalized greener-is-higher scale unless raw_green_deltas is set.
struct GreenPairScores {
    Value y1, y2;
    std::vector<double> deltas;  // per indicator, signed gap used in the loss
    std::vector<double> raw1, raw2;  // raw indicator values, used by the gate
};

// Signed greenness gap on the normalized scale (direction already folded by
// normalize_indicators): positive means item 1 is greener.
inline double green_delta(double norm1, double norm2) { return norm1 - norm2; }

// Raw-scale gap folded by direction, for the raw_green_deltas variant.
inline double raw_green_delta(Direction dir, double raw1, double raw2) {
    return dir == Direction::HigherGreener ? raw1 - raw2 : raw2 - raw1;
}

// BPR over (interacted, non-interacted) score pairs, batch-averaged.
inline Value normal_loss(Tape& tape, std::span<const std::pair<Value, Value>> pairs) {
    if (pairs.empty()) throw TrainError("normal_loss: empty batch");
    std::vector<Value> terms;
    terms.reserve(pairs.size());
    for (const auto& [pos, neg] : pairs) {
        terms.push_back(tape.logsigmoid(tape.sub(pos, neg)));
    }
    return tape.scale(tape.add_many(terms), -1.0 / static_cast<double>(pairs.size()));
}

// An indicator passes its threshold when both items are at least as green
// as beta on the raw scale (HigherGreener: min >= beta; LowerGreener:
// max <= beta).
inline bool threshold_passes(const IndicatorSpec& spec, double beta, double raw1, double raw2) {
    return spec.direction == Direction::HigherGreener ? std::min(raw1, raw2) >= beta : std::max(raw1, raw2) <= beta;
}

// Selects the single indicator that drives the prioritized loss for a pair:
// the first indicator in priority order that fails its threshold while all
// higher-priority ones pass. When every threshold passes, the lowest-
// priority indicator is selected unless all_pass_zero restores the literal
// rule (then -1: no indicator).
inline int validity_gate(const GreenLossConfig& cfg, const std::vector<IndicatorSpec>& specs, std::span<const double> raw1,
                         std::span<const double> raw2) {
    for (const int j : cfg.priority) {
        if (!threshold_passes(specs[static_cast<std::size_t>(j)], cfg.beta[static_cast<std::size_t>(j)],
                              raw1[static_cast<std::size_t>(j)], raw2[static_cast<std::size_t>(j)])) {
            return j;
        }
    }
    return cfg.all_pass_zero ? -1 : cfg.priority.back();
}

// Non-prioritized green loss: every indicator contributes
// -log sigmoid(delta_j * (y1 - y2)); batch-averaged over pairs.
inline Value nonprioritized_green_loss(Tape& tape, std::span<const GreenPairScores> pairs) {
    if (pairs.empty()) throw TrainError("green loss: empty batch");
    std::vector<Value> terms;
    for (const auto& p : pairs) {
        const Value gap = tape.sub(p.y1, p.y2);
        for (const double delta : p.deltas) {
            terms.push_back(tape.logsigmoid(tape.scale(gap, delta)));
        }
    }
    if (terms.empty()) throw TrainError("green loss: pairs carry no indicators");
    return tape.scale(tape.add_many(terms), -1.0 / static_cast<double>(pairs.size()));
}

// Prioritized green loss: only the gate-selected indicator contributes per
// pair; batch-averaged over pairs.
inline Value prioritized_green_loss(Tape& tape, std::span<const GreenPairScores> pairs, const GreenLossConfig& cfg,
                                    const std::vector<IndicatorSpec>& specs) {
    if (pairs.empty()) throw TrainError("green loss: empty batch");
    std::vector<Value> terms;
    bool any = false;
    for (const auto& p : pairs) {
        const int j = validity_gate(cfg, specs, p.raw1, p.raw2);
        if (j < 0) continue;  // all_pass_zero: the pair contributes nothing
        const Value gap = tape.sub(p.y1, p.y2);
        terms.push_back(tape.logsigmoid(tape.scale(gap, p.deltas[static_cast<std::size_t>(j)])));
        any = true;
    }
    if (!any) {
        return tape.constant(Tensor::scalar(0.0));
    }
    return tape.scale(tape.add_many(terms), -1.0 / static_cast<double>(pairs.size()));
}

// L = alpha * Ln + (1 - alpha) * Lg, exact at the boundaries.
inline Value total_loss(Tape& tape, Value normal, Value green, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must be in [0, 1]");
    if (alpha == 1.0) return normal;
    if (alpha == 0.0) return green;
    return tape.add(tape.scale(normal, alpha), tape.scale(green, 1.0 - alpha));
}

}  // namespace grape
