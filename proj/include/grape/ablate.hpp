#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "grape/config.hpp"
#include "grape/errors.hpp"
#include "grape/report.hpp"
#include "grape/train.hpp"

namespace grape {

enum class AblateKind { AlphaSweep, PVariants, PriorityOrders, BetaGrid };

inline std::string to_string(AblateKind k) {
    switch (k) {
        case AblateKind::AlphaSweep: return "alpha_sweep";
        case AblateKind::PVariants: return "p_variants";
        case AblateKind::PriorityOrders: return "priority_orders";
        case AblateKind::BetaGrid: return "beta_grid";
    }
    return "?";
}

inline AblateKind ablate_kind_from_string(const std::string& s) {
    if (s == "alpha_sweep") return AblateKind::AlphaSweep;
    if (s == "p_variants") return AblateKind::PVariants;
    if (s == "priority_orders") return AblateKind::PriorityOrders;
    if (s == "beta_grid") return AblateKind::BetaGrid;
    throw ConfigError("unknown ablation kind '" + s + "'; expected alpha_sweep, p_variants, priority_orders or beta_grid");
}

struct AblationRow {
    // Grid coordinates, e.g. {"alpha": "0.7"} or {"beta_EIS": "80", "beta_NIS": "40"}.
    std::map<std::string, std::string> coords;
    EvalReport report;
};

struct AblationTable {
    AblateKind kind = AblateKind::AlphaSweep;
    std::vector<AblationRow> rows;
    std::vector<std::string> indicator_names;
};

namespace detail {

inline std::string fmt_num(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

// The documented search ranges: alpha in [0.5, 1]; beta_EIS in [70, 120];
// beta_NIS and beta_HMI in [30, 50]. Unknown indicator names fall back to
// the observed raw range.
inline void check_beta_range(const IndicatorSpec& spec, double beta) {
    double lo = spec.observed_min, hi = spec.observed_max;
    if (spec.name == "EIS") {
        lo = 70.0;
        hi = 120.0;
    } else if (spec.name == "NIS" || spec.name == "HMI") {
        lo = 30.0;
        hi = 50.0;
    }
    if (beta < lo || beta > hi) {
        throw ConfigError("beta for '" + spec.name + "' must lie in [" + fmt_num(lo) + ", " + fmt_num(hi) + "], got " +
                          fmt_num(beta));
    }
}

inline std::vector<std::vector<int>> permutations(int n) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    std::vector<std::vector<int>> out;
    do {
        out.push_back(idx);
    } while (std::next_permutation(idx.begin(), idx.end()));
    return out;
}

}  // namespace detail

// One full train+evaluate per grid point with a shared seed. Grids are
// validated against the documented ranges before any training starts.
inline AblationTable ablate(AblateKind kind, const Corpus& corpus, const RunConfig& base) {
    const ModelConfig model_cfg = base.model_config();
    const TrainConfig train_cfg = base.train_config();
    const GreenLossConfig loss_cfg = base.loss_config(corpus.specs);
    const PVariant variant = base.p_variant();
    const auto& grids = base.json().contains("ablate") ? base.json().at("ablate") : nlohmann::json::object();

    AblationTable table;
    table.kind = kind;
    for (const auto& s : corpus.specs) table.indicator_names.push_back(s.name);

    auto run_one = [&](const GreenLossConfig& lc, PVariant pv, std::map<std::string, std::string> coords) {
        const TrainResult r = train(corpus, model_cfg, lc, train_cfg, pv, base.hash());
        table.rows.push_back(AblationRow{std::move(coords), r.test_report});
    };

    switch (kind) {
        case AblateKind::AlphaSweep: {
            if (!grids.contains("alpha")) throw ConfigError("ablate.alpha grid is required for alpha_sweep");
            std::vector<double> alphas = grids.at("alpha").get<std::vector<double>>();
            for (const double a : alphas) {
                if (a < 0.5 || a > 1.0) throw ConfigError("alpha grid values must lie in [0.5, 1], got " + detail::fmt_num(a));
            }
            std::sort(alphas.begin(), alphas.end());
            for (const double a : alphas) {
                GreenLossConfig lc = loss_cfg;
                lc.alpha = a;
                lc.mode = GreenMode::NonPrioritized;
                run_one(lc, variant, {{"alpha", detail::fmt_num(a)}});
            }
            break;
        }
        case AblateKind::PVariants: {
            for (const PVariant pv :
                 {PVariant::Pone, PVariant::PNRand, PVariant::PN, PVariant::PRand, PVariant::PGrape}) {
                run_one(loss_cfg, pv, {{"p_variant", to_string(pv)}});
            }
            break;
        }
        case AblateKind::PriorityOrders: {
            for (const auto& perm : detail::permutations(corpus.n())) {
                GreenLossConfig lc = loss_cfg;
                lc.mode = GreenMode::Prioritized;
                lc.priority = perm;
                lc.validate(corpus.specs);
                std::string label;
                for (const int j : perm) {
                    if (!label.empty()) label += ">";
                    label += corpus.specs[static_cast<std::size_t>(j)].name;
                }
                run_one(lc, variant, {{"priority", label}});
            }
            break;
        }
        case AblateKind::BetaGrid: {
            if (!grids.contains("beta")) throw ConfigError("ablate.beta grids are required for beta_grid");
            // Cartesian product over the listed indicators; others keep the
            // base threshold.
            std::vector<std::pair<int, std::vector<double>>> axes;
            for (const auto& [name, values] : grids.at("beta").items()) {
                int idx = -1;
                for (int j = 0; j < corpus.n(); ++j) {
                    if (corpus.specs[static_cast<std::size_t>(j)].name == name) idx = j;
                }
                if (idx < 0) throw ConfigError("ablate.beta names unknown indicator '" + name + "'");
                std::vector<double> vals = values.get<std::vector<double>>();
                for (const double b : vals) detail::check_beta_range(corpus.specs[static_cast<std::size_t>(idx)], b);
                std::sort(vals.begin(), vals.end());
                axes.emplace_back(idx, std::move(vals));
            }
            if (axes.empty()) throw ConfigError("ablate.beta grids are empty");
            std::vector<std::size_t> cursor(axes.size(), 0);
            while (true) {
                GreenLossConfig lc = loss_cfg;
                lc.mode = GreenMode::Prioritized;
                std::map<std::string, std::string> coords;
                for (std::size_t a = 0; a < axes.size(); ++a) {
                    const auto& [idx, vals] = axes[a];
                    lc.beta[static_cast<std::size_t>(idx)] = vals[cursor[a]];
                    coords["beta_" + corpus.specs[static_cast<std::size_t>(idx)].name] = detail::fmt_num(vals[cursor[a]]);
                }
                lc.validate(corpus.specs);
                run_one(lc, variant, std::move(coords));
                std::size_t a = 0;
                for (; a < axes.size(); ++a) {
                    if (++cursor[a] < axes[a].second.size()) break;
                    cursor[a] = 0;
                }
                if (a == axes.size()) break;
            }
            break;
        }
    }
    return table;
}

inline nlohmann::json ablation_to_json(const AblationTable& t) {
    nlohmann::json j;
    j["kind"] = to_string(t.kind);
    j["indicator_names"] = t.indicator_names;
    j["runs"] = nlohmann::json::array();
    for (const auto& row : t.rows) {
        j["runs"].push_back({{"coords", row.coords}, {"report", report_to_json(row.report)}});
    }
    return j;
}

inline void write_ablation_csv(const std::string& path, const AblationTable& t) {
    std::ofstream f(path);
    if (!f) throw IngestError("cannot write ablation table: " + path);
    f.precision(17);
    std::vector<std::string> coord_keys;
    if (!t.rows.empty()) {
        for (const auto& [k, v] : t.rows.front().coords) coord_keys.push_back(k);
    }
    for (const auto& k : coord_keys) f << k << ",";
    f << report_csv_header(t.indicator_names) << "\n";
    for (const auto& row : t.rows) {
        for (const auto& c : row.report.cutoffs) {
            for (const auto& k : coord_keys) f << row.coords.at(k) << ",";
            f << c.cutoff << "," << c.hr << "," << c.ndcg;
            for (const double v : c.mean_indicators) f << "," << v;
            f << "," << row.report.seed << "," << row.report.epoch << "," << row.report.config_hash << "\n";
        }
    }
}

inline void write_ablation_json(const std::string& path, const AblationTable& t) {
    std::ofstream f(path);
    if (!f) throw IngestError("cannot write ablation table: " + path);
    f << ablation_to_json(t).dump(2) << "\n";
}

}  // namespace grape
