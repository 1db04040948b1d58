#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "grape/dataset.hpp"
#include "grape/errors.hpp"
#include "grape/rng.hpp"

namespace grape {

struct SynthIndicator {
    std::string name;
    Direction direction = Direction::HigherGreener;
    double min = 0.0;
    double max = 1.0;
};

struct SynthConfig {
    int users = 500;
    int items = 2000;
    int interactions_per_user = 30;
    int taste_dim = 8;
    double taste_scale = 1.0;
    // Magnitude of the per-indicator green affinity for "green" users; 0
    // makes interaction likelihood independent of the indicators.
    double affinity_scale = 1.0;
    // Fraction of users that carry a nonzero green affinity.
    double green_user_fraction = 1.0;
    std::uint64_t seed = 1;
    std::vector<SynthIndicator> indicators = {
        {"EIS", Direction::LowerGreener, 70.0, 120.0},
        {"NIS", Direction::HigherGreener, 30.0, 50.0},
        {"HMI", Direction::HigherGreener, 30.0, 50.0},
    };
};

// Generated corpus in the same two-file shape the loader reads, plus the
// generator's ground truth for tests (per-user affinity weights).
struct SynthCorpus {
    SynthConfig config;
    std::vector<std::vector<double>> item_values;       // [item 0-based][indicator], raw scale
    std::vector<std::vector<double>> user_affinity;     // [user][indicator]
    std::vector<std::vector<int>> user_items;           // [user] chronological 0-based item indices
    nlohmann::json metadata;

    // Materializes an InteractionLog directly, bypassing CSV round-trips.
    InteractionLog to_log(int min_interactions = 1) const;

    void write(const std::string& dir) const {
        namespace fs = std::filesystem;
        fs::create_directories(dir);
        {
            std::ofstream f(fs::path(dir) / "interactions.csv");
            f << "user_id,item_id,timestamp\n";
            for (std::size_t u = 0; u < user_items.size(); ++u) {
                for (std::size_t k = 0; k < user_items[u].size(); ++k) {
                    f << "u" << u << ",i" << user_items[u][k] << "," << k << "\n";
                }
            }
        }
        {
            std::ofstream f(fs::path(dir) / "indicators.csv");
            f << "item_id";
            for (const auto& ind : config.indicators) f << "," << ind.name;
            f << "\n";
            f.precision(17);
            for (std::size_t i = 0; i < item_values.size(); ++i) {
                f << "i" << i;
                for (const double v : item_values[i]) f << "," << v;
                f << "\n";
            }
        }
        {
            std::ofstream f(fs::path(dir) / "metadata.json");
            f << metadata.dump(2) << "\n";
        }
    }
};

// Items draw uniform indicator values in their configured ranges plus a
// latent taste vector; each user draws a taste vector and per-indicator
// affinity weights. A user's interaction set is an exact softmax
// sample-without-replacement (Gumbel top-k) over
//   logit(u, i) = taste_scale * <taste_u, latent_i> + sum_j affinity_uj * greenness_ij
// where greenness is the direction-folded value in [0, 1]. The sampled set
// is shuffled into chronological order.
inline SynthCorpus synth_generate(const SynthConfig& cfg) {
    if (cfg.users < 50 || cfg.items < 100) {
        throw ConfigError("synthetic corpus needs at least 50 users and 100 items");
    }
    if (cfg.interactions_per_user > cfg.items) {
        throw ConfigError("interactions_per_user exceeds the catalog size");
    }
    if (cfg.interactions_per_user < 3) {
        throw ConfigError("interactions_per_user must be at least 3 for leave-one-out");
    }
    const int n = static_cast<int>(cfg.indicators.size());
    SynthCorpus out;
    out.config = cfg;

    Rng root(cfg.seed);
    Rng item_rng = root.substream("synth/items");
    Rng user_rng = root.substream("synth/users");
    Rng pick_rng = root.substream("synth/interactions");

    // Items: indicator values and latent vectors.
    out.item_values.assign(static_cast<std::size_t>(cfg.items), std::vector<double>(static_cast<std::size_t>(n)));
    std::vector<std::vector<double>> item_latent(static_cast<std::size_t>(cfg.items),
                                                 std::vector<double>(static_cast<std::size_t>(cfg.taste_dim)));
    std::vector<std::vector<double>> item_green(static_cast<std::size_t>(cfg.items),
                                                std::vector<double>(static_cast<std::size_t>(n)));
    const double latent_sd = 1.0 / std::sqrt(static_cast<double>(cfg.taste_dim));
    for (int i = 0; i < cfg.items; ++i) {
        for (int j = 0; j < n; ++j) {
            const auto& ind = cfg.indicators[static_cast<std::size_t>(j)];
            const double raw = item_rng.uniform(ind.min, ind.max);
            out.item_values[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = raw;
            const double folded = ind.direction == Direction::HigherGreener ? (raw - ind.min) / (ind.max - ind.min)
                                                                            : (ind.max - raw) / (ind.max - ind.min);
            item_green[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = folded;
        }
        for (int t = 0; t < cfg.taste_dim; ++t) {
            item_latent[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] = item_rng.normal(0.0, latent_sd);
        }
    }

    // Users: taste + affinity, then Gumbel top-k interaction sets.
    out.user_affinity.assign(static_cast<std::size_t>(cfg.users), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    out.user_items.assign(static_cast<std::size_t>(cfg.users), {});
    std::vector<double> logit(static_cast<std::size_t>(cfg.items));
    std::vector<int> order(static_cast<std::size_t>(cfg.items));
    for (int u = 0; u < cfg.users; ++u) {
        std::vector<double> taste(static_cast<std::size_t>(cfg.taste_dim));
        for (double& t : taste) t = user_rng.normal();
        const bool green_user = user_rng.uniform() < cfg.green_user_fraction;
        for (int j = 0; j < n; ++j) {
            out.user_affinity[static_cast<std::size_t>(u)][static_cast<std::size_t>(j)] =
                green_user ? cfg.affinity_scale * user_rng.uniform(0.5, 1.5) : 0.0;
        }
        for (int i = 0; i < cfg.items; ++i) {
            double s = 0.0;
            for (int t = 0; t < cfg.taste_dim; ++t) {
                s += taste[static_cast<std::size_t>(t)] * item_latent[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
            }
            s *= cfg.taste_scale;
            for (int j = 0; j < n; ++j) {
                s += out.user_affinity[static_cast<std::size_t>(u)][static_cast<std::size_t>(j)] *
                     item_green[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            }
            double g = pick_rng.uniform();
            while (g <= 0.0) g = pick_rng.uniform();
            logit[static_cast<std::size_t>(i)] = s - std::log(-std::log(g));
        }
        for (int i = 0; i < cfg.items; ++i) order[static_cast<std::size_t>(i)] = i;
        std::partial_sort(order.begin(), order.begin() + cfg.interactions_per_user, order.end(),
                          [&](int a, int b) { return logit[static_cast<std::size_t>(a)] > logit[static_cast<std::size_t>(b)]; });
        std::vector<int> chosen(order.begin(), order.begin() + cfg.interactions_per_user);
        pick_rng.shuffle(chosen);
        out.user_items[static_cast<std::size_t>(u)] = std::move(chosen);
    }

    nlohmann::json meta;
    meta["users"] = cfg.users;
    meta["items"] = cfg.items;
    meta["interactions_per_user"] = cfg.interactions_per_user;
    meta["taste_dim"] = cfg.taste_dim;
    meta["taste_scale"] = cfg.taste_scale;
    meta["affinity_scale"] = cfg.affinity_scale;
    meta["green_user_fraction"] = cfg.green_user_fraction;
    meta["seed"] = cfg.seed;
    meta["indicators"] = nlohmann::json::array();
    for (const auto& ind : cfg.indicators) {
        meta["indicators"].push_back({{"name", ind.name}, {"direction", to_string(ind.direction)}, {"min", ind.min}, {"max", ind.max}});
    }
    meta["user_affinity"] = out.user_affinity;
    out.metadata = std::move(meta);
    return out;
}

inline InteractionLog SynthCorpus::to_log(int min_interactions) const {
    (void)min_interactions;  // generation guarantees per-user counts; item filtering is the loader's job
    const int n = static_cast<int>(config.indicators.size());
    InteractionLog log;
    log.specs.reserve(static_cast<std::size_t>(n));
    for (const auto& ind : config.indicators) {
        IndicatorSpec s;
        s.name = ind.name;
        s.direction = ind.direction;
        log.specs.push_back(std::move(s));
    }
    log.item_keys.emplace_back("");
    log.item_raw.emplace_back(static_cast<std::size_t>(n), 0.0);
    std::vector<int> item_id(item_values.size(), -1);
    for (std::size_t u = 0; u < user_items.size(); ++u) {
        log.user_keys.push_back("u" + std::to_string(u));
        for (std::size_t k = 0; k < user_items[u].size(); ++k) {
            const int raw_item = user_items[u][k];
            int& id = item_id[static_cast<std::size_t>(raw_item)];
            if (id < 0) {
                id = static_cast<int>(log.item_keys.size());
                log.item_keys.push_back("i" + std::to_string(raw_item));
                log.item_raw.push_back(item_values[static_cast<std::size_t>(raw_item)]);
            }
            log.interactions.push_back(Interaction{static_cast<int>(u), id, static_cast<std::int64_t>(k)});
        }
    }
    return log;
}

}  // namespace grape
