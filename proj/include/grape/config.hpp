#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "grape/dataset.hpp"
#include "grape/errors.hpp"
#include "grape/losses.hpp"
#include "grape/model.hpp"
#include "grape/train_config.hpp"

namespace grape {

// Run configuration: a single JSON file covering data paths, model, loss,
// training, P variant and ablation grids, with dotted-key overrides from
// the command line.
class RunConfig {
public:
    RunConfig() : j_(nlohmann::json::object()) {}
    explicit RunConfig(nlohmann::json j) : j_(std::move(j)) {}

    static RunConfig load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config file: " + path);
        nlohmann::json j;
        try {
            is >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config is not valid JSON: " + std::string(e.what()));
        }
        if (!j.is_object()) throw ConfigError("config root must be a JSON object");
        return RunConfig(std::move(j));
    }

    const nlohmann::json& json() const { return j_; }

    // key=value with dotted paths; the path must already exist in the file
    // so typos fail loudly. The value is parsed as JSON when possible.
    void apply_override(const std::string& assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
        const std::string path = assignment.substr(0, eq);
        const std::string raw = assignment.substr(eq + 1);
        nlohmann::json* node = &j_;
        std::size_t start = 0;
        std::vector<std::string> parts;
        while (true) {
            const auto dot = path.find('.', start);
            parts.push_back(path.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
            if (dot == std::string::npos) break;
            start = dot + 1;
        }
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
            if (!node->is_object() || !node->contains(parts[i])) {
                throw ConfigError("override path not in config: " + path);
            }
            node = &(*node)[parts[i]];
        }
        if (!node->is_object() || !node->contains(parts.back())) {
            throw ConfigError("override path not in config: " + path);
        }
        nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
        if (value.is_discarded()) value = raw;  // plain string
        (*node)[parts.back()] = std::move(value);
    }

    // Stable over the run-defining fields; the checkpoint path is excluded
    // so `train` and a later `evaluate` of its output hash identically.
    std::uint64_t hash() const {
        nlohmann::json j = j_;
        j.erase("checkpoint");
        const std::string s = j.dump();
        std::uint64_t h = 1469598103934665603ull;
        for (const char c : s) {
            h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
            h *= 1099511628211ull;
        }
        return h;
    }

    std::uint64_t seed() const { return get_or<std::uint64_t>("seed", 1); }
    void set_seed(std::uint64_t s) { j_["seed"] = s; }

    std::string interactions_path() const { return require_str({"data", "interactions"}); }
    std::string indicators_path() const { return require_str({"data", "indicators"}); }
    std::string indicator_spec_path() const { return get_nested_or<std::string>({"data", "indicator_spec"}, ""); }
    int min_interactions() const { return get_nested_or<int>({"data", "min_interactions"}, 10); }
    std::string checkpoint_path() const { return get_or<std::string>("checkpoint", ""); }

    PVariant p_variant() const { return p_variant_from_string(get_or<std::string>("p_variant", "p_grape")); }

    ModelConfig model_config() const {
        ModelConfig m;
        m.embedding_dim = get_nested_or<int>({"model", "embedding_dim"}, 16);
        m.heads = get_nested_or<int>({"model", "heads"}, 1);
        m.layers = get_nested_or<int>({"model", "layers"}, 1);
        m.delta = get_nested_or<double>({"model", "delta"}, 10.0);
        m.max_seq_len = get_nested_or<int>({"model", "max_seq_len"}, 30);
        m.attention_scaling = get_nested_or<bool>({"model", "attention_scaling"}, true);
        m.ffn_hidden = get_nested_or<int>({"model", "ffn_hidden"}, 0);
        m.per_pair_projections = get_nested_or<bool>({"model", "per_pair_projections"}, false);
        m.use_residual = get_nested_or<bool>({"model", "use_residual"}, false);
        return m;
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.learning_rate = get_nested_or<double>({"train", "learning_rate"}, 1e-3);
        t.batch_size = get_nested_or<int>({"train", "batch_size"}, 128);
        t.max_epochs = get_nested_or<int>({"train", "max_epochs"}, 50);
        t.patience = get_nested_or<int>({"train", "patience"}, 10);
        t.l2 = get_nested_or<double>({"train", "l2"}, 0.0);
        if (j_.contains("train") && j_["train"].contains("eval_cutoffs")) {
            t.eval_cutoffs.clear();
            for (const auto& c : j_["train"]["eval_cutoffs"]) t.eval_cutoffs.push_back(c.get<int>());
        }
        t.seed = seed();
        return t;
    }

    // Indicator names in priority/beta are resolved against the corpus specs.
    GreenLossConfig loss_config(const std::vector<IndicatorSpec>& specs) const {
        GreenLossConfig g;
        g.alpha = get_nested_or<double>({"loss", "alpha"}, 1.0);
        g.mode = green_mode_from_string(get_nested_or<std::string>({"loss", "green_mode"}, "non_prioritized"));
        g.raw_green_deltas = get_nested_or<bool>({"loss", "raw_green_deltas"}, false);
        g.all_pass_zero = get_nested_or<bool>({"loss", "all_pass_zero"}, false);
        g.green_pairs_per_step = get_nested_or<int>({"loss", "green_pairs_per_step"}, 2);
        const int n = static_cast<int>(specs.size());
        auto index_of = [&](const std::string& name) {
            for (int j = 0; j < n; ++j) {
                if (specs[static_cast<std::size_t>(j)].name == name) return j;
            }
            throw ConfigError("unknown indicator name in loss config: '" + name + "'");
        };
        if (j_.contains("loss") && j_["loss"].contains("priority")) {
            for (const auto& name : j_["loss"]["priority"]) g.priority.push_back(index_of(name.get<std::string>()));
        } else {
            for (int j = 0; j < n; ++j) g.priority.push_back(j);
        }
        g.beta.assign(static_cast<std::size_t>(n), 0.0);
        if (j_.contains("loss") && j_["loss"].contains("beta")) {
            for (const auto& [name, value] : j_["loss"]["beta"].items()) {
                g.beta[static_cast<std::size_t>(index_of(name))] = value.get<double>();
            }
        } else if (g.mode == GreenMode::Prioritized) {
            throw ConfigError("prioritized green loss needs loss.beta thresholds");
        }
        g.validate(specs);
        return g;
    }

    template <typename T>
    T get_or(const std::string& key, T def) const {
        if (!j_.contains(key)) return def;
        try {
            return j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config field '" + key + "' has the wrong type");
        }
    }

    template <typename T>
    T get_nested_or(std::initializer_list<const char*> path, T def) const {
        const nlohmann::json* node = &j_;
        for (const char* p : path) {
            if (!node->is_object() || !node->contains(p)) return def;
            node = &(*node)[p];
        }
        try {
            return node->get<T>();
        } catch (const nlohmann::json::exception&) {
            std::string full;
            for (const char* p : path) full += std::string(full.empty() ? "" : ".") + p;
            throw ConfigError("config field '" + full + "' has the wrong type");
        }
    }

private:
    std::string require_str(std::initializer_list<const char*> path) const {
        const std::string v = get_nested_or<std::string>(path, "");
        if (v.empty()) {
            std::string full;
            for (const char* p : path) full += std::string(full.empty() ? "" : ".") + p;
            throw ConfigError("config field '" + full + "' is required");
        }
        return v;
    }

    nlohmann::json j_;
};

}  // namespace grape
