#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "grape/ablate.hpp"
#include "grape/checkpoint.hpp"
#include "grape/config.hpp"
#include "grape/dataset.hpp"
#include "grape/errors.hpp"
#include "grape/report.hpp"
#include "grape/synth.hpp"
#include "grape/train.hpp"

namespace grape::cli {

namespace fs = std::filesystem;

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

inline RunConfig load_config(const CommonArgs& args) {
    RunConfig cfg = RunConfig::load(args.config_path);
    for (const auto& o : args.overrides) cfg.apply_override(o);
    if (args.seed_set) cfg.set_seed(args.seed);
    return cfg;
}

inline Corpus load_pipeline(const RunConfig& cfg, InteractionLog* log_out = nullptr) {
    InteractionLog log =
        load_corpus(cfg.interactions_path(), cfg.indicators_path(), cfg.min_interactions(), cfg.indicator_spec_path());
    if (log_out) *log_out = log;
    Corpus corpus = build_sequences(log);
    normalize_indicators(corpus);
    return corpus;
}

inline SynthConfig synth_config(const RunConfig& cfg) {
    SynthConfig s;
    s.users = cfg.get_nested_or<int>({"synth", "users"}, s.users);
    s.items = cfg.get_nested_or<int>({"synth", "items"}, s.items);
    s.interactions_per_user = cfg.get_nested_or<int>({"synth", "interactions_per_user"}, s.interactions_per_user);
    s.taste_dim = cfg.get_nested_or<int>({"synth", "taste_dim"}, s.taste_dim);
    s.taste_scale = cfg.get_nested_or<double>({"synth", "taste_scale"}, s.taste_scale);
    s.affinity_scale = cfg.get_nested_or<double>({"synth", "affinity_scale"}, s.affinity_scale);
    s.green_user_fraction = cfg.get_nested_or<double>({"synth", "green_user_fraction"}, s.green_user_fraction);
    s.seed = cfg.seed();
    if (cfg.json().contains("synth") && cfg.json()["synth"].contains("indicators")) {
        s.indicators.clear();
        for (const auto& ind : cfg.json()["synth"]["indicators"]) {
            SynthIndicator si;
            si.name = ind.at("name").get<std::string>();
            si.direction = direction_from_string(ind.at("direction").get<std::string>());
            si.min = ind.at("min").get<double>();
            si.max = ind.at("max").get<double>();
            s.indicators.push_back(std::move(si));
        }
    }
    return s;
}

inline void cmd_prepare(const RunConfig& cfg, const std::string& out_dir) {
    InteractionLog log;
    const Corpus corpus = load_pipeline(cfg, &log);
    fs::create_directories(out_dir);

    nlohmann::json manifest;
    manifest["users"] = log.user_count();
    manifest["items"] = log.item_count();
    manifest["interactions"] = log.interactions.size();
    manifest["sequence_users"] = corpus.user_count();
    manifest["skipped_short_users"] = corpus.skipped_short_users;
    manifest["indicators"] = nlohmann::json::array();
    for (const auto& s : corpus.specs) {
        manifest["indicators"].push_back({{"name", s.name},
                                          {"direction", to_string(s.direction)},
                                          {"observed_min", s.observed_min},
                                          {"observed_max", s.observed_max}});
    }
    std::ofstream(fs::path(out_dir) / "manifest.json") << manifest.dump(2) << "\n";

    {
        std::ofstream f(fs::path(out_dir) / "filtered_interactions.csv");
        f << "user_id,item_id,timestamp\n";
        for (const auto& x : log.interactions) {
            f << log.user_keys[static_cast<std::size_t>(x.user)] << "," << log.item_keys[static_cast<std::size_t>(x.item)]
              << "," << x.timestamp << "\n";
        }
    }
    {
        std::ofstream f(fs::path(out_dir) / "filtered_indicators.csv");
        f.precision(17);
        f << "item_id";
        for (const auto& s : corpus.specs) f << "," << s.name;
        f << "\n";
        for (int item = 1; item <= corpus.item_count; ++item) {
            f << corpus.item_keys[static_cast<std::size_t>(item)];
            for (const double v : corpus.item_raw[static_cast<std::size_t>(item)]) f << "," << v;
            f << "\n";
        }
    }
    {
        std::ofstream f(fs::path(out_dir) / "splits.csv");
        f << "user_id,length,train_len,valid_item,test_item\n";
        for (const auto& seq : corpus.users) {
            f << corpus.user_keys[static_cast<std::size_t>(seq.user)] << "," << seq.length() << "," << seq.train_len << ","
              << corpus.item_keys[static_cast<std::size_t>(seq.valid_target())] << ","
              << corpus.item_keys[static_cast<std::size_t>(seq.test_target())] << "\n";
        }
    }
    std::cout << "users=" << log.user_count() << " items=" << log.item_count() << " interactions=" << log.interactions.size()
              << " sequence_users=" << corpus.user_count() << " skipped_short_users=" << corpus.skipped_short_users << "\n";
}

// Per-user mean/variance profile, one column block per indicator, each block
// independently sorted ascending by mean.
inline void cmd_stats(const RunConfig& cfg, const std::string& out_dir) {
    const Corpus corpus = load_pipeline(cfg);
    const auto profile = user_green_profile(corpus);
    fs::create_directories(out_dir);
    std::ofstream f(fs::path(out_dir) / "user_green_profile.csv");
    f.precision(17);
    f << "rank";
    for (const auto& s : corpus.specs) {
        f << "," << s.name << "_user," << s.name << "_mean," << s.name << "_variance";
    }
    f << "\n";
    for (int u = 0; u < corpus.user_count(); ++u) {
        f << u;
        for (int j = 0; j < corpus.n(); ++j) {
            const auto& e = profile[static_cast<std::size_t>(j)][static_cast<std::size_t>(u)];
            f << "," << corpus.user_keys[static_cast<std::size_t>(e.user)] << "," << e.mean << "," << e.variance;
        }
        f << "\n";
    }
    std::cout << "wrote " << (fs::path(out_dir) / "user_green_profile.csv").string() << " (" << corpus.user_count()
              << " rows x " << corpus.n() << " indicators)\n";
}

inline void cmd_synth(const RunConfig& cfg, const std::string& out_dir) {
    const SynthCorpus synth = synth_generate(synth_config(cfg));
    synth.write(out_dir);
    std::cout << "wrote synthetic corpus to " << out_dir << " (users=" << synth.config.users
              << " items=" << synth.config.items << ")\n";
}

inline void cmd_train(const RunConfig& cfg, const std::string& out_dir) {
    const Corpus corpus = load_pipeline(cfg);
    const ModelConfig model_cfg = cfg.model_config();
    const GreenLossConfig loss_cfg = cfg.loss_config(corpus.specs);
    const TrainConfig train_cfg = cfg.train_config();
    const TrainResult result = train(corpus, model_cfg, loss_cfg, train_cfg, cfg.p_variant(), cfg.hash());

    fs::create_directories(out_dir);
    save_checkpoint((fs::path(out_dir) / "checkpoint.bin").string(), result.model_config, result.bins, result.params,
                    train_cfg.seed, result.best_epoch);
    write_training_log((fs::path(out_dir) / "training_log.csv").string(), result.log);
    write_report_csv((fs::path(out_dir) / "report.csv").string(), result.test_report);
    write_report_json((fs::path(out_dir) / "report.json").string(), result.test_report);
    std::cout << "best_epoch=" << result.best_epoch << " test_hr@10=" << result.test_report.at(10).hr
              << " test_ndcg@10=" << result.test_report.at(10).ndcg << "\n";
}

inline void cmd_evaluate(const RunConfig& cfg, const std::string& out_dir) {
    const std::string ckpt_path = cfg.checkpoint_path();
    if (ckpt_path.empty()) throw ConfigError("config field 'checkpoint' is required for evaluate");
    const Corpus corpus = load_pipeline(cfg);
    const LoadedCheckpoint loaded = load_checkpoint(ckpt_path);
    const GrapeModel model = restore_model(loaded, corpus);
    const TrainConfig train_cfg = cfg.train_config();
    const EvalReport report = evaluate(model, corpus, EvalTarget::Test, train_cfg.eval_cutoffs, train_cfg.eval_threads,
                                       cfg.hash(), loaded.seed, loaded.epoch);
    fs::create_directories(out_dir);
    write_report_csv((fs::path(out_dir) / "report.csv").string(), report);
    write_report_json((fs::path(out_dir) / "report.json").string(), report);
    std::cout << "test_hr@10=" << report.at(10).hr << " test_ndcg@10=" << report.at(10).ndcg << "\n";
}

inline void cmd_ablate(const RunConfig& cfg, const std::string& out_dir, const std::string& kind_str) {
    const AblateKind kind = ablate_kind_from_string(kind_str);
    const Corpus corpus = load_pipeline(cfg);
    const AblationTable table = ablate(kind, corpus, cfg);
    fs::create_directories(out_dir);
    const std::string base = "ablation_" + to_string(kind);
    write_ablation_csv((fs::path(out_dir) / (base + ".csv")).string(), table);
    write_ablation_json((fs::path(out_dir) / (base + ".json")).string(), table);
    std::cout << "wrote " << table.rows.size() << " runs to " << out_dir << "/" << base << ".{csv,json}\n";
}

// Entry point shared by the binary and the tests. `args` excludes argv[0].
// Exit codes: 0 success, 1 usage/validation, 2 runtime failure.
inline int run(const std::vector<std::string>& args) {
    CLI::App app{"GRAPE green food recommender pipeline"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string ablate_kind;
    struct Cmd {
        CLI::App* sub = nullptr;
        std::string name;
    };
    std::vector<Cmd> cmds;
    for (const std::string name : {"prepare", "stats", "synth", "train", "evaluate", "ablate"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", common.config_path, "run configuration JSON")->required();
        sub->add_option("--out", common.out_dir, "output directory (default: out)");
        sub->add_option("--set", common.overrides, "dotted-key override, e.g. --set train.batch_size=64");
        auto* seed_opt = sub->add_option("--seed", common.seed, "override the config seed");
        sub->callback([&common, seed_opt]() { common.seed_set = seed_opt->count() > 0; });
        if (name == "ablate") {
            sub->add_option("--kind", ablate_kind, "alpha_sweep | p_variants | priority_orders | beta_grid")->required();
        }
        cmds.push_back(Cmd{sub, name});
    }

    std::vector<const char*> argv;
    argv.push_back("grape");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const RunConfig cfg = load_config(common);
        for (const auto& c : cmds) {
            if (!c.sub->parsed()) continue;
            if (c.name == "prepare") cmd_prepare(cfg, common.out_dir);
            else if (c.name == "stats") cmd_stats(cfg, common.out_dir);
            else if (c.name == "synth") cmd_synth(cfg, common.out_dir);
            else if (c.name == "train") cmd_train(cfg, common.out_dir);
            else if (c.name == "evaluate") cmd_evaluate(cfg, common.out_dir);
            else if (c.name == "ablate") cmd_ablate(cfg, common.out_dir, ablate_kind);
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace grape::cli
