#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "grape/ablate.hpp"
#include "grape/config.hpp"
#include "grape/report.hpp"
#include "grape/synth.hpp"
#include "test_util.hpp"

using namespace grape;

namespace {

EvalReport sample_report() {
    EvalReport r;
    r.config_hash = 0xabcdef12345678ull;
    r.seed = 7;
    r.epoch = 3;
    r.indicator_names = {"EIS", "NIS", "HMI"};
    for (const int n : {5, 10, 20}) {
        CutoffMetrics m;
        m.cutoff = n;
        m.hr = 0.01 * n;
        m.ndcg = 0.004 * n + 1e-7;  // nontrivial doubles
        m.mean_indicators = {88.125, 34.0 / 3.0, 42.42};
        r.cutoffs.push_back(m);
    }
    return r;
}

int count_lines(const std::string& s) {
    int lines = 0;
    for (const char c : s) {
        if (c == '\n') ++lines;
    }
    return lines;
}

}  // namespace

TEST_CASE("report JSON round-trips to an equal in-memory report") {
    const EvalReport r = sample_report();
    const EvalReport back = report_from_json(report_to_json(r));
    CHECK(back == r);
    // Through a file as well.
    const auto dir = test_util::make_temp_dir("report");
    write_report_json((dir / "r.json").string(), r);
    std::ifstream f(dir / "r.json");
    nlohmann::json j;
    f >> j;
    CHECK(report_from_json(j) == r);
}

TEST_CASE("report CSV has one row per cutoff plus a header") {
    const auto dir = test_util::make_temp_dir("report_csv");
    write_report_csv((dir / "r.csv").string(), sample_report());
    const std::string text = test_util::read_file(dir / "r.csv");
    CHECK(count_lines(text) == 4);
    CHECK(text.find("cutoff,hr,ndcg,mean_EIS,mean_NIS,mean_HMI,seed,epoch,config_hash") == 0);
}

TEST_CASE("run config: overrides, hash, typed getters") {
    const auto dir = test_util::make_temp_dir("config");
    test_util::write_file(dir / "c.json", R"({
        "seed": 5,
        "data": {"interactions": "i.csv", "indicators": "g.csv", "min_interactions": 2},
        "model": {"embedding_dim": 8, "heads": 2},
        "loss": {"alpha": 0.7, "green_mode": "prioritized",
                 "priority": ["NIS", "EIS"], "beta": {"EIS": 80, "NIS": 40}},
        "train": {"learning_rate": 0.001, "batch_size": 16},
        "p_variant": "p_grape",
        "checkpoint": ""
    })");
    RunConfig cfg = RunConfig::load((dir / "c.json").string());

    SECTION("typed getters with defaults") {
        CHECK(cfg.seed() == 5);
        CHECK(cfg.min_interactions() == 2);
        CHECK(cfg.model_config().embedding_dim == 8);
        CHECK(cfg.model_config().heads == 2);
        CHECK(cfg.model_config().layers == 1);  // default
        CHECK(cfg.train_config().batch_size == 16);
        CHECK(cfg.p_variant() == PVariant::PGrape);
    }
    SECTION("loss config resolves names against the corpus specs") {
        const std::vector<IndicatorSpec> specs = {{"EIS", Direction::LowerGreener, 70, 120},
                                                  {"NIS", Direction::HigherGreener, 30, 50}};
        const GreenLossConfig loss = cfg.loss_config(specs);
        CHECK(loss.mode == GreenMode::Prioritized);
        CHECK(loss.priority == std::vector<int>{1, 0});
        CHECK(loss.beta == std::vector<double>{80, 40});
    }
    SECTION("overrides rewrite existing keys and reject unknown paths") {
        cfg.apply_override("model.embedding_dim=32");
        CHECK(cfg.model_config().embedding_dim == 32);
        cfg.apply_override("loss.alpha=0.9");
        REQUIRE_THROWS_AS(cfg.apply_override("model.typo_key=1"), ConfigError);
        REQUIRE_THROWS_AS(cfg.apply_override("nonsense"), ConfigError);
    }
    SECTION("hash ignores the checkpoint path but tracks other fields") {
        const std::uint64_t h0 = cfg.hash();
        RunConfig cfg2 = RunConfig::load((dir / "c.json").string());
        cfg2.apply_override("checkpoint=somewhere/else.bin");
        CHECK(cfg2.hash() == h0);
        cfg2.apply_override("loss.alpha=0.55");
        CHECK(cfg2.hash() != h0);
    }
    SECTION("beta outside the observed raw range is rejected") {
        const std::vector<IndicatorSpec> specs = {{"EIS", Direction::LowerGreener, 70, 120},
                                                  {"NIS", Direction::HigherGreener, 30, 50}};
        cfg.apply_override("loss.beta.EIS=500");
        REQUIRE_THROWS_AS(cfg.loss_config(specs), ConfigError);
    }
}

TEST_CASE("ablation runners produce the documented run counts") {
    SynthConfig sc;
    sc.users = 50;
    sc.items = 100;
    sc.interactions_per_user = 5;
    sc.seed = 2;
    Corpus corpus = build_sequences(synth_generate(sc).to_log());
    normalize_indicators(corpus);

    nlohmann::json base = {
        {"seed", 3},
        {"model", {{"embedding_dim", 4}, {"heads", 1}, {"layers", 1}, {"delta", 5.0}, {"max_seq_len", 4}}},
        {"loss",
         {{"alpha", 0.8},
          {"green_mode", "prioritized"},
          {"priority", nlohmann::json::array({"EIS", "NIS", "HMI"})},
          {"beta", {{"EIS", 90.0}, {"NIS", 40.0}, {"HMI", 40.0}}}}},
        {"train", {{"learning_rate", 0.003}, {"batch_size", 25}, {"max_epochs", 1}, {"patience", 1}}},
        {"p_variant", "p_grape"},
        {"ablate",
         {{"alpha", nlohmann::json::array({1.0, 0.5, 0.6, 0.9, 0.7, 0.8})},
          {"beta", {{"EIS", nlohmann::json::array({80.0, 100.0})}, {"NIS", nlohmann::json::array({35.0, 45.0})}}}}},
    };
    const RunConfig cfg(base);

    SECTION("alpha sweep: six runs sorted ascending") {
        const AblationTable t = ablate(AblateKind::AlphaSweep, corpus, cfg);
        REQUIRE(t.rows.size() == 6);
        CHECK(t.rows.front().coords.at("alpha") == "0.5");
        CHECK(t.rows.back().coords.at("alpha") == "1");
        for (std::size_t i = 1; i < t.rows.size(); ++i) {
            CHECK(std::stod(t.rows[i - 1].coords.at("alpha")) < std::stod(t.rows[i].coords.at("alpha")));
        }
    }
    SECTION("p variants: five runs") {
        const AblationTable t = ablate(AblateKind::PVariants, corpus, cfg);
        REQUIRE(t.rows.size() == 5);
        CHECK(t.rows.front().coords.at("p_variant") == "p_one");
        CHECK(t.rows.back().coords.at("p_variant") == "p_grape");
    }
    SECTION("priority orders: n! runs for n=3") {
        const AblationTable t = ablate(AblateKind::PriorityOrders, corpus, cfg);
        REQUIRE(t.rows.size() == 6);
    }
    SECTION("beta grid: cartesian product, rejected when out of range") {
        const AblationTable t = ablate(AblateKind::BetaGrid, corpus, cfg);
        REQUIRE(t.rows.size() == 4);

        RunConfig bad = cfg;
        bad.apply_override("ablate.beta.EIS=[10.0]");
        REQUIRE_THROWS_AS(ablate(AblateKind::BetaGrid, corpus, bad), ConfigError);
    }
    SECTION("alpha grid outside [0.5, 1] is rejected before any training") {
        RunConfig bad = cfg;
        bad.apply_override("ablate.alpha=[0.3]");
        REQUIRE_THROWS_AS(ablate(AblateKind::AlphaSweep, corpus, bad), ConfigError);
    }
    SECTION("ablation table emits CSV and JSON") {
        const AblationTable t = ablate(AblateKind::AlphaSweep, corpus, cfg);
        const auto dir = test_util::make_temp_dir("ablate");
        write_ablation_csv((dir / "t.csv").string(), t);
        write_ablation_json((dir / "t.json").string(), t);
        const std::string csv = test_util::read_file(dir / "t.csv");
        CHECK(count_lines(csv) == 1 + 6 * 3);  // header + runs x cutoffs
        std::ifstream f(dir / "t.json");
        nlohmann::json j;
        f >> j;
        CHECK(j.at("runs").size() == 6);
    }
}
