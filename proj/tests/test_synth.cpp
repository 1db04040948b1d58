#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include "grape/synth.hpp"

using namespace grape;

namespace {

SynthConfig small_config(double affinity, double fraction, std::uint64_t seed) {
    SynthConfig cfg;
    cfg.users = 120;
    cfg.items = 300;
    cfg.interactions_per_user = 12;
    cfg.affinity_scale = affinity;
    cfg.green_user_fraction = fraction;
    cfg.seed = seed;
    return cfg;
}

// Pearson correlation between per-item popularity and mean folded greenness.
double popularity_greenness_correlation(const SynthCorpus& corpus) {
    const int items = corpus.config.items;
    const int n = static_cast<int>(corpus.config.indicators.size());
    std::vector<double> pop(static_cast<std::size_t>(items), 0.0);
    for (const auto& seq : corpus.user_items) {
        for (const int i : seq) pop[static_cast<std::size_t>(i)] += 1.0;
    }
    std::vector<double> green(static_cast<std::size_t>(items), 0.0);
    for (int i = 0; i < items; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) {
            const auto& ind = corpus.config.indicators[static_cast<std::size_t>(j)];
            const double raw = corpus.item_values[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            acc += ind.direction == Direction::HigherGreener ? (raw - ind.min) / (ind.max - ind.min)
                                                             : (ind.max - raw) / (ind.max - ind.min);
        }
        green[static_cast<std::size_t>(i)] = acc / n;
    }
    double mp = 0.0, mg = 0.0;
    for (int i = 0; i < items; ++i) {
        mp += pop[static_cast<std::size_t>(i)];
        mg += green[static_cast<std::size_t>(i)];
    }
    mp /= items;
    mg /= items;
    double num = 0.0, dp = 0.0, dg = 0.0;
    for (int i = 0; i < items; ++i) {
        const double a = pop[static_cast<std::size_t>(i)] - mp;
        const double b = green[static_cast<std::size_t>(i)] - mg;
        num += a * b;
        dp += a * a;
        dg += b * b;
    }
    return num / std::sqrt(dp * dg);
}

}  // namespace

TEST_CASE("null model: zero affinity decouples popularity from greenness") {
    const SynthCorpus corpus = synth_generate(small_config(0.0, 0.0, 7));
    CHECK(std::fabs(popularity_greenness_correlation(corpus)) < 0.12);
    for (const auto& row : corpus.user_affinity) {
        for (const double a : row) CHECK(a == 0.0);
    }
}

TEST_CASE("planted affinity makes popular items greener than the catalog mean") {
    SynthConfig cfg = small_config(3.0, 1.0, 11);
    cfg.indicators = {{"G", Direction::HigherGreener, 0.0, 1.0}};
    const SynthCorpus corpus = synth_generate(cfg);

    std::vector<int> pop(static_cast<std::size_t>(cfg.items), 0);
    for (const auto& seq : corpus.user_items) {
        for (const int i : seq) ++pop[static_cast<std::size_t>(i)];
    }
    std::vector<int> order(static_cast<std::size_t>(cfg.items));
    for (int i = 0; i < cfg.items; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return pop[static_cast<std::size_t>(a)] > pop[static_cast<std::size_t>(b)]; });

    double top_mean = 0.0, catalog_mean = 0.0;
    const int top = 30;
    for (int k = 0; k < top; ++k) top_mean += corpus.item_values[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])][0];
    top_mean /= top;
    for (int i = 0; i < cfg.items; ++i) catalog_mean += corpus.item_values[static_cast<std::size_t>(i)][0];
    catalog_mean /= cfg.items;
    CHECK(top_mean > catalog_mean + 0.05);
    CHECK(popularity_greenness_correlation(corpus) > 0.3);
}

TEST_CASE("fixed seed reproduces the corpus bit for bit") {
    const SynthCorpus a = synth_generate(small_config(1.0, 0.5, 42));
    const SynthCorpus b = synth_generate(small_config(1.0, 0.5, 42));
    CHECK(a.item_values == b.item_values);
    CHECK(a.user_items == b.user_items);
    CHECK(a.user_affinity == b.user_affinity);
    const SynthCorpus c = synth_generate(small_config(1.0, 0.5, 43));
    CHECK(a.user_items != c.user_items);
}

TEST_CASE("infeasible and degenerate configs are rejected") {
    SynthConfig cfg = small_config(1.0, 1.0, 1);
    SECTION("more interactions than items") {
        cfg.interactions_per_user = cfg.items + 1;
        REQUIRE_THROWS_AS(synth_generate(cfg), ConfigError);
    }
    SECTION("too few users or items") {
        cfg.users = 10;
        REQUIRE_THROWS_AS(synth_generate(cfg), ConfigError);
    }
}

TEST_CASE("generated corpus round-trips through the loader") {
    const SynthCorpus synth = synth_generate(small_config(1.0, 0.5, 9));
    const InteractionLog log = synth.to_log();
    CHECK(log.user_count() == 120);
    CHECK(log.interactions.size() == 120u * 12u);
    const Corpus corpus = [&] {
        Corpus c = build_sequences(log);
        normalize_indicators(c);
        return c;
    }();
    CHECK(corpus.user_count() == 120);
    for (const auto& seq : corpus.users) CHECK(seq.length() == 12);
}
