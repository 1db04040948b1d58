#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "grape/grad_check.hpp"
#include "grape/losses.hpp"
#include "grape/model.hpp"
#include "grape/rng.hpp"
#include "grape/train.hpp"
#include "test_util.hpp"

using namespace grape;

namespace {

// Deterministic micro-batch loss over two users: one Normal pair and one
// same-side green pair each, non-prioritized green loss at alpha 0.7.
struct TinyLossFixture {
    Corpus corpus;
    GrapeModel model;

    TinyLossFixture(int heads, bool per_pair, bool residual)
        : corpus(test_util::make_corpus(
              {{1, 2, 3, 4, 5}, {2, 4, 6, 1, 2}, {5, 6, 2, 3, 1}},
              {{74, 37}, {86, 34}, {95, 42}, {110, 31}, {80, 45}, {102, 39}},
              {{"EIS", Direction::LowerGreener, 0, 0}, {"NIS", Direction::HigherGreener, 0, 0}})),
          model(make_model(corpus, heads, per_pair, residual)) {}

    static GrapeModel make_model(const Corpus& corpus, int heads, bool per_pair, bool residual) {
        ModelConfig cfg;
        cfg.embedding_dim = 4;
        cfg.heads = heads;
        cfg.layers = 1;
        cfg.delta = 10.0;
        cfg.max_seq_len = 3;
        cfg.ffn_hidden = 8;
        cfg.per_pair_projections = per_pair;
        cfg.use_residual = residual;
        cfg.attention_scaling = !per_pair;  // exercise both logit scalings
        Rng rng(99);
        return GrapeModel(cfg, corpus, PVariant::PGrape, rng);
    }

    double operator()() const {
        Tape tape;
        return build_loss(tape).item();
    }

    Value build_loss(Tape& tape) const {
        std::vector<std::pair<Value, Value>> normal;
        std::vector<GreenPairScores> green;
        const int users[2] = {0, 1};
        const TrainingPair normals[2] = {{0, TrainingPair::Kind::Normal, 1, 6}, {1, TrainingPair::Kind::Normal, 4, 5}};
        const TrainingPair greens[2] = {{0, TrainingPair::Kind::GreenPositive, 2, 3}, {1, TrainingPair::Kind::GreenNegative, 5, 3}};
        for (int k = 0; k < 2; ++k) {
            const auto& seq = corpus.users[static_cast<std::size_t>(users[k])];
            const std::span<const int> prefix(seq.items.data(), static_cast<std::size_t>(seq.train_len));
            const ForwardOutput fo = model.forward(tape, prefix);
            normal.emplace_back(model.score(tape, fo, users[k], normals[k].first),
                                model.score(tape, fo, users[k], normals[k].second));
            GreenPairScores gs;
            gs.y1 = model.score(tape, fo, users[k], greens[k].first);
            gs.y2 = model.score(tape, fo, users[k], greens[k].second);
            for (int j = 0; j < corpus.n(); ++j) {
                gs.deltas.push_back(green_delta(corpus.item_norm[static_cast<std::size_t>(greens[k].first)][static_cast<std::size_t>(j)],
                                                corpus.item_norm[static_cast<std::size_t>(greens[k].second)][static_cast<std::size_t>(j)]));
                gs.raw1.push_back(corpus.item_raw[static_cast<std::size_t>(greens[k].first)][static_cast<std::size_t>(j)]);
                gs.raw2.push_back(corpus.item_raw[static_cast<std::size_t>(greens[k].second)][static_cast<std::size_t>(j)]);
            }
            green.push_back(std::move(gs));
        }
        return total_loss(tape, normal_loss(tape, normal), nonprioritized_green_loss(tape, green), 0.7);
    }
};

GradCheckResult run_full_check(TinyLossFixture& fix, double tol) {
    auto params = fix.model.params().named_params();
    for (auto& [name, t] : params) t.zero_grad();
    {
        Tape tape;
        tape.backward(fix.build_loss(tape));
    }
    return grad_check(params, fix, tol);
}

}  // namespace

TEST_CASE("grad_check passes on a plain linear layer") {
    Rng rng(5);
    Tensor w(3, 2, true), b(1, 2, true), x(4, 3);
    for (auto& v : w.values()) v = rng.normal();
    for (auto& v : b.values()) v = rng.normal();
    for (auto& v : x.values()) v = rng.normal();

    auto build = [&](Tape& t) { return t.mean(t.sigmoid(t.add_row_broadcast(t.matmul(t.constant(x), t.track(w)), t.track(b)))); };
    {
        Tape tape;
        tape.backward(build(tape));
    }
    auto loss_fn = [&]() {
        Tape tape;
        return build(tape).item();
    };
    const auto result = grad_check({{"w", w}, {"b", b}}, loss_fn, 1e-4);
    INFO(result.summary());
    CHECK(result.pass());
}

TEST_CASE("full one-layer SIA model passes grad_check at 1e-3") {
    TinyLossFixture fix(/*heads=*/1, /*per_pair=*/false, /*residual=*/false);
    const auto result = run_full_check(fix, 1e-3);
    INFO(result.summary());
    CHECK(result.pass());
}

TEST_CASE("per-pair projections and residual variant also pass grad_check") {
    TinyLossFixture fix(/*heads=*/2, /*per_pair=*/true, /*residual=*/true);
    const auto result = run_full_check(fix, 1e-3);
    INFO(result.summary());
    CHECK(result.pass());
}

TEST_CASE("a corrupted analytic gradient fails grad_check loudly") {
    TinyLossFixture fix(1, false, false);
    auto params = fix.model.params().named_params();
    for (auto& [name, t] : params) t.zero_grad();
    {
        Tape tape;
        tape.backward(fix.build_loss(tape));
    }
    for (auto& [name, t] : params) {
        if (name == "layer0.ch0.ffn_b2") {
            for (auto& g : t.grad()) g = g * 3.0 + 0.05;
        }
    }
    const auto result = grad_check(params, fix, 1e-3);
    CHECK_FALSE(result.pass());
    double worst = 0.0;
    for (const auto& b : result.blocks) {
        if (b.name == "layer0.ch0.ffn_b2") worst = b.max_rel_err;
    }
    CHECK(worst > 1e-2);  // far beyond tolerance, not a borderline miss
}
