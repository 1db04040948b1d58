#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "grape/dataset.hpp"
#include "grape/errors.hpp"
#include "grape/losses.hpp"
#include "grape/metrics.hpp"
#include "grape/model.hpp"
#include "grape/optim.hpp"
#include "grape/rng.hpp"
#include "grape/train_config.hpp"

namespace grape {

enum class EvalTarget { Validation, Test };

// Model input and held-out target for one user under the leave-one-out
// protocol: validation ranks from the training prefix, test ranks from
// prefix + validation item.
inline std::span<const int> eval_input(const UserSequence& seq, EvalTarget target) {
    const std::size_t len = target == EvalTarget::Validation ? static_cast<std::size_t>(seq.train_len)
                                                             : static_cast<std::size_t>(seq.train_len) + 1;
    return std::span<const int>(seq.items.data(), len);
}

inline int eval_target_item(const UserSequence& seq, EvalTarget target) {
    return target == EvalTarget::Validation ? seq.valid_target() : seq.test_target();
}

// Full-catalog ranking for one user: candidates are every item except the
// ones in the input history (the current target always stays rankable).
inline std::vector<int> rank_user(const GrapeModel& model, const Corpus& corpus, int user, EvalTarget target) {
    const auto& seq = corpus.users[static_cast<std::size_t>(user)];
    const auto input = eval_input(seq, target);
    const int target_item = eval_target_item(seq, target);
    std::vector<char> excluded(static_cast<std::size_t>(corpus.item_count) + 1, 0);
    for (const int item : input) excluded[static_cast<std::size_t>(item)] = 1;
    excluded[static_cast<std::size_t>(target_item)] = 0;
    std::vector<int> candidates;
    candidates.reserve(static_cast<std::size_t>(corpus.item_count));
    for (int item = 1; item <= corpus.item_count; ++item) {
        if (!excluded[static_cast<std::size_t>(item)]) candidates.push_back(item);
    }
    Tape tape;
    const ForwardOutput fo = model.forward(tape, input);
    const std::vector<double> scores = model.score_all(fo, user, candidates);
    return rank_all(candidates, scores);
}

// Rankings for every user, fanned out over a frozen model and joined in
// user-id order.
inline std::vector<std::vector<int>> rank_users(const GrapeModel& model, const Corpus& corpus, EvalTarget target,
                                                int threads = 0) {
    const int v = corpus.user_count();
    std::vector<std::vector<int>> out(static_cast<std::size_t>(v));
    int t = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
    t = std::max(1, std::min(t, v));
    if (t == 1) {
        for (int u = 0; u < v; ++u) out[static_cast<std::size_t>(u)] = rank_user(model, corpus, u, target);
        return out;
    }
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(t));
    for (int w = 0; w < t; ++w) {
        workers.emplace_back([&, w]() {
            for (int u = w; u < v; u += t) out[static_cast<std::size_t>(u)] = rank_user(model, corpus, u, target);
        });
    }
    for (auto& th : workers) th.join();
    return out;
}

inline EvalReport evaluate(const GrapeModel& model, const Corpus& corpus, EvalTarget target, const std::vector<int>& cutoffs,
                           int threads = 0, std::uint64_t config_hash = 0, std::uint64_t seed = 0, int epoch = 0) {
    const auto rankings = rank_users(model, corpus, target, threads);
    std::vector<int> targets;
    targets.reserve(corpus.users.size());
    for (const auto& seq : corpus.users) targets.push_back(eval_target_item(seq, target));

    EvalReport report;
    report.config_hash = config_hash;
    report.seed = seed;
    report.epoch = epoch;
    for (const auto& spec : corpus.specs) report.indicator_names.push_back(spec.name);
    std::vector<int> sorted_cutoffs = cutoffs;
    std::sort(sorted_cutoffs.begin(), sorted_cutoffs.end());
    for (const int N : sorted_cutoffs) {
        CutoffMetrics m;
        m.cutoff = N;
        std::tie(m.hr, m.ndcg) = hr_ndcg_at_n(rankings, targets, N);
        m.mean_indicators = mean_indicator_at_n(rankings, corpus.item_raw, corpus.n(), N);
        report.cutoffs.push_back(std::move(m));
    }
    return report;
}

struct EpochLog {
    int epoch = 0;
    double loss_total = 0.0;
    double loss_normal = 0.0;
    double loss_green = 0.0;
    double val_hr10 = 0.0;
    double val_ndcg10 = 0.0;
    bool improved = false;
};

struct TrainResult {
    ModelConfig model_config;
    BinTable bins;
    ParameterSet params;           // best-validation parameters
    EvalReport test_report;
    std::vector<EpochLog> log;
    int best_epoch = 0;

    GrapeModel rebuild(const Corpus& corpus) const { return GrapeModel(model_config, bins, params.clone(), corpus); }
};

namespace detail {

struct UserStep {
    int user = -1;
    std::optional<TrainingPair> normal;
    std::vector<TrainingPair> green;
};

inline std::vector<UserStep> group_pairs(const std::vector<TrainingPair>& pairs) {
    std::vector<UserStep> steps;
    for (const auto& p : pairs) {
        if (steps.empty() || steps.back().user != p.user) {
            steps.push_back(UserStep{p.user, std::nullopt, {}});
        }
        if (p.kind == TrainingPair::Kind::Normal) {
            steps.back().normal = p;
        } else {
            steps.back().green.push_back(p);
        }
    }
    return steps;
}

}  // namespace detail

// One gradient step over a sampled batch. Returns (normal, green, total)
// loss values.
inline std::array<double, 3> train_step(GrapeModel& model, const Corpus& corpus, const GreenLossConfig& loss_cfg, Adam& adam,
                                        Rng& sampling_rng, int batch_size, int step_index) {
    const int green_pairs = loss_cfg.alpha == 1.0 ? 0 : loss_cfg.green_pairs_per_step;
    const auto pairs = sample_batch(corpus, batch_size, sampling_rng, green_pairs);
    const auto steps = detail::group_pairs(pairs);

    Tape tape;
    std::vector<std::pair<Value, Value>> normal_scores;
    std::vector<GreenPairScores> green_scores;
    for (const auto& us : steps) {
        const auto& seq = corpus.users[static_cast<std::size_t>(us.user)];
        const std::span<const int> prefix(seq.items.data(), static_cast<std::size_t>(seq.train_len));
        const ForwardOutput fo = model.forward(tape, prefix);
        if (us.normal) {
            validate_training_pair(corpus, *us.normal);
            normal_scores.emplace_back(model.score(tape, fo, us.user, us.normal->first),
                                       model.score(tape, fo, us.user, us.normal->second));
        }
        for (const auto& gp : us.green) {
            validate_training_pair(corpus, gp);
            GreenPairScores gs;
            gs.y1 = model.score(tape, fo, us.user, gp.first);
            gs.y2 = model.score(tape, fo, us.user, gp.second);
            for (int j = 0; j < corpus.n(); ++j) {
                const double d =
                    loss_cfg.raw_green_deltas
                        ? raw_green_delta(corpus.specs[static_cast<std::size_t>(j)].direction,
                                          corpus.item_raw[static_cast<std::size_t>(gp.first)][static_cast<std::size_t>(j)],
                                          corpus.item_raw[static_cast<std::size_t>(gp.second)][static_cast<std::size_t>(j)])
                        : green_delta(corpus.item_norm[static_cast<std::size_t>(gp.first)][static_cast<std::size_t>(j)],
                                      corpus.item_norm[static_cast<std::size_t>(gp.second)][static_cast<std::size_t>(j)]);
                gs.deltas.push_back(d);
                gs.raw1.push_back(corpus.item_raw[static_cast<std::size_t>(gp.first)][static_cast<std::size_t>(j)]);
                gs.raw2.push_back(corpus.item_raw[static_cast<std::size_t>(gp.second)][static_cast<std::size_t>(j)]);
            }
            green_scores.push_back(std::move(gs));
        }
    }

    const Value ln = normal_loss(tape, normal_scores);
    Value total;
    double green_value = 0.0;
    if (loss_cfg.alpha == 1.0 || green_scores.empty()) {
        total = ln;
    } else {
        const Value lg = loss_cfg.mode == GreenMode::NonPrioritized
                             ? nonprioritized_green_loss(tape, green_scores)
                             : prioritized_green_loss(tape, green_scores, loss_cfg, corpus.specs);
        green_value = lg.item();
        total = total_loss(tape, ln, lg, loss_cfg.alpha);
    }
    const double normal_value = ln.item();
    const double total_value = total.item();
    if (!std::isfinite(total_value)) {
        std::ostringstream os;
        os << "NaN/Inf loss at step " << step_index << " (normal=" << normal_value << ", green=" << green_value << ")";
        throw TrainError(os.str());
    }

    tape.backward(total);
    model.params().zero_padding_grad();
    adam.step();
    model.params().pin_padding_row();
    model.params().project_user_attention();
    return {normal_value, green_value, total_value};
}

// Full training run with early stopping on validation NDCG@10; the
// best-validation parameters are retained and evaluated on the test targets.
inline TrainResult train(const Corpus& corpus, const ModelConfig& model_cfg_in, const GreenLossConfig& loss_cfg,
                         const TrainConfig& train_cfg, PVariant variant, std::uint64_t config_hash = 0) {
    train_cfg.validate();
    loss_cfg.validate(corpus.specs);
    if (corpus.item_norm.empty()) throw TrainError("corpus is not normalized; call normalize_indicators first");
    if (train_cfg.batch_size > corpus.user_count()) {
        throw TrainError("batch_size exceeds user count; shrink the batch or grow the corpus");
    }

    Rng root(train_cfg.seed);
    Rng init_rng = root.substream("init");
    Rng sampling_rng = root.substream("sampling");

    ModelConfig model_cfg = model_cfg_in;
    model_cfg.indicator_count = corpus.n();
    GrapeModel model(model_cfg, corpus, variant, init_rng);

    AdamConfig adam_cfg;
    adam_cfg.learning_rate = train_cfg.learning_rate;
    adam_cfg.l2 = train_cfg.l2;
    Adam adam(model.params().trainable(), adam_cfg);

    const int steps_per_epoch = (corpus.user_count() + train_cfg.batch_size - 1) / train_cfg.batch_size;
    TrainResult result;
    result.model_config = model.config();
    result.bins = model.bins();

    double best_ndcg = -1.0;
    ParameterSet best_params;
    int best_epoch = 0;
    int stale_epochs = 0;
    int global_step = 0;

    for (int epoch = 1; epoch <= train_cfg.max_epochs; ++epoch) {
        EpochLog log;
        log.epoch = epoch;
        for (int s = 0; s < steps_per_epoch; ++s) {
            ++global_step;
            const auto losses = train_step(model, corpus, loss_cfg, adam, sampling_rng, train_cfg.batch_size, global_step);
            log.loss_normal += losses[0];
            log.loss_green += losses[1];
            log.loss_total += losses[2];
        }
        log.loss_normal /= steps_per_epoch;
        log.loss_green /= steps_per_epoch;
        log.loss_total /= steps_per_epoch;

        const EvalReport val = evaluate(model, corpus, EvalTarget::Validation, {10}, train_cfg.eval_threads);
        log.val_hr10 = val.at(10).hr;
        log.val_ndcg10 = val.at(10).ndcg;
        if (log.val_ndcg10 > best_ndcg) {
            best_ndcg = log.val_ndcg10;
            best_params = model.params().clone();
            best_epoch = epoch;
            stale_epochs = 0;
            log.improved = true;
        } else {
            ++stale_epochs;
        }
        result.log.push_back(log);
        if (stale_epochs >= train_cfg.patience) break;
    }

    result.params = std::move(best_params);
    result.best_epoch = best_epoch;
    GrapeModel best_model(result.model_config, result.bins, result.params.clone(), corpus);
    result.test_report = evaluate(best_model, corpus, EvalTarget::Test, train_cfg.eval_cutoffs, train_cfg.eval_threads,
                                  config_hash, train_cfg.seed, best_epoch);
    return result;
}

}  // namespace grape
