#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "grape/dataset.hpp"
#include "grape/errors.hpp"
#include "grape/rng.hpp"
#include "grape/tape.hpp"
#include "grape/tensor.hpp"

namespace grape {

// User attention matrix variants.
enum class PVariant { Pone, PNRand, PN, PRand, PGrape };

inline std::string to_string(PVariant v) {
    switch (v) {
        case PVariant::Pone: return "p_one";
        case PVariant::PNRand: return "p_n_rand";
        case PVariant::PN: return "p_n";
        case PVariant::PRand: return "p_rand";
        case PVariant::PGrape: return "p_grape";
    }
    return "?";
}

inline PVariant p_variant_from_string(const std::string& s) {
    if (s == "p_one" || s == "pone") return PVariant::Pone;
    if (s == "p_n_rand" || s == "pn_rand") return PVariant::PNRand;
    if (s == "p_n" || s == "pn") return PVariant::PN;
    if (s == "p_rand" || s == "prand") return PVariant::PRand;
    if (s == "p_grape" || s == "pgrape" || s == "grape") return PVariant::PGrape;
    throw ConfigError("unknown P variant '" + s + "'");
}

struct ModelConfig {
    int embedding_dim = 16;       // d
    int heads = 1;                // M, must divide d
    int layers = 1;               // L, stacked SIA modules
    double delta = 10.0;          // indicator discretization granularity
    int max_seq_len = 30;         // w_max
    int indicator_count = 0;      // n, set from the corpus
    bool attention_scaling = true;
    int ffn_hidden = 0;           // 0 -> 2 * embedding_dim
    bool per_pair_projections = false;
    bool use_residual = false;

    int head_dim() const { return embedding_dim / heads; }
    int hidden() const { return ffn_hidden > 0 ? ffn_hidden : 2 * embedding_dim; }
    int channels() const { return indicator_count + 1; }

    void validate() const {
        if (embedding_dim <= 0 || heads <= 0 || layers <= 0) throw ConfigError("model dims must be positive");
        if (embedding_dim % heads != 0) throw ConfigError("embedding_dim must be divisible by heads");
        if (delta <= 0.0) throw ConfigError("delta must be positive");
        if (max_seq_len < 2) throw ConfigError("max_seq_len must be at least 2");
        if (indicator_count < 0) throw ConfigError("indicator_count must be non-negative");
    }
};

// Discretization of raw indicator values into shared-table rows. Bin caps
// come from the training split; unseen larger values clamp to the top bin.
struct BinTable {
    double delta = 1.0;
    std::vector<int> max_bin;  // per indicator
    int rows = 1;

    int bin(int indicator, double raw) const {
        const int cap = max_bin[static_cast<std::size_t>(indicator)];
        const int b = static_cast<int>(std::floor(raw / delta));
        return std::clamp(b, 0, cap);
    }
};

inline BinTable make_bins(const Corpus& corpus, double delta) {
    if (delta <= 0.0) throw ConfigError("delta must be positive");
    BinTable bins;
    bins.delta = delta;
    bins.max_bin.assign(static_cast<std::size_t>(corpus.n()), 0);
    for (int j = 0; j < corpus.n(); ++j) {
        double mx = 0.0;
        for (const auto& seq : corpus.users) {
            for (int k = 0; k < seq.train_len; ++k) {
                mx = std::max(mx, seq.indicators[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)]);
            }
        }
        bins.max_bin[static_cast<std::size_t>(j)] = static_cast<int>(std::floor(mx / delta));
    }
    bins.rows = 1;
    for (const int b : bins.max_bin) bins.rows = std::max(bins.rows, b + 1);
    return bins;
}

// Per-layer learnable arrays. Channel 0 is the item channel, channels
// 1..n the indicator channels.
struct LayerParams {
    std::vector<std::vector<Tensor>> wq, wk, wv;                  // [channel][head], d x d/M
    std::vector<std::vector<std::vector<Tensor>>> wq_pair, wk_pair;  // [x][y][head] when per_pair_projections
    Tensor r_item;                                                // [1 x (n+1)^2]
    Tensor r_green;                                               // [1 x n^2], defined iff n > 0
    Tensor gate_item_gain, gate_item_bias;                        // [1 x 1]
    Tensor gate_green_gain, gate_green_bias;                      // [1 x 1], defined iff n > 0
    std::vector<Tensor> w_out;                                    // [channel], d x d
    std::vector<Tensor> ffn_w1, ffn_b1, ffn_w2, ffn_b2;           // [channel]
};

struct ParameterSet {
    Tensor item_table;       // (|I|+1) x d, row 0 pinned to zero (padding)
    Tensor indicator_table;  // bin_rows x d, shared across indicators
    std::vector<LayerParams> layers;
    Tensor user_attention;   // P: v x (n+1), or 1 x (n+1) for the shared-row variants
    PVariant p_variant = PVariant::PGrape;

    bool p_trainable() const { return p_variant != PVariant::Pone; }

    std::vector<std::pair<std::string, Tensor>> named_params() const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.emplace_back("item_table", item_table);
        out.emplace_back("indicator_table", indicator_table);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& lp = layers[l];
            const std::string prefix = "layer" + std::to_string(l) + ".";
            for (std::size_t c = 0; c < lp.wq.size(); ++c) {
                for (std::size_t m = 0; m < lp.wq[c].size(); ++m) {
                    const std::string ch = prefix + "ch" + std::to_string(c) + ".head" + std::to_string(m) + ".";
                    out.emplace_back(ch + "wq", lp.wq[c][m]);
                    out.emplace_back(ch + "wk", lp.wk[c][m]);
                    out.emplace_back(ch + "wv", lp.wv[c][m]);
                }
            }
            for (std::size_t x = 0; x < lp.wq_pair.size(); ++x) {
                for (std::size_t y = 0; y < lp.wq_pair[x].size(); ++y) {
                    for (std::size_t m = 0; m < lp.wq_pair[x][y].size(); ++m) {
                        if (!lp.wq_pair[x][y][m].defined()) continue;
                        const std::string ch =
                            prefix + "pair" + std::to_string(x) + "_" + std::to_string(y) + ".head" + std::to_string(m) + ".";
                        out.emplace_back(ch + "wq", lp.wq_pair[x][y][m]);
                        out.emplace_back(ch + "wk", lp.wk_pair[x][y][m]);
                    }
                }
            }
            out.emplace_back(prefix + "r_item", lp.r_item);
            if (lp.r_green.defined()) out.emplace_back(prefix + "r_green", lp.r_green);
            out.emplace_back(prefix + "gate_item_gain", lp.gate_item_gain);
            out.emplace_back(prefix + "gate_item_bias", lp.gate_item_bias);
            if (lp.gate_green_gain.defined()) {
                out.emplace_back(prefix + "gate_green_gain", lp.gate_green_gain);
                out.emplace_back(prefix + "gate_green_bias", lp.gate_green_bias);
            }
            for (std::size_t c = 0; c < lp.w_out.size(); ++c) {
                const std::string ch = prefix + "ch" + std::to_string(c) + ".";
                out.emplace_back(ch + "w_out", lp.w_out[c]);
                out.emplace_back(ch + "ffn_w1", lp.ffn_w1[c]);
                out.emplace_back(ch + "ffn_b1", lp.ffn_b1[c]);
                out.emplace_back(ch + "ffn_w2", lp.ffn_w2[c]);
                out.emplace_back(ch + "ffn_b2", lp.ffn_b2[c]);
            }
        }
        out.emplace_back("P", user_attention);
        return out;
    }

    // Optimizer view: every parameter except a frozen P.
    std::vector<Tensor> trainable() const {
        std::vector<Tensor> out;
        for (auto& [name, t] : named_params()) {
            if (name == "P" && !p_trainable()) continue;
            out.push_back(t);
        }
        return out;
    }

    ParameterSet clone() const {
        ParameterSet c;
        c.item_table = item_table.clone();
        c.indicator_table = indicator_table.clone();
        c.p_variant = p_variant;
        c.user_attention = user_attention.clone();
        c.layers.reserve(layers.size());
        for (const auto& lp : layers) {
            LayerParams n;
            auto clone_grid = [](const std::vector<std::vector<Tensor>>& g) {
                std::vector<std::vector<Tensor>> out;
                out.reserve(g.size());
                for (const auto& row : g) {
                    std::vector<Tensor> r;
                    r.reserve(row.size());
                    for (const auto& t : row) r.push_back(t.defined() ? t.clone() : Tensor());
                    out.push_back(std::move(r));
                }
                return out;
            };
            n.wq = clone_grid(lp.wq);
            n.wk = clone_grid(lp.wk);
            n.wv = clone_grid(lp.wv);
            for (const auto& plane : lp.wq_pair) n.wq_pair.push_back(clone_grid(plane));
            for (const auto& plane : lp.wk_pair) n.wk_pair.push_back(clone_grid(plane));
            n.r_item = lp.r_item.clone();
            if (lp.r_green.defined()) n.r_green = lp.r_green.clone();
            n.gate_item_gain = lp.gate_item_gain.clone();
            n.gate_item_bias = lp.gate_item_bias.clone();
            if (lp.gate_green_gain.defined()) {
                n.gate_green_gain = lp.gate_green_gain.clone();
                n.gate_green_bias = lp.gate_green_bias.clone();
            }
            for (const auto& t : lp.w_out) n.w_out.push_back(t.clone());
            for (const auto& t : lp.ffn_w1) n.ffn_w1.push_back(t.clone());
            for (const auto& t : lp.ffn_b1) n.ffn_b1.push_back(t.clone());
            for (const auto& t : lp.ffn_w2) n.ffn_w2.push_back(t.clone());
            for (const auto& t : lp.ffn_b2) n.ffn_b2.push_back(t.clone());
            c.layers.push_back(std::move(n));
        }
        return c;
    }

    // The padding embedding row stays pinned at zero: its gradient is
    // dropped before the step and the row re-zeroed after.
    void zero_padding_grad() {
        auto& g = item_table.grad();
        for (int j = 0; j < item_table.cols(); ++j) g[static_cast<std::size_t>(j)] = 0.0;
    }
    void pin_padding_row() {
        for (int j = 0; j < item_table.cols(); ++j) item_table.at(0, j) = 0.0;
    }

    // Clamp negatives to zero and renormalize each P row to sum 1. Rows
    // already on the simplex are left bit-identical.
    void project_user_attention() {
        Tensor& P = user_attention;
        for (int u = 0; u < P.rows(); ++u) {
            bool clamped = false;
            double sum = 0.0;
            for (int j = 0; j < P.cols(); ++j) {
                if (P.at(u, j) < 0.0) {
                    P.at(u, j) = 0.0;
                    clamped = true;
                }
                sum += P.at(u, j);
            }
            if (!clamped && std::fabs(sum - 1.0) <= 1e-12) continue;
            if (sum <= 0.0) {
                for (int j = 0; j < P.cols(); ++j) P.at(u, j) = 1.0 / static_cast<double>(P.cols());
            } else {
                for (int j = 0; j < P.cols(); ++j) P.at(u, j) /= sum;
            }
        }
    }
};

// P initialization variants. PGrape row u is [1, mu*lambda + eps, ...] over
// the user's normalized training-prefix indicator sequences, renormalized to
// the simplex; PN pools the statistics over all users into one shared row.
inline Tensor init_P(PVariant variant, const Corpus& corpus, Rng& rng, double epsilon = 1e-3) {
    const int n = corpus.n();
    const int v = corpus.user_count();
    const int cols = n + 1;
    if (corpus.item_norm.empty() && (variant == PVariant::PGrape || variant == PVariant::PN)) {
        throw ConfigError("init_P needs normalized indicators; call normalize_indicators first");
    }
    auto normalized_stats = [&](const UserSequence& seq, int j) {
        double mean = 0.0;
        for (int k = 0; k < seq.train_len; ++k) {
            mean += corpus.item_norm[static_cast<std::size_t>(seq.items[static_cast<std::size_t>(k)])][static_cast<std::size_t>(j)];
        }
        mean /= static_cast<double>(seq.train_len);
        double var = 0.0;
        for (int k = 0; k < seq.train_len; ++k) {
            const double d =
                corpus.item_norm[static_cast<std::size_t>(seq.items[static_cast<std::size_t>(k)])][static_cast<std::size_t>(j)] -
                mean;
            var += d * d;
        }
        var /= static_cast<double>(seq.train_len);
        return std::pair<double, double>(mean, var);
    };
    auto renormalize = [](Tensor& t) {
        for (int r = 0; r < t.rows(); ++r) {
            double sum = 0.0;
            for (int c = 0; c < t.cols(); ++c) sum += t.at(r, c);
            for (int c = 0; c < t.cols(); ++c) t.at(r, c) = sum > 0.0 ? t.at(r, c) / sum : 1.0 / t.cols();
        }
    };

    switch (variant) {
        case PVariant::Pone: {
            Tensor P(v, cols);
            for (int u = 0; u < v; ++u)
                for (int c = 0; c < cols; ++c) P.at(u, c) = 1.0 / static_cast<double>(cols);
            P.set_requires_grad(false);
            return P;
        }
        case PVariant::PNRand: {
            Tensor P(1, cols, true);
            for (int c = 0; c < cols; ++c) P.at(0, c) = rng.uniform();
            renormalize(P);
            return P;
        }
        case PVariant::PN: {
            Tensor P(1, cols, true);
            P.at(0, 0) = 1.0;
            for (int j = 0; j < n; ++j) {
                // Pooled mean/variance over every user's training prefix.
                double mean = 0.0;
                std::size_t count = 0;
                for (const auto& seq : corpus.users) {
                    for (int k = 0; k < seq.train_len; ++k) {
                        mean += corpus.item_norm[static_cast<std::size_t>(seq.items[static_cast<std::size_t>(k)])]
                                                [static_cast<std::size_t>(j)];
                        ++count;
                    }
                }
                mean /= static_cast<double>(count);
                double var = 0.0;
                for (const auto& seq : corpus.users) {
                    for (int k = 0; k < seq.train_len; ++k) {
                        const double d =
                            corpus.item_norm[static_cast<std::size_t>(seq.items[static_cast<std::size_t>(k)])]
                                            [static_cast<std::size_t>(j)] -
                            mean;
                        var += d * d;
                    }
                }
                var /= static_cast<double>(count);
                P.at(0, j + 1) = mean * var + epsilon;
            }
            renormalize(P);
            return P;
        }
        case PVariant::PRand: {
            Tensor P(v, cols, true);
            for (int u = 0; u < v; ++u)
                for (int c = 0; c < cols; ++c) P.at(u, c) = rng.uniform();
            renormalize(P);
            return P;
        }
        case PVariant::PGrape: {
            Tensor P(v, cols, true);
            for (int u = 0; u < v; ++u) {
                const auto& seq = corpus.users[static_cast<std::size_t>(u)];
                P.at(u, 0) = 1.0;
                for (int j = 0; j < n; ++j) {
                    const auto [mean, var] = normalized_stats(seq, j);
                    P.at(u, j + 1) = mean * var + epsilon;
                }
            }
            renormalize(P);
            return P;
        }
    }
    throw ConfigError("unknown P variant");
}

inline ParameterSet init_parameters(const ModelConfig& cfg, int item_count, int bin_rows, const Corpus& corpus,
                                    PVariant variant, Rng& rng) {
    cfg.validate();
    const int d = cfg.embedding_dim;
    const int dh = cfg.head_dim();
    const int n = cfg.indicator_count;
    const int channels = cfg.channels();

    auto uniform_tensor = [&](int r, int c, double limit) {
        Tensor t(r, c, true);
        for (auto& v : t.values()) v = rng.uniform(-limit, limit);
        return t;
    };
    auto xavier = [&](int r, int c) { return uniform_tensor(r, c, std::sqrt(6.0 / static_cast<double>(r + c))); };
    auto zeros_param = [&](int r, int c) { return Tensor(r, c, true); };
    auto scalar_param = [&](double v) {
        Tensor t(1, 1, true);
        t.values()[0] = v;
        return t;
    };

    ParameterSet p;
    p.p_variant = variant;
    const double table_limit = 1.0 / std::sqrt(static_cast<double>(d));
    p.item_table = uniform_tensor(item_count + 1, d, table_limit);
    p.indicator_table = uniform_tensor(bin_rows, d, table_limit);
    p.pin_padding_row();

    p.layers.reserve(static_cast<std::size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; ++l) {
        LayerParams lp;
        lp.wq.assign(static_cast<std::size_t>(channels), {});
        lp.wk.assign(static_cast<std::size_t>(channels), {});
        lp.wv.assign(static_cast<std::size_t>(channels), {});
        for (int c = 0; c < channels; ++c) {
            for (int m = 0; m < cfg.heads; ++m) {
                lp.wq[static_cast<std::size_t>(c)].push_back(xavier(d, dh));
                lp.wk[static_cast<std::size_t>(c)].push_back(xavier(d, dh));
                lp.wv[static_cast<std::size_t>(c)].push_back(xavier(d, dh));
            }
        }
        if (cfg.per_pair_projections) {
            lp.wq_pair.assign(static_cast<std::size_t>(channels), std::vector<std::vector<Tensor>>(static_cast<std::size_t>(channels)));
            lp.wk_pair.assign(static_cast<std::size_t>(channels), std::vector<std::vector<Tensor>>(static_cast<std::size_t>(channels)));
            for (int x = 0; x < channels; ++x) {
                for (int y = 0; y < channels; ++y) {
                    if (x == y) continue;
                    for (int m = 0; m < cfg.heads; ++m) {
                        lp.wq_pair[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)].push_back(xavier(d, dh));
                        lp.wk_pair[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)].push_back(xavier(d, dh));
                    }
                }
            }
        }
        lp.r_item = zeros_param(1, channels * channels);
        if (n > 0) lp.r_green = zeros_param(1, n * n);
        lp.gate_item_gain = scalar_param(1.0);
        lp.gate_item_bias = scalar_param(0.0);
        if (n > 0) {
            lp.gate_green_gain = scalar_param(1.0);
            lp.gate_green_bias = scalar_param(0.0);
        }
        for (int c = 0; c < channels; ++c) {
            lp.w_out.push_back(xavier(d, d));
            lp.ffn_w1.push_back(xavier(d, cfg.hidden()));
            lp.ffn_b1.push_back(zeros_param(1, cfg.hidden()));
            lp.ffn_w2.push_back(xavier(cfg.hidden(), d));
            lp.ffn_b2.push_back(zeros_param(1, d));
        }
        p.layers.push_back(std::move(lp));
    }
    p.user_attention = init_P(variant, corpus, rng);
    return p;
}

// Last-position representation per channel, plus the full per-position
// matrices of the final layer for inspection.
struct ForwardOutput {
    std::vector<Value> channels;    // [channel] w_max x d
    std::vector<Value> final_vec;   // [channel] 1 x d
    int pad_len = 0;
};

// The GRAPE network bound to a corpus: embedding of item/indicator
// sequences, L stacked SIA modules, and the P-weighted scoring head.
class GrapeModel {
public:
    GrapeModel(ModelConfig cfg, const Corpus& corpus, PVariant variant, Rng& rng)
        : cfg_(std::move(cfg)) {
        cfg_.indicator_count = corpus.n();
        cfg_.validate();
        bins_ = make_bins(corpus, cfg_.delta);
        build_item_bins(corpus);
        params_ = init_parameters(cfg_, corpus.item_count, bins_.rows, corpus, variant, rng);
    }

    // Rebinds existing parameters (checkpoint restore).
    GrapeModel(ModelConfig cfg, BinTable bins, ParameterSet params, const Corpus& corpus)
        : cfg_(std::move(cfg)), bins_(std::move(bins)), params_(std::move(params)) {
        build_item_bins(corpus);
    }

    const ModelConfig& config() const { return cfg_; }
    const BinTable& bins() const { return bins_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }
    const std::vector<std::vector<int>>& item_bins() const { return item_bins_; }

    // Forward pass over a full history; keeps the most recent w_max items,
    // left-pads with item id 0.
    ForwardOutput forward(Tape& tape, std::span<const int> items) const {
        if (items.empty()) throw ShapeError("forward: empty item sequence");
        const int w = cfg_.max_seq_len;
        const int real = std::min<int>(static_cast<int>(items.size()), w);
        const int pad = w - real;
        std::vector<int> padded(static_cast<std::size_t>(w), 0);
        for (int k = 0; k < real; ++k) {
            padded[static_cast<std::size_t>(pad + k)] = items[items.size() - static_cast<std::size_t>(real) + static_cast<std::size_t>(k)];
        }

        const BoolMask mask = BoolMask::causal_with_padding(w, pad);
        std::vector<Value> E(static_cast<std::size_t>(cfg_.channels()));
        E[0] = tape.embedding_lookup(tape.track(params_.item_table), padded);
        for (int j = 0; j < cfg_.indicator_count; ++j) {
            std::vector<int> bin_ids(static_cast<std::size_t>(w), 0);
            for (int k = 0; k < w; ++k) {
                const int item = padded[static_cast<std::size_t>(k)];
                if (item != 0) bin_ids[static_cast<std::size_t>(k)] = item_bins_[static_cast<std::size_t>(item)][static_cast<std::size_t>(j)];
            }
            E[static_cast<std::size_t>(j) + 1] = tape.embedding_lookup(tape.track(params_.indicator_table), bin_ids);
        }

        for (int l = 0; l < cfg_.layers; ++l) {
            E = sia_layer(tape, params_.layers[static_cast<std::size_t>(l)], E, mask);
        }

        ForwardOutput out;
        out.pad_len = pad;
        out.channels = E;
        out.final_vec.reserve(E.size());
        for (const Value& e : E) out.final_vec.push_back(tape.select_row(e, w - 1));
        return out;
    }

    // One SIA module: project Q/K/V per channel and head, build all
    // self/cross attention matrices, fuse them with softmax(r) weights and a
    // sigmoid gate, causally mask + row-softmax, apply V, then concat heads
    // through W_x and the channel FFN.
    std::vector<Value> sia_layer(Tape& tape, const LayerParams& lp, const std::vector<Value>& E, const BoolMask& mask) const {
        const int channels = cfg_.channels();
        const int n = cfg_.indicator_count;
        const double att_scale = 1.0 / std::sqrt(static_cast<double>(cfg_.head_dim()));

        // Fusion weights are head-independent: compute once.
        const Value w_item = tape.masked_softmax(tape.track(lp.r_item), BoolMask::all(1, channels * channels));
        Value w_green;
        if (n > 0) w_green = tape.masked_softmax(tape.track(lp.r_green), BoolMask::all(1, n * n));

        std::vector<std::vector<Value>> head_out(static_cast<std::size_t>(channels));  // [channel][head]
        for (int m = 0; m < cfg_.heads; ++m) {
            std::vector<Value> Q(static_cast<std::size_t>(channels)), K(static_cast<std::size_t>(channels)),
                V(static_cast<std::size_t>(channels));
            for (int c = 0; c < channels; ++c) {
                Q[static_cast<std::size_t>(c)] = tape.matmul(E[static_cast<std::size_t>(c)], tape.track(lp.wq[static_cast<std::size_t>(c)][static_cast<std::size_t>(m)]));
                K[static_cast<std::size_t>(c)] = tape.matmul(E[static_cast<std::size_t>(c)], tape.track(lp.wk[static_cast<std::size_t>(c)][static_cast<std::size_t>(m)]));
                V[static_cast<std::size_t>(c)] = tape.matmul(E[static_cast<std::size_t>(c)], tape.track(lp.wv[static_cast<std::size_t>(c)][static_cast<std::size_t>(m)]));
            }
            // A[x][y] = Q_x K_y^T; x == y is self-attention.
            std::vector<std::vector<Value>> A(static_cast<std::size_t>(channels), std::vector<Value>(static_cast<std::size_t>(channels)));
            for (int x = 0; x < channels; ++x) {
                for (int y = 0; y < channels; ++y) {
                    Value q = Q[static_cast<std::size_t>(x)], k = K[static_cast<std::size_t>(y)];
                    if (cfg_.per_pair_projections && x != y) {
                        q = tape.matmul(E[static_cast<std::size_t>(x)],
                                        tape.track(lp.wq_pair[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)][static_cast<std::size_t>(m)]));
                        k = tape.matmul(E[static_cast<std::size_t>(y)],
                                        tape.track(lp.wk_pair[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)][static_cast<std::size_t>(m)]));
                    }
                    Value a = tape.matmul(q, tape.transpose(k));
                    if (cfg_.attention_scaling) a = tape.scale(a, att_scale);
                    A[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)] = a;
                }
            }

            // Item fusion over all (n+1)^2 matrices, k = x*(n+1)+y.
            Value fused_item;
            for (int x = 0; x < channels; ++x) {
                for (int y = 0; y < channels; ++y) {
                    const int k = x * channels + y;
                    const Value term = tape.scale_by_element(A[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)], w_item, k);
                    fused_item = (x == 0 && y == 0) ? term : tape.add(fused_item, term);
                }
            }
            const Value gated_item = apply_gate(tape, fused_item, lp.gate_item_gain, lp.gate_item_bias);
            const Value S_item = tape.masked_softmax(gated_item, mask);
            head_out[0].push_back(tape.matmul(S_item, V[0]));

            // Green fusion over the n^2 indicator matrices, k = (x-1)*n+(y-1);
            // the same fused matrix feeds every indicator channel's V.
            if (n > 0) {
                Value fused_green;
                for (int x = 1; x < channels; ++x) {
                    for (int y = 1; y < channels; ++y) {
                        const int k = (x - 1) * n + (y - 1);
                        const Value term = tape.scale_by_element(A[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)], w_green, k);
                        fused_green = (x == 1 && y == 1) ? term : tape.add(fused_green, term);
                    }
                }
                const Value gated_green = apply_gate(tape, fused_green, lp.gate_green_gain, lp.gate_green_bias);
                const Value S_green = tape.masked_softmax(gated_green, mask);
                for (int j = 0; j < n; ++j) {
                    head_out[static_cast<std::size_t>(j) + 1].push_back(tape.matmul(S_green, V[static_cast<std::size_t>(j) + 1]));
                }
            }
        }

        std::vector<Value> out(static_cast<std::size_t>(channels));
        for (int c = 0; c < channels; ++c) {
            const Value cat = tape.concat_cols(head_out[static_cast<std::size_t>(c)]);
            const Value mixed = tape.matmul(cat, tape.track(lp.w_out[static_cast<std::size_t>(c)]));
            Value h = tape.add_row_broadcast(tape.matmul(mixed, tape.track(lp.ffn_w1[static_cast<std::size_t>(c)])),
                                             tape.track(lp.ffn_b1[static_cast<std::size_t>(c)]));
            h = tape.relu(h);
            Value f = tape.add_row_broadcast(tape.matmul(h, tape.track(lp.ffn_w2[static_cast<std::size_t>(c)])),
                                             tape.track(lp.ffn_b2[static_cast<std::size_t>(c)]));
            out[static_cast<std::size_t>(c)] = cfg_.use_residual ? tape.add(E[static_cast<std::size_t>(c)], f) : f;
        }
        return out;
    }

    // Tracked scoring of one candidate for one user: per-channel affinities
    // against the candidate's base embeddings, weighted by the user's P row.
    Value score(Tape& tape, const ForwardOutput& fo, int user, int item) const {
        check_item(item);
        std::vector<Value> affinities;
        affinities.reserve(static_cast<std::size_t>(cfg_.channels()));
        const int ids[1] = {item};
        affinities.push_back(tape.dot(fo.final_vec[0], tape.embedding_lookup(tape.track(params_.item_table), ids)));
        for (int j = 0; j < cfg_.indicator_count; ++j) {
            const int bin[1] = {item_bins_[static_cast<std::size_t>(item)][static_cast<std::size_t>(j)]};
            affinities.push_back(
                tape.dot(fo.final_vec[static_cast<std::size_t>(j) + 1], tape.embedding_lookup(tape.track(params_.indicator_table), bin)));
        }
        const Value aff = tape.concat_cols(affinities);
        const Value prow = tape.select_row(tape.track(params_.user_attention), p_row(user));
        return tape.dot(aff, prow);
    }

    // Plain-array scoring over many candidates against a finished forward
    // pass; used by evaluation where no gradients are needed.
    std::vector<double> score_all(const ForwardOutput& fo, int user, std::span<const int> candidates) const {
        const int d = cfg_.embedding_dim;
        const int n = cfg_.indicator_count;
        std::vector<const double*> e(static_cast<std::size_t>(n) + 1);
        for (int c = 0; c <= n; ++c) e[static_cast<std::size_t>(c)] = fo.final_vec[static_cast<std::size_t>(c)].tensor().data();
        const Tensor& P = params_.user_attention;
        const int pr = p_row(user);
        std::vector<double> out;
        out.reserve(candidates.size());
        for (const int item : candidates) {
            check_item(item);
            const double* emb = params_.item_table.data() + static_cast<std::size_t>(item) * d;
            double aff = 0.0;
            for (int k = 0; k < d; ++k) aff += e[0][k] * emb[k];
            double y = P.at(pr, 0) * aff;
            for (int j = 0; j < n; ++j) {
                const int bin = item_bins_[static_cast<std::size_t>(item)][static_cast<std::size_t>(j)];
                const double* gemb = params_.indicator_table.data() + static_cast<std::size_t>(bin) * d;
                double gaff = 0.0;
                for (int k = 0; k < d; ++k) gaff += e[static_cast<std::size_t>(j) + 1][k] * gemb[k];
                y += P.at(pr, j + 1) * gaff;
            }
            out.push_back(y);
        }
        return out;
    }

    int item_count() const { return static_cast<int>(item_bins_.size()) - 1; }

private:
    Value apply_gate(Tape& tape, Value fused, const Tensor& gain, const Tensor& bias) const {
        const Value pre = tape.add_element_broadcast(tape.scale_by_element(fused, tape.track(gain), 0), tape.track(bias), 0);
        return tape.mul(tape.sigmoid(pre), fused);
    }

    int p_row(int user) const {
        if (params_.user_attention.rows() == 1) return 0;  // shared-row variants
        if (user < 0 || user >= params_.user_attention.rows()) {
            throw IndexError("user " + std::to_string(user) + " out of range for P");
        }
        return user;
    }

    void check_item(int item) const {
        if (item <= 0 || item >= static_cast<int>(item_bins_.size())) {
            throw IndexError("candidate item " + std::to_string(item) + " out of range");
        }
    }

    void build_item_bins(const Corpus& corpus) {
        item_bins_.assign(corpus.item_raw.size(), std::vector<int>(static_cast<std::size_t>(corpus.n()), 0));
        for (std::size_t item = 1; item < corpus.item_raw.size(); ++item) {
            for (int j = 0; j < corpus.n(); ++j) {
                item_bins_[item][static_cast<std::size_t>(j)] = bins_.bin(j, corpus.item_raw[item][static_cast<std::size_t>(j)]);
            }
        }
    }

    ModelConfig cfg_;
    BinTable bins_;
    ParameterSet params_;
    std::vector<std::vector<int>> item_bins_;  // [item][indicator]
};

}  // namespace grape
