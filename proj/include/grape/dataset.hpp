#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "grape/errors.hpp"
#include "grape/rng.hpp"

namespace grape {

enum class Direction { HigherGreener, LowerGreener };

inline std::string to_string(Direction d) {
    return d == Direction::HigherGreener ? "higher_greener" : "lower_greener";
}

inline Direction direction_from_string(const std::string& s) {
    if (s == "higher_greener" || s == "higher" || s == "HigherGreener") return Direction::HigherGreener;
    if (s == "lower_greener" || s == "lower" || s == "LowerGreener") return Direction::LowerGreener;
    throw ConfigError("unknown indicator direction '" + s + "'");
}

struct IndicatorSpec {
    std::string name;
    Direction direction = Direction::HigherGreener;
    // Filled from the training split by normalize_indicators.
    double observed_min = 0.0;
    double observed_max = 0.0;
};

struct Interaction {
    int user = 0;
    int item = 0;  // internal id, 1-based; 0 is the padding id
    std::int64_t timestamp = 0;
};

// Filtered interaction data with dense internal ids. Item id 0 is reserved
// for sequence padding; users are 0-based.
struct InteractionLog {
    std::vector<std::string> user_keys;           // internal user id -> external key
    std::vector<std::string> item_keys;           // internal item id -> external key; [0] unused
    std::vector<Interaction> interactions;        // input-file order
    std::vector<std::vector<double>> item_raw;    // [item][indicator], [0] zeros
    std::vector<IndicatorSpec> specs;

    int user_count() const { return static_cast<int>(user_keys.size()); }
    int item_count() const { return static_cast<int>(item_keys.size()) - 1; }
    int indicator_count() const { return static_cast<int>(specs.size()); }
};

struct UserSequence {
    int user = -1;
    std::vector<int> items;                        // chronological, internal ids
    std::vector<std::vector<double>> indicators;   // [indicator][position], raw values
    int train_len = 0;                             // items[0 .. train_len) is the training prefix

    int length() const { return static_cast<int>(items.size()); }
    int valid_target() const { return items[static_cast<std::size_t>(train_len)]; }
    int test_target() const { return items[static_cast<std::size_t>(train_len) + 1]; }
};

// Sequences plus per-item indicator tables; the unit the model, losses and
// evaluation all consume. Immutable once built.
struct Corpus {
    std::vector<IndicatorSpec> specs;
    std::vector<UserSequence> users;
    std::vector<std::string> user_keys;             // re-indexed after short-user exclusion
    std::vector<std::string> item_keys;
    std::vector<std::vector<double>> item_raw;      // [item][indicator]
    std::vector<std::vector<double>> item_norm;     // [item][indicator], [0,1], 1 = greenest
    std::vector<std::vector<int>> prefix_items;     // per user: sorted distinct training-prefix items
    std::vector<std::vector<int>> seen_items;       // per user: sorted distinct full-sequence items
    int item_count = 0;
    int skipped_short_users = 0;

    int n() const { return static_cast<int>(specs.size()); }
    int user_count() const { return static_cast<int>(users.size()); }

    bool user_seen(int user, int item) const {
        const auto& s = seen_items[static_cast<std::size_t>(user)];
        return std::binary_search(s.begin(), s.end(), item);
    }
};

struct TrainingPair {
    enum class Kind { Normal, GreenPositive, GreenNegative };
    int user = -1;
    Kind kind = Kind::Normal;
    int first = 0;   // Normal: the interacted item; Green: i1
    int second = 0;  // Normal: the non-interacted item; Green: i2
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

struct RawTriple {
    std::string user, item;
    std::int64_t timestamp;
};

}  // namespace detail

// Reads the interactions and indicators CSVs, applies iterative min-count
// filtering to users and items until stable, and assigns dense internal ids
// by first appearance in the surviving stream. Known indicator headers
// (eis/nis/hmi) carry their directions; generic g1..gn columns need the
// sidecar spec. A non-empty `spec_sidecar` overrides either.
// The sidecar format is one `name,direction` line per indicator.
inline InteractionLog load_corpus(const std::string& interactions_path, const std::string& indicators_path,
                                  int min_interactions, const std::string& spec_sidecar = "") {
    std::ifstream in(interactions_path);
    if (!in) throw IngestError("cannot open interactions file: " + interactions_path);

    std::string line;
    int line_no = 0;
    if (!std::getline(in, line)) throw IngestError("interactions file is empty: " + interactions_path);
    ++line_no;
    {
        auto header = detail::split_csv_line(detail::trim(line));
        if (header.size() != 3 || detail::lower(header[0]) != "user_id" || detail::lower(header[1]) != "item_id" ||
            detail::lower(header[2]) != "timestamp") {
            throw IngestError("interactions header must be 'user_id,item_id,timestamp' (line 1)");
        }
    }
    std::vector<detail::RawTriple> triples;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        auto fields = detail::split_csv_line(t);
        if (fields.size() != 3) {
            throw IngestError("malformed interactions line " + std::to_string(line_no) + ": expected 3 fields");
        }
        detail::RawTriple r;
        r.user = detail::trim(fields[0]);
        r.item = detail::trim(fields[1]);
        try {
            r.timestamp = std::stoll(detail::trim(fields[2]));
        } catch (const std::exception&) {
            throw IngestError("malformed timestamp on interactions line " + std::to_string(line_no));
        }
        if (r.user.empty() || r.item.empty()) {
            throw IngestError("empty id on interactions line " + std::to_string(line_no));
        }
        triples.push_back(std::move(r));
    }
    if (triples.empty()) throw IngestError("interactions file has a header but no rows: " + interactions_path);

    // Indicators file.
    std::ifstream ind(indicators_path);
    if (!ind) throw IngestError("cannot open indicators file: " + indicators_path);
    line_no = 0;
    if (!std::getline(ind, line)) throw IngestError("indicators file is empty: " + indicators_path);
    ++line_no;
    auto header = detail::split_csv_line(detail::trim(line));
    if (header.size() < 2 || detail::lower(header[0]) != "item_id") {
        throw IngestError("indicators header must start with 'item_id' (line 1)");
    }
    std::vector<IndicatorSpec> specs;
    for (std::size_t j = 1; j < header.size(); ++j) {
        IndicatorSpec s;
        s.name = detail::trim(header[j]);
        const std::string low = detail::lower(s.name);
        if (low == "eis") {
            s.name = "EIS";
            s.direction = Direction::LowerGreener;
        } else if (low == "nis") {
            s.name = "NIS";
            s.direction = Direction::HigherGreener;
        } else if (low == "hmi") {
            s.name = "HMI";
            s.direction = Direction::HigherGreener;
        } else if (spec_sidecar.empty()) {
            throw IngestError("indicator column '" + s.name + "' has no known direction; provide a sidecar spec file");
        }
        specs.push_back(std::move(s));
    }
    if (!spec_sidecar.empty()) {
        std::ifstream sc(spec_sidecar);
        if (!sc) throw IngestError("cannot open indicator spec sidecar: " + spec_sidecar);
        std::map<std::string, Direction> dirs;
        std::string sline;
        while (std::getline(sc, sline)) {
            const std::string t = detail::trim(sline);
            if (t.empty() || t[0] == '#') continue;
            auto fields = detail::split_csv_line(t);
            if (fields.size() != 2) throw IngestError("sidecar lines must be 'name,direction'");
            dirs[detail::trim(fields[0])] = direction_from_string(detail::trim(fields[1]));
        }
        for (auto& s : specs) {
            const auto it = dirs.find(s.name);
            if (it == dirs.end()) throw IngestError("sidecar spec missing indicator '" + s.name + "'");
            s.direction = it->second;
        }
    }
    const int n = static_cast<int>(specs.size());

    std::unordered_map<std::string, std::vector<double>> indicator_rows;
    while (std::getline(ind, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        auto fields = detail::split_csv_line(t);
        if (static_cast<int>(fields.size()) != n + 1) {
            throw IngestError("malformed indicators line " + std::to_string(line_no) + ": expected " + std::to_string(n + 1) +
                              " fields");
        }
        std::vector<double> vals(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) {
            try {
                vals[static_cast<std::size_t>(j)] = std::stod(detail::trim(fields[static_cast<std::size_t>(j) + 1]));
            } catch (const std::exception&) {
                throw IngestError("malformed indicator value on line " + std::to_string(line_no));
            }
            const double v = vals[static_cast<std::size_t>(j)];
            if (!std::isfinite(v) || v < 0.0) {
                throw IngestError("indicator value must be finite and >= 0 (line " + std::to_string(line_no) + ")");
            }
        }
        indicator_rows[detail::trim(fields[0])] = std::move(vals);
    }

    // Iterative min-count filtering until stable.
    std::vector<char> keep(triples.size(), 1);
    bool changed = true;
    while (changed) {
        changed = false;
        std::unordered_map<std::string, int> ucount, icount;
        for (std::size_t i = 0; i < triples.size(); ++i) {
            if (!keep[i]) continue;
            ++ucount[triples[i].user];
            ++icount[triples[i].item];
        }
        for (std::size_t i = 0; i < triples.size(); ++i) {
            if (!keep[i]) continue;
            if (ucount[triples[i].user] < min_interactions || icount[triples[i].item] < min_interactions) {
                keep[i] = 0;
                changed = true;
            }
        }
    }

    InteractionLog log;
    log.specs = specs;
    std::unordered_map<std::string, int> user_ids, item_ids;
    log.item_keys.emplace_back("");  // padding slot
    log.item_raw.emplace_back(static_cast<std::size_t>(n), 0.0);
    std::vector<std::string> missing;
    for (std::size_t i = 0; i < triples.size(); ++i) {
        if (!keep[i]) continue;
        const auto& tr = triples[i];
        auto [uit, unew] = user_ids.try_emplace(tr.user, static_cast<int>(log.user_keys.size()));
        if (unew) log.user_keys.push_back(tr.user);
        auto [iit, inew] = item_ids.try_emplace(tr.item, static_cast<int>(log.item_keys.size()));
        if (inew) {
            log.item_keys.push_back(tr.item);
            const auto row = indicator_rows.find(tr.item);
            if (row == indicator_rows.end()) {
                missing.push_back(tr.item);
                log.item_raw.emplace_back(static_cast<std::size_t>(n), 0.0);
            } else {
                log.item_raw.push_back(row->second);
            }
        }
        log.interactions.push_back(Interaction{uit->second, iit->second, tr.timestamp});
    }
    if (!missing.empty()) {
        std::sort(missing.begin(), missing.end());
        missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
        std::string msg = "indicator rows missing for interacted items:";
        const std::size_t show = std::min<std::size_t>(missing.size(), 10);
        for (std::size_t i = 0; i < show; ++i) msg += " " + missing[i];
        if (missing.size() > show) msg += " (and " + std::to_string(missing.size() - show) + " more)";
        throw IngestError(msg);
    }
    if (log.interactions.empty()) {
        throw IngestError("no interactions survive min_interactions=" + std::to_string(min_interactions));
    }
    return log;
}

// Chronological per-user sequences with the leave-one-out split: last item
// is the test target, second-to-last the validation target. Equal timestamps
// keep input-file order. Users with fewer than 3 interactions are dropped
// and counted.
inline Corpus build_sequences(const InteractionLog& log) {
    const int n = log.indicator_count();
    std::vector<std::vector<std::pair<std::int64_t, int>>> per_user(static_cast<std::size_t>(log.user_count()));
    for (const auto& x : log.interactions) {
        per_user[static_cast<std::size_t>(x.user)].emplace_back(x.timestamp, x.item);
    }

    Corpus corpus;
    corpus.specs = log.specs;
    corpus.item_keys = log.item_keys;
    corpus.item_raw = log.item_raw;
    corpus.item_count = log.item_count();
    for (int u = 0; u < log.user_count(); ++u) {
        auto& events = per_user[static_cast<std::size_t>(u)];
        if (static_cast<int>(events.size()) < 3) {
            ++corpus.skipped_short_users;
            continue;
        }
        std::stable_sort(events.begin(), events.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        UserSequence seq;
        seq.user = static_cast<int>(corpus.users.size());
        seq.items.reserve(events.size());
        seq.indicators.assign(static_cast<std::size_t>(n), {});
        for (auto& ind : seq.indicators) ind.reserve(events.size());
        for (const auto& [ts, item] : events) {
            seq.items.push_back(item);
            for (int j = 0; j < n; ++j) {
                seq.indicators[static_cast<std::size_t>(j)].push_back(
                    log.item_raw[static_cast<std::size_t>(item)][static_cast<std::size_t>(j)]);
            }
        }
        seq.train_len = seq.length() - 2;
        corpus.user_keys.push_back(log.user_keys[static_cast<std::size_t>(u)]);

        std::vector<int> prefix(seq.items.begin(), seq.items.begin() + seq.train_len);
        std::sort(prefix.begin(), prefix.end());
        prefix.erase(std::unique(prefix.begin(), prefix.end()), prefix.end());
        std::vector<int> seen(seq.items.begin(), seq.items.end());
        std::sort(seen.begin(), seen.end());
        seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
        corpus.prefix_items.push_back(std::move(prefix));
        corpus.seen_items.push_back(std::move(seen));
        corpus.users.push_back(std::move(seq));
    }
    return corpus;
}

inline double normalize_value(const IndicatorSpec& spec, double raw) {
    if (spec.observed_min >= spec.observed_max) return 0.5;  // constant indicator
    const double span = spec.observed_max - spec.observed_min;
    double x = spec.direction == Direction::HigherGreener ? (raw - spec.observed_min) / span
                                                          : (spec.observed_max - raw) / span;
    return std::clamp(x, 0.0, 1.0);
}

// Computes per-indicator min/max over training-prefix positions only and
// fills item_norm with direction-folded values in [0,1] where 1 is
// greenest. Raw values stay available for thresholds and reporting.
inline void normalize_indicators(Corpus& corpus) {
    const int n = corpus.n();
    for (int j = 0; j < n; ++j) {
        double mn = std::numeric_limits<double>::infinity();
        double mx = -std::numeric_limits<double>::infinity();
        for (const auto& seq : corpus.users) {
            for (int k = 0; k < seq.train_len; ++k) {
                const double v = seq.indicators[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
                mn = std::min(mn, v);
                mx = std::max(mx, v);
            }
        }
        corpus.specs[static_cast<std::size_t>(j)].observed_min = mn;
        corpus.specs[static_cast<std::size_t>(j)].observed_max = mx;
    }
    corpus.item_norm.assign(corpus.item_raw.size(), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    for (std::size_t item = 1; item < corpus.item_raw.size(); ++item) {
        for (int j = 0; j < n; ++j) {
            corpus.item_norm[item][static_cast<std::size_t>(j)] =
                normalize_value(corpus.specs[static_cast<std::size_t>(j)], corpus.item_raw[item][static_cast<std::size_t>(j)]);
        }
    }
}

// Uniform draw from the items the user never interacted with (full
// sequence, targets included), by rejection against the seen set.
inline int sample_unseen_item(const Corpus& corpus, int user, Rng& rng) {
    const auto& seen = corpus.seen_items[static_cast<std::size_t>(user)];
    if (static_cast<int>(seen.size()) >= corpus.item_count) {
        throw TrainError("user " + std::to_string(user) + " has interacted with the whole catalog");
    }
    while (true) {
        const int item = static_cast<int>(rng.uniform_int(1, corpus.item_count));
        if (!std::binary_search(seen.begin(), seen.end(), item)) return item;
    }
}

// One Normal pair per sampled user, plus green same-side pairs according to
// green_pairs_per_step (2 = one interacted-side + one non-interacted-side,
// 1 = interacted side only, 0 = none). Users are drawn uniformly without
// replacement within the batch. A user with fewer than two distinct prefix
// items contributes no GreenPositive pair.
inline std::vector<TrainingPair> sample_batch(const Corpus& corpus, int batch_size, Rng& rng,
                                              int green_pairs_per_step = 2) {
    if (batch_size > corpus.user_count()) {
        throw TrainError("batch_size " + std::to_string(batch_size) + " exceeds user count " +
                         std::to_string(corpus.user_count()));
    }
    if (green_pairs_per_step < 0 || green_pairs_per_step > 2) {
        throw ConfigError("green_pairs_per_step must be 0, 1 or 2");
    }
    std::vector<TrainingPair> out;
    out.reserve(static_cast<std::size_t>(batch_size) * 3);
    const auto users = rng.sample_without_replacement(corpus.user_count(), batch_size);
    for (const int u : users) {
        const auto& prefix = corpus.prefix_items[static_cast<std::size_t>(u)];
        TrainingPair normal;
        normal.user = u;
        normal.kind = TrainingPair::Kind::Normal;
        normal.first = prefix[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(prefix.size()) - 1))];
        normal.second = sample_unseen_item(corpus, u, rng);
        out.push_back(normal);
        if (green_pairs_per_step >= 1 && prefix.size() >= 2) {
            const auto idx = rng.sample_without_replacement(static_cast<int>(prefix.size()), 2);
            TrainingPair gp;
            gp.user = u;
            gp.kind = TrainingPair::Kind::GreenPositive;
            gp.first = prefix[static_cast<std::size_t>(idx[0])];
            gp.second = prefix[static_cast<std::size_t>(idx[1])];
            out.push_back(gp);
        }
        const int unseen_count = corpus.item_count - static_cast<int>(corpus.seen_items[static_cast<std::size_t>(u)].size());
        if (green_pairs_per_step >= 2 && unseen_count >= 2) {
            TrainingPair gn;
            gn.user = u;
            gn.kind = TrainingPair::Kind::GreenNegative;
            gn.first = sample_unseen_item(corpus, u, rng);
            do {
                gn.second = sample_unseen_item(corpus, u, rng);
            } while (gn.second == gn.first);
            out.push_back(gn);
        }
    }
    return out;
}

// Throws when a pair violates its side contract.
inline void validate_training_pair(const Corpus& corpus, const TrainingPair& p) {
    const auto& prefix = corpus.prefix_items[static_cast<std::size_t>(p.user)];
    const auto in_prefix = [&](int item) { return std::binary_search(prefix.begin(), prefix.end(), item); };
    switch (p.kind) {
        case TrainingPair::Kind::Normal:
            if (!in_prefix(p.first) || in_prefix(p.second)) {
                throw TrainError("Normal pair must be (interacted, non-interacted)");
            }
            break;
        case TrainingPair::Kind::GreenPositive:
            if (!in_prefix(p.first) || !in_prefix(p.second) || p.first == p.second) {
                throw TrainError("GreenPositive pair crosses the interacted boundary or repeats an item");
            }
            break;
        case TrainingPair::Kind::GreenNegative:
            if (corpus.user_seen(p.user, p.first) || corpus.user_seen(p.user, p.second) || p.first == p.second) {
                throw TrainError("GreenNegative pair crosses the interacted boundary or repeats an item");
            }
            break;
    }
}

struct ProfileEntry {
    int user = -1;
    double mean = 0.0;
    double variance = 0.0;  // population variance
};

// Per-user mean and population variance of each raw indicator sequence over
// the training prefix, sorted ascending by mean within each indicator.
inline std::vector<std::vector<ProfileEntry>> user_green_profile(const Corpus& corpus) {
    std::vector<std::vector<ProfileEntry>> out(static_cast<std::size_t>(corpus.n()));
    for (int j = 0; j < corpus.n(); ++j) {
        auto& rows = out[static_cast<std::size_t>(j)];
        rows.reserve(corpus.users.size());
        for (const auto& seq : corpus.users) {
            const auto& vals = seq.indicators[static_cast<std::size_t>(j)];
            double mean = 0.0;
            for (int k = 0; k < seq.train_len; ++k) mean += vals[static_cast<std::size_t>(k)];
            mean /= static_cast<double>(seq.train_len);
            double var = 0.0;
            for (int k = 0; k < seq.train_len; ++k) {
                const double d = vals[static_cast<std::size_t>(k)] - mean;
                var += d * d;
            }
            var /= static_cast<double>(seq.train_len);
            rows.push_back(ProfileEntry{seq.user, mean, var});
        }
        std::stable_sort(rows.begin(), rows.end(), [](const ProfileEntry& a, const ProfileEntry& b) { return a.mean < b.mean; });
    }
    return out;
}

}  // namespace grape
