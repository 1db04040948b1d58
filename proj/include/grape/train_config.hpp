#pragma once

#include <cstdint>
#include <vector>

#include "grape/errors.hpp"

namespace grape {

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 128;
    int max_epochs = 50;
    int patience = 10;           // early stop on validation NDCG@10
    double l2 = 0.0;
    std::uint64_t seed = 1;
    std::vector<int> eval_cutoffs = {5, 10, 20};
    int eval_threads = 0;        // 0 = hardware concurrency

    void validate() const {
        if (learning_rate < 0.0) throw ConfigError("learning_rate must be non-negative");
        if (batch_size <= 0) throw ConfigError("batch_size must be positive");
        if (max_epochs <= 0) throw ConfigError("max_epochs must be positive");
        if (patience < 0) throw ConfigError("patience must be non-negative");
        if (l2 < 0.0) throw ConfigError("l2 must be non-negative");
        if (eval_cutoffs.empty()) throw ConfigError("eval_cutoffs must not be empty");
    }
};

}  // namespace grape
