#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "grape/tensor.hpp"

namespace grape {

struct GradCheckResult {
    struct Block {
        std::string name;
        double max_rel_err = 0.0;
        bool pass = true;
    };
    std::vector<Block> blocks;
    double tolerance = 0.0;

    bool pass() const {
        for (const auto& b : blocks) {
            if (!b.pass) return false;
        }
        return true;
    }

    double worst() const {
        double w = 0.0;
        for (const auto& b : blocks) w = std::max(w, b.max_rel_err);
        return w;
    }

    std::string summary() const {
        std::ostringstream os;
        for (const auto& b : blocks) {
            os << (b.pass ? "  ok  " : " FAIL ") << b.name << "  max_rel_err=" << b.max_rel_err << "\n";
        }
        return os.str();
    }
};

// Central finite differences against already-populated analytic gradients.
// `loss_fn` must re-evaluate the loss from the tensors' current values with
// no side effects. Intended for small parameter counts.
template <typename LossFn>
GradCheckResult grad_check(const std::vector<std::pair<std::string, Tensor>>& params, LossFn&& loss_fn, double tolerance,
                           double h = 1e-5) {
    GradCheckResult result;
    result.tolerance = tolerance;
    for (const auto& [name, tensor] : params) {
        GradCheckResult::Block block;
        block.name = name;
        Tensor t = tensor;  // shared handle
        auto& vals = t.values();
        const auto& analytic = t.grad();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + h;
            const double up = loss_fn();
            vals[i] = saved - h;
            const double down = loss_fn();
            vals[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double denom = std::max({std::fabs(fd), std::fabs(analytic[i]), 1e-3});
            block.max_rel_err = std::max(block.max_rel_err, std::fabs(fd - analytic[i]) / denom);
        }
        block.pass = block.max_rel_err < tolerance;
        result.blocks.push_back(std::move(block));
    }
    return result;
}

}  // namespace grape
