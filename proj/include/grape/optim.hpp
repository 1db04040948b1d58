#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "grape/errors.hpp"
#include "grape/tensor.hpp"

namespace grape {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double l2 = 0.0;  // folded into the gradient before the moment update
};

// Adam over a fixed set of parameter tensors. Moment arrays are kept per
// parameter; gradients are cleared after each step.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg) : cfg_(cfg) {
        slots_.reserve(params.size());
        for (auto& p : params) {
            if (!p.requires_grad()) {
                throw TrainError("optimizer given a parameter without requires_grad");
            }
            Slot s;
            s.param = p;
            s.m.assign(p.size(), 0.0);
            s.v.assign(p.size(), 0.0);
            slots_.push_back(std::move(s));
        }
    }

    std::int64_t steps() const { return step_; }
    const AdamConfig& config() const { return cfg_; }

    void step() {
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (auto& s : slots_) {
            if (!s.param.has_fresh_grad()) {
                throw TrainError("optimizer step without a fresh gradient on a trainable parameter " + s.param.shape_str());
            }
            auto& vals = s.param.values();
            auto& grads = s.param.grad();
            for (std::size_t i = 0; i < vals.size(); ++i) {
                const double g = grads[i] + cfg_.l2 * vals[i];
                s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
                s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = s.m[i] / bc1;
                const double vhat = s.v[i] / bc2;
                vals[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
            }
            s.param.zero_grad();
        }
    }

private:
    struct Slot {
        Tensor param;
        std::vector<double> m, v;
    };

    AdamConfig cfg_;
    std::vector<Slot> slots_;
    std::int64_t step_ = 0;
};

}  // namespace grape
