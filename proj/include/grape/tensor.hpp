#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "grape/errors.hpp"

namespace grape {

// Dense row-major matrix of 64-bit floats. Copies are shallow (shared
// storage), which is what parameter registration on a tape relies on;
// use clone() for an independent copy. All tensors are 2-D: scalars are
// [1x1] and vectors are [1xk] rows.
class Tensor {
public:
    Tensor() = default;

    Tensor(int rows, int cols, bool requires_grad = false)
        : rows_(rows), cols_(cols), requires_grad_(requires_grad) {
        if (rows <= 0 || cols <= 0) {
            throw ShapeError("tensor dimensions must be positive, got " + shape_str(rows, cols));
        }
        values_ = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows) * cols, 0.0);
        fresh_ = std::make_shared<bool>(false);
        if (requires_grad) {
            grad_ = std::make_shared<std::vector<double>>(values_->size(), 0.0);
        }
    }

    static Tensor zeros(int rows, int cols) { return Tensor(rows, cols); }

    static Tensor scalar(double v) {
        Tensor t(1, 1);
        (*t.values_)[0] = v;
        return t;
    }

    static Tensor row(std::vector<double> v) {
        Tensor t(1, static_cast<int>(v.size()));
        *t.values_ = std::move(v);
        return t;
    }

    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const int r = static_cast<int>(rows.size());
        const int c = static_cast<int>(rows.begin()->size());
        Tensor t(r, c);
        int i = 0;
        for (const auto& row : rows) {
            if (static_cast<int>(row.size()) != c) {
                throw ShapeError("ragged initializer for tensor rows");
            }
            for (const double v : row) (*t.values_)[static_cast<std::size_t>(i++)] = v;
        }
        return t;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return values_ ? values_->size() : 0; }
    std::vector<int> shape() const { return {rows_, cols_}; }

    double& at(int r, int c) { return (*values_)[idx(r, c)]; }
    double at(int r, int c) const { return (*values_)[idx(r, c)]; }

    double* data() { return values_->data(); }
    const double* data() const { return values_->data(); }
    std::vector<double>& values() { return *values_; }
    const std::vector<double>& values() const { return *values_; }

    bool defined() const { return static_cast<bool>(values_); }
    bool requires_grad() const { return requires_grad_; }

    void set_requires_grad(bool rg) {
        requires_grad_ = rg;
        if (rg && !grad_) {
            grad_ = std::make_shared<std::vector<double>>(values_->size(), 0.0);
        }
        if (!rg) grad_.reset();
    }

    std::vector<double>& grad() {
        require_grad_slot();
        return *grad_;
    }
    const std::vector<double>& grad() const {
        require_grad_slot();
        return *grad_;
    }

    void zero_grad() {
        if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
        if (fresh_) *fresh_ = false;
    }

    // Set by Tape::backward when gradients are written; cleared by the
    // optimizer. Lets the training step detect parameters that never
    // appeared on the tape. Shared across handle copies, like storage.
    bool has_fresh_grad() const { return fresh_ && *fresh_; }
    void mark_fresh_grad() const { *fresh_ = true; }
    void clear_fresh_grad() { *fresh_ = false; }

    Tensor clone() const {
        Tensor t(rows_, cols_, requires_grad_);
        *t.values_ = *values_;
        if (grad_ && t.grad_) *t.grad_ = *grad_;
        return t;
    }

    bool all_finite() const {
        for (const double v : *values_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    void check_finite(const std::string& what) const {
        if (!all_finite()) {
            throw NumericError("non-finite values in " + what + " " + shape_str(rows_, cols_));
        }
    }

    static std::string shape_str(int r, int c) {
        std::ostringstream os;
        os << "[" << r << "x" << c << "]";
        return os.str();
    }
    std::string shape_str() const { return shape_str(rows_, cols_); }

    // Registration cache used by Tape::track; a handle registered on the
    // active tape reuses its node instead of creating a second leaf.
    mutable std::uint64_t tape_serial = 0;
    mutable int node_id = -1;

private:
    std::size_t idx(int r, int c) const {
        return static_cast<std::size_t>(r) * static_cast<std::size_t>(cols_) + static_cast<std::size_t>(c);
    }

    void require_grad_slot() const {
        if (!grad_) throw TapeError("tensor has no gradient slot (requires_grad is false)");
    }

    int rows_ = 0;
    int cols_ = 0;
    std::shared_ptr<std::vector<double>> values_;
    std::shared_ptr<std::vector<double>> grad_;
    std::shared_ptr<bool> fresh_;
    bool requires_grad_ = false;
};

}  // namespace grape
