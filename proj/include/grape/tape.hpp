#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "grape/errors.hpp"
#include "grape/tensor.hpp"

namespace grape {

// Boolean mask for masked_softmax. allowed(r, c) == true means the entry
// participates in the row softmax.
struct BoolMask {
    int rows = 0, cols = 0;
    std::vector<std::uint8_t> v;

    BoolMask() = default;
    BoolMask(int r, int c, bool value) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, value ? 1 : 0) {}

    bool at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c] != 0; }
    void set(int r, int c, bool value) { v[static_cast<std::size_t>(r) * cols + c] = value ? 1 : 0; }

    static BoolMask all(int r, int c) { return BoolMask(r, c, true); }

    // Lower-triangular causal mask over a length-w sequence.
    static BoolMask causal(int w) {
        BoolMask m(w, w, false);
        for (int t = 0; t < w; ++t)
            for (int s = 0; s <= t; ++s) m.set(t, s, true);
        return m;
    }

    // Causal mask with the first pad_len positions treated as padding: real
    // queries attend only to real keys at or before them; a padded query
    // keeps its own diagonal entry so no row is fully masked.
    static BoolMask causal_with_padding(int w, int pad_len) {
        BoolMask m(w, w, false);
        for (int t = 0; t < w; ++t) {
            for (int s = 0; s <= t; ++s) {
                if (s >= pad_len || s == t) m.set(t, s, true);
            }
        }
        return m;
    }
};

class Tape;

// Handle to a tensor tracked on a tape.
struct Value {
    Tape* tape = nullptr;
    int node = -1;

    bool defined() const { return tape != nullptr && node >= 0; }
    inline const Tensor& tensor() const;
    inline int rows() const;
    inline int cols() const;
    inline double item() const;  // value of a [1x1] tensor
};

// Recorded computation graph with reverse-mode differentiation. Records are
// appended in forward order; backward replays them exactly once in reverse.
class Tape {
public:
    Tape() : serial_(next_serial()) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers an external tensor (parameter or input) as a leaf. The same
    // handle tracked twice on one tape reuses its node.
    Value track(const Tensor& t) {
        if (!t.defined()) throw TapeError("cannot track an undefined tensor");
        if (t.tape_serial == serial_ && t.node_id >= 0) {
            return Value{this, t.node_id};
        }
        const int id = add_node(t, t.requires_grad());
        nodes_[static_cast<std::size_t>(id)].leaf = true;
        t.tape_serial = serial_;
        t.node_id = id;
        return Value{this, id};
    }

    // Wraps a freshly built tensor as a non-differentiable node.
    Value constant(Tensor t) {
        t.set_requires_grad(false);
        return Value{this, add_node(std::move(t), false)};
    }

    const Tensor& value(int node) const { return nodes_[static_cast<std::size_t>(node)].value; }
    std::size_t num_records() const { return records_.size(); }

    // ---- ops ------------------------------------------------------------

    Value add(Value a, Value b) {
        check_same_shape("add", a, b);
        Tensor out(a.rows(), a.cols());
        const auto& av = val(a).values();
        const auto& bv = val(b).values();
        for (std::size_t i = 0; i < av.size(); ++i) out.values()[i] = av[i] + bv[i];
        return unary_binary_record(std::move(out), {a.node, b.node}, [this](Ctx& c) {
            accumulate(c.in[0], grad(c.out));
            accumulate(c.in[1], grad(c.out));
        });
    }

    Value sub(Value a, Value b) {
        check_same_shape("sub", a, b);
        Tensor out(a.rows(), a.cols());
        const auto& av = val(a).values();
        const auto& bv = val(b).values();
        for (std::size_t i = 0; i < av.size(); ++i) out.values()[i] = av[i] - bv[i];
        return unary_binary_record(std::move(out), {a.node, b.node}, [this](Ctx& c) {
            accumulate(c.in[0], grad(c.out));
            accumulate_scaled(c.in[1], grad(c.out), -1.0);
        });
    }

    Value mul(Value a, Value b) {
        check_same_shape("mul", a, b);
        Tensor out(a.rows(), a.cols());
        const auto& av = val(a).values();
        const auto& bv = val(b).values();
        for (std::size_t i = 0; i < av.size(); ++i) out.values()[i] = av[i] * bv[i];
        return unary_binary_record(std::move(out), {a.node, b.node}, [this](Ctx& c) {
            const auto& g = grad(c.out);
            const auto& x = val_of(c.in[0]).values();
            const auto& y = val_of(c.in[1]).values();
            if (needs_grad(c.in[0])) {
                auto& ga = grad_buf(c.in[0]);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
            }
            if (needs_grad(c.in[1])) {
                auto& gb = grad_buf(c.in[1]);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
            }
        });
    }

    // Multiplication by a compile-time-known constant (not a parameter).
    Value scale(Value a, double c) {
        Tensor out(a.rows(), a.cols());
        const auto& av = val(a).values();
        for (std::size_t i = 0; i < av.size(); ++i) out.values()[i] = c * av[i];
        return unary_binary_record(std::move(out), {a.node}, [this, c](Ctx& ctx) {
            accumulate_scaled(ctx.in[0], grad(ctx.out), c);
        });
    }

    Value matmul(Value a, Value b) {
        if (a.cols() != b.rows()) {
            throw ShapeError("matmul: inner dimensions disagree: " + val(a).shape_str() + " x " + val(b).shape_str());
        }
        const int p = a.rows(), q = a.cols(), r = b.cols();
        Tensor out(p, r);
        matmul_into(out.data(), val(a).data(), val(b).data(), p, q, r);
        return unary_binary_record(std::move(out), {a.node, b.node}, [this, p, q, r](Ctx& c) {
            const double* g = grad(c.out).data();
            const double* A = val_of(c.in[0]).data();
            const double* B = val_of(c.in[1]).data();
            if (needs_grad(c.in[0])) {
                // dA += g . B^T
                double* ga = grad_buf(c.in[0]).data();
                for (int i = 0; i < p; ++i)
                    for (int k = 0; k < r; ++k) {
                        const double gik = g[i * r + k];
                        if (gik == 0.0) continue;
                        for (int j = 0; j < q; ++j) ga[i * q + j] += gik * B[j * r + k];
                    }
            }
            if (needs_grad(c.in[1])) {
                // dB += A^T . g
                double* gb = grad_buf(c.in[1]).data();
                for (int i = 0; i < p; ++i)
                    for (int j = 0; j < q; ++j) {
                        const double aij = A[i * q + j];
                        if (aij == 0.0) continue;
                        for (int k = 0; k < r; ++k) gb[j * r + k] += aij * g[i * r + k];
                    }
            }
        });
    }

    Value transpose(Value a) {
        const int p = a.rows(), q = a.cols();
        Tensor out(q, p);
        const auto& av = val(a).values();
        for (int i = 0; i < p; ++i)
            for (int j = 0; j < q; ++j) out.at(j, i) = av[static_cast<std::size_t>(i) * q + j];
        return unary_binary_record(std::move(out), {a.node}, [this, p, q](Ctx& c) {
            if (!needs_grad(c.in[0])) return;
            const auto& g = grad(c.out);  // [q x p]
            auto& ga = grad_buf(c.in[0]);
            for (int j = 0; j < q; ++j)
                for (int i = 0; i < p; ++i) ga[static_cast<std::size_t>(i) * q + j] += g[static_cast<std::size_t>(j) * p + i];
        });
    }

    Value sigmoid(Value a) {
        Tensor out(a.rows(), a.cols());
        const auto& av = val(a).values();
        for (std::size_t i = 0; i < av.size(); ++i) out.values()[i] = sigmoid_scalar(av[i]);
        return unary_binary_record(std::move(out), {a.node}, [this](Ctx& c) {
            if (!needs_grad(c.in[0])) return;
            const auto& g = grad(c.out);
            const auto& y = val_of(c.out).values();
            auto& ga = grad_buf(c.in[0]);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
        });
    }

    Value relu(Value a) {
        Tensor out(a.rows(), a.cols());
        const auto& av = val(a).values();
        for (std::size_t i = 0; i < av.size(); ++i) out.values()[i] = av[i] > 0.0 ? av[i] : 0.0;
        return unary_binary_record(std::move(out), {a.node}, [this](Ctx& c) {
            if (!needs_grad(c.in[0])) return;
            const auto& g = grad(c.out);
            const auto& x = val_of(c.in[0]).values();
            auto& ga = grad_buf(c.in[0]);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > 0.0 ? g[i] : 0.0;
        });
    }

    // log(sigmoid(x)), evaluated stably; the building block of every loss.
    Value logsigmoid(Value a) {
        Tensor out(a.rows(), a.cols());
        const auto& av = val(a).values();
        for (std::size_t i = 0; i < av.size(); ++i) {
            const double x = av[i];
            out.values()[i] = x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
        }
        return unary_binary_record(std::move(out), {a.node}, [this](Ctx& c) {
            if (!needs_grad(c.in[0])) return;
            const auto& g = grad(c.out);
            const auto& x = val_of(c.in[0]).values();
            auto& ga = grad_buf(c.in[0]);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sigmoid_scalar(-x[i]);
        });
    }

    // Row-wise softmax over the allowed entries; disallowed entries are
    // exactly zero and never enter the max/sum. Stabilized by row-max
    // subtraction.
    Value masked_softmax(Value logits, const BoolMask& mask) {
        const int p = logits.rows(), q = logits.cols();
        if (mask.rows != p || mask.cols != q) {
            throw ShapeError("masked_softmax: mask shape [" + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                             "] does not match logits " + val(logits).shape_str());
        }
        Tensor out(p, q);
        const auto& z = val(logits).values();
        for (int r = 0; r < p; ++r) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < q; ++c) {
                if (mask.at(r, c)) mx = std::max(mx, z[static_cast<std::size_t>(r) * q + c]);
            }
            if (!std::isfinite(mx)) {
                throw ShapeError("masked_softmax: row " + std::to_string(r) + " has no allowed entries");
            }
            double sum = 0.0;
            for (int c = 0; c < q; ++c) {
                if (mask.at(r, c)) {
                    const double e = std::exp(z[static_cast<std::size_t>(r) * q + c] - mx);
                    out.at(r, c) = e;
                    sum += e;
                }
            }
            for (int c = 0; c < q; ++c) {
                if (mask.at(r, c)) out.at(r, c) /= sum;
            }
        }
        auto mask_copy = std::make_shared<BoolMask>(mask);
        return unary_binary_record(std::move(out), {logits.node}, [this, p, q, mask_copy](Ctx& c) {
            if (!needs_grad(c.in[0])) return;
            const auto& g = grad(c.out);
            const auto& y = val_of(c.out).values();
            auto& ga = grad_buf(c.in[0]);
            for (int r = 0; r < p; ++r) {
                double dot = 0.0;
                for (int cc = 0; cc < q; ++cc) {
                    if (mask_copy->at(r, cc)) {
                        const std::size_t i = static_cast<std::size_t>(r) * q + cc;
                        dot += g[i] * y[i];
                    }
                }
                for (int cc = 0; cc < q; ++cc) {
                    if (mask_copy->at(r, cc)) {
                        const std::size_t i = static_cast<std::size_t>(r) * q + cc;
                        ga[i] += y[i] * (g[i] - dot);
                    }
                }
            }
        });
    }

    // Gathers table rows; backward scatter-adds into the table gradient.
    Value embedding_lookup(Value table, std::span<const int> ids) {
        const int v = table.rows(), d = table.cols();
        const int w = static_cast<int>(ids.size());
        if (w == 0) throw ShapeError("embedding_lookup: empty id list");
        for (const int id : ids) {
            if (id < 0 || id >= v) {
                throw IndexError("embedding id " + std::to_string(id) + " out of range [0, " + std::to_string(v) + ")");
            }
        }
        Tensor out(w, d);
        const double* tb = val(table).data();
        for (int i = 0; i < w; ++i) {
            const double* src = tb + static_cast<std::size_t>(ids[i]) * d;
            std::copy(src, src + d, out.data() + static_cast<std::size_t>(i) * d);
        }
        auto ids_copy = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
        return unary_binary_record(std::move(out), {table.node}, [this, d, ids_copy](Ctx& c) {
            if (!needs_grad(c.in[0])) return;
            const auto& g = grad(c.out);
            auto& gt = grad_buf(c.in[0]);
            for (std::size_t i = 0; i < ids_copy->size(); ++i) {
                double* dst = gt.data() + static_cast<std::size_t>((*ids_copy)[i]) * d;
                const double* src = g.data() + i * d;
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }

    Value concat_cols(std::span<const Value> parts) {
        if (parts.empty()) throw ShapeError("concat_cols: empty part list");
        const int p = parts[0].rows();
        int total = 0;
        for (const Value& part : parts) {
            if (part.rows() != p) throw ShapeError("concat_cols: row counts differ");
            total += part.cols();
        }
        Tensor out(p, total);
        std::vector<int> in_nodes;
        std::vector<int> widths;
        int off = 0;
        for (const Value& part : parts) {
            const int w = part.cols();
            const auto& pv = val(part).values();
            for (int r = 0; r < p; ++r)
                for (int cc = 0; cc < w; ++cc) out.at(r, off + cc) = pv[static_cast<std::size_t>(r) * w + cc];
            in_nodes.push_back(part.node);
            widths.push_back(w);
            off += w;
        }
        auto widths_copy = std::make_shared<std::vector<int>>(std::move(widths));
        return unary_binary_record(std::move(out), std::move(in_nodes), [this, p, total, widths_copy](Ctx& c) {
            const auto& g = grad(c.out);
            int off2 = 0;
            for (std::size_t k = 0; k < c.in.size(); ++k) {
                const int w = (*widths_copy)[k];
                if (needs_grad(c.in[k])) {
                    auto& ga = grad_buf(c.in[k]);
                    for (int r = 0; r < p; ++r)
                        for (int cc = 0; cc < w; ++cc)
                            ga[static_cast<std::size_t>(r) * w + cc] += g[static_cast<std::size_t>(r) * total + off2 + cc];
                }
                off2 += w;
            }
        });
    }

    Value select_row(Value a, int r) {
        const int p = a.rows(), q = a.cols();
        if (r < 0 || r >= p) {
            throw IndexError("select_row: row " + std::to_string(r) + " out of range [0, " + std::to_string(p) + ")");
        }
        Tensor out(1, q);
        const auto& av = val(a).values();
        std::copy(av.begin() + static_cast<std::size_t>(r) * q, av.begin() + static_cast<std::size_t>(r + 1) * q, out.data());
        return unary_binary_record(std::move(out), {a.node}, [this, r, q](Ctx& c) {
            if (!needs_grad(c.in[0])) return;
            const auto& g = grad(c.out);
            auto& ga = grad_buf(c.in[0]);
            for (int j = 0; j < q; ++j) ga[static_cast<std::size_t>(r) * q + j] += g[static_cast<std::size_t>(j)];
        });
    }

    // out[i, :] = a[i, :] + bias[0, :]
    Value add_row_broadcast(Value a, Value bias) {
        const int p = a.rows(), q = a.cols();
        if (bias.rows() != 1 || bias.cols() != q) {
            throw ShapeError("add_row_broadcast: bias " + val(bias).shape_str() + " does not broadcast over " + val(a).shape_str());
        }
        Tensor out(p, q);
        const auto& av = val(a).values();
        const auto& bv = val(bias).values();
        for (int i = 0; i < p; ++i)
            for (int j = 0; j < q; ++j) out.at(i, j) = av[static_cast<std::size_t>(i) * q + j] + bv[static_cast<std::size_t>(j)];
        return unary_binary_record(std::move(out), {a.node, bias.node}, [this, p, q](Ctx& c) {
            const auto& g = grad(c.out);
            if (needs_grad(c.in[0])) accumulate(c.in[0], g);
            if (needs_grad(c.in[1])) {
                auto& gb = grad_buf(c.in[1]);
                for (int i = 0; i < p; ++i)
                    for (int j = 0; j < q; ++j) gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * q + j];
            }
        });
    }

    // out = s[k] * a, where s is a tracked tensor (typically a weight vector).
    Value scale_by_element(Value a, Value s, int k) {
        check_element(s, k, "scale_by_element");
        const double sv = val(s).values()[static_cast<std::size_t>(k)];
        Tensor out(a.rows(), a.cols());
        const auto& av = val(a).values();
        for (std::size_t i = 0; i < av.size(); ++i) out.values()[i] = sv * av[i];
        return unary_binary_record(std::move(out), {a.node, s.node}, [this, k, sv](Ctx& c) {
            const auto& g = grad(c.out);
            if (needs_grad(c.in[0])) accumulate_scaled(c.in[0], g, sv);
            if (needs_grad(c.in[1])) {
                const auto& x = val_of(c.in[0]).values();
                double acc = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
                grad_buf(c.in[1])[static_cast<std::size_t>(k)] += acc;
            }
        });
    }

    // out = a + s[k] broadcast over every entry.
    Value add_element_broadcast(Value a, Value s, int k) {
        check_element(s, k, "add_element_broadcast");
        const double sv = val(s).values()[static_cast<std::size_t>(k)];
        Tensor out(a.rows(), a.cols());
        const auto& av = val(a).values();
        for (std::size_t i = 0; i < av.size(); ++i) out.values()[i] = av[i] + sv;
        return unary_binary_record(std::move(out), {a.node, s.node}, [this, k](Ctx& c) {
            const auto& g = grad(c.out);
            if (needs_grad(c.in[0])) accumulate(c.in[0], g);
            if (needs_grad(c.in[1])) {
                double acc = 0.0;
                for (const double gi : g) acc += gi;
                grad_buf(c.in[1])[static_cast<std::size_t>(k)] += acc;
            }
        });
    }

    Value sum(Value a) {
        Tensor out(1, 1);
        double acc = 0.0;
        for (const double v : val(a).values()) acc += v;
        out.values()[0] = acc;
        return unary_binary_record(std::move(out), {a.node}, [this](Ctx& c) {
            if (!needs_grad(c.in[0])) return;
            const double g = grad(c.out)[0];
            auto& ga = grad_buf(c.in[0]);
            for (double& v : ga) v += g;
        });
    }

    Value mean(Value a) {
        const double n = static_cast<double>(val(a).size());
        return scale(sum(a), 1.0 / n);
    }

    // sum(a .* b) as a [1x1] value.
    Value dot(Value a, Value b) { return sum(mul(a, b)); }

    Value add_many(std::span<const Value> vs) {
        if (vs.empty()) throw ShapeError("add_many: empty list");
        Value acc = vs[0];
        for (std::size_t i = 1; i < vs.size(); ++i) acc = add(acc, vs[i]);
        return acc;
    }

    // ---- backward --------------------------------------------------------

    // Populates gradients on every requires_grad leaf reachable from loss.
    void backward(Value loss) {
        if (loss.tape != this) throw TapeError("backward: loss does not belong to this tape");
        if (backward_done_) throw TapeError("backward already ran on this tape; build a fresh tape per step");
        const Tensor& lt = value(loss.node);
        if (lt.rows() != 1 || lt.cols() != 1) {
            throw TapeError("backward: loss must be a scalar, got " + lt.shape_str());
        }
        backward_done_ = true;
        grads_.assign(nodes_.size(), {});
        grad_buf(loss.node)[0] = 1.0;
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
            if (!grads_[static_cast<std::size_t>(it->ctx.out)].empty()) {
                it->fn(it->ctx);
            }
        }
        for (auto& n : nodes_) {
            if (n.leaf && n.requires_grad) {
                auto& g = grads_[static_cast<std::size_t>(n.id)];
                if (g.empty()) continue;  // not reachable from the loss
                auto& dst = n.value.grad();
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
                n.value.mark_fresh_grad();
#ifndef NDEBUG
                for (const double x : dst) {
                    if (!std::isfinite(x)) throw NumericError("non-finite gradient on a leaf after backward");
                }
#endif
            }
        }
    }

    // Gradient of any node from the last backward (testing hook).
    std::vector<double> grad_of(Value v) const {
        if (!backward_done_) throw TapeError("grad_of: backward has not run");
        const auto& g = grads_[static_cast<std::size_t>(v.node)];
        if (!g.empty()) return g;
        return std::vector<double>(value(v.node).size(), 0.0);
    }

private:
    struct Ctx {
        int out = -1;
        std::vector<int> in;
    };
    struct Node {
        int id = -1;
        Tensor value;
        bool requires_grad = false;
        bool leaf = false;
    };
    struct Record {
        Ctx ctx;
        std::function<void(Ctx&)> fn;
    };

    friend struct Value;

    static std::uint64_t next_serial() {
        static std::atomic<std::uint64_t> counter{1};
        return counter.fetch_add(1);
    }

    int add_node(Tensor t, bool requires_grad) {
#ifndef NDEBUG
        t.check_finite("tape node");
#endif
        Node n;
        n.id = static_cast<int>(nodes_.size());
        n.value = std::move(t);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return nodes_.back().id;
    }

    Value unary_binary_record(Tensor out, std::vector<int> inputs, std::function<void(Ctx&)> fn) {
        bool rg = false;
        for (const int i : inputs) rg = rg || nodes_[static_cast<std::size_t>(i)].requires_grad;
        const int id = add_node(std::move(out), rg);
        if (rg) {
            records_.push_back(Record{Ctx{id, std::move(inputs)}, std::move(fn)});
        }
        return Value{this, id};
    }

    const Tensor& val(Value v) const {
        if (v.tape != this) throw TapeError("value belongs to a different tape");
        return nodes_[static_cast<std::size_t>(v.node)].value;
    }
    const Tensor& val_of(int node) const { return nodes_[static_cast<std::size_t>(node)].value; }
    bool needs_grad(int node) const { return nodes_[static_cast<std::size_t>(node)].requires_grad; }

    std::vector<double>& grad_buf(int node) {
        auto& g = grads_[static_cast<std::size_t>(node)];
        if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(node)].value.size(), 0.0);
        return g;
    }
    const std::vector<double>& grad(int node) const { return grads_[static_cast<std::size_t>(node)]; }

    void accumulate(int node, const std::vector<double>& g) {
        if (!needs_grad(node)) return;
        auto& dst = grad_buf(node);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
    void accumulate_scaled(int node, const std::vector<double>& g, double c) {
        if (!needs_grad(node)) return;
        auto& dst = grad_buf(node);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += c * g[i];
    }

    void check_same_shape(const char* op, Value a, Value b) const {
        if (a.rows() != b.rows() || a.cols() != b.cols()) {
            throw ShapeError(std::string(op) + ": shape mismatch " + val(a).shape_str() + " vs " + val(b).shape_str());
        }
    }

    void check_element(Value s, int k, const char* op) const {
        if (k < 0 || static_cast<std::size_t>(k) >= val(s).size()) {
            throw IndexError(std::string(op) + ": element " + std::to_string(k) + " out of range");
        }
    }

    static void matmul_into(double* out, const double* a, const double* b, int p, int q, int r) {
        std::fill(out, out + static_cast<std::size_t>(p) * r, 0.0);
        for (int i = 0; i < p; ++i) {
            for (int j = 0; j < q; ++j) {
                const double aij = a[static_cast<std::size_t>(i) * q + j];
                if (aij == 0.0) continue;
                const double* brow = b + static_cast<std::size_t>(j) * r;
                double* orow = out + static_cast<std::size_t>(i) * r;
                for (int k = 0; k < r; ++k) orow[k] += aij * brow[k];
            }
        }
    }

    static double sigmoid_scalar(double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }

    std::uint64_t serial_;
    std::vector<Node> nodes_;
    std::vector<Record> records_;
    std::vector<std::vector<double>> grads_;
    bool backward_done_ = false;
};

inline const Tensor& Value::tensor() const {
    if (!defined()) throw TapeError("undefined value handle");
    return tape->value(node);
}
inline int Value::rows() const { return tensor().rows(); }
inline int Value::cols() const { return tensor().cols(); }
inline double Value::item() const {
    const Tensor& t = tensor();
    if (t.rows() != 1 || t.cols() != 1) throw TapeError("item(): tensor is not scalar, got " + t.shape_str());
    return t.values()[0];
}

}  // namespace grape
