#pragma once

// Dense-tensor engine with reverse-mode automatic differentiation.
//
// Execution is eager: every op computes its value immediately and records a
// backward closure on the owning Graph (the tape). Creation order is the
// topological order, so backward() walks the tape strictly in reverse and
// accumulates gradients by summation over all consumers. Everything is
// double precision with fixed iteration order, which makes runs bitwise
// reproducible for a fixed thread configuration.

#include <array>
#include <cstring>
#include <deque>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mrt/common.hpp"

namespace mrt {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

inline void check_shape(bool ok, const std::string& op, const Shape& a, const Shape& b) {
    if (!ok) throw ShapeError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// A named trainable parameter. Gradients accumulate into `grad` across a
// batch; the optimizer consumes and re-zeroes them.
struct Param {
    std::string name;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;

    int64_t size() const { return shape_numel(shape); }
};

// Insertion-ordered parameter set. Order determines checkpoint layout and
// optimizer iteration, so it must be deterministic.
class ParamStore {
public:
    Param& add(const std::string& name, Shape shape) {
        if (index_.count(name)) throw ConfigError("duplicate parameter: " + name);
        auto p = std::make_unique<Param>();
        p->name = name;
        p->shape = std::move(shape);
        p->value.assign(static_cast<size_t>(p->size()), 0.0);
        p->grad.assign(static_cast<size_t>(p->size()), 0.0);
        index_[name] = items_.size();
        items_.push_back(std::move(p));
        return *items_.back();
    }

    Param& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return *items_[it->second];
    }
    const Param& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return *items_[it->second];
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    size_t count() const { return items_.size(); }
    Param& operator[](size_t i) { return *items_[i]; }
    const Param& operator[](size_t i) const { return *items_[i]; }

    int64_t total_size() const {
        int64_t n = 0;
        for (const auto& p : items_) n += p->size();
        return n;
    }

    void zero_grads() {
        for (auto& p : items_) std::fill(p->grad.begin(), p->grad.end(), 0.0);
    }

private:
    std::vector<std::unique_ptr<Param>> items_;
    std::unordered_map<std::string, size_t> index_;
};

class Graph;

// Lightweight handle into a Graph.
struct Tensor {
    Graph* graph = nullptr;
    int id = -1;
    bool valid() const { return graph != nullptr && id >= 0; }
};

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;       // owned storage (empty for param leaves)
    const double* ext_value = nullptr;  // set for param leaves (view, no copy)
    std::vector<double> grad;        // allocated lazily during backward
    std::vector<double> aux;         // op scratch kept for backward (e.g. attention)
    Shape aux_shape;
    Param* param = nullptr;          // leaf bound to a trainable parameter
    bool needs_grad = false;
    std::array<int, 4> inputs{{-1, -1, -1, -1}};
    int n_inputs = 0;
    std::function<void(Graph&, int)> backward;
    const char* op = "leaf";

    int64_t numel() const { return shape_numel(shape); }
    const double* data() const { return ext_value ? ext_value : value.data(); }
};

}  // namespace detail

// The tape. One Graph per forward pass / thread; not thread-safe internally.
class Graph {
public:
    // When true (default), gradients of parameter leaves accumulate directly
    // into Param::grad during backward. Turn off to keep them in the graph
    // (used by the multi-graph batch path, which merges in fixed order).
    bool direct_param_grads = true;

    // constant leaf
    Tensor input(Shape shape, std::vector<double> data) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError("input: data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        detail::Node n;
        n.shape = std::move(shape);
        n.value = std::move(data);
        return push(std::move(n));
    }

    Tensor input_scalar(double v) { return input({1, 1}, {v}); }

    // trainable leaf viewing a Param (no copy)
    Tensor param(Param& p) {
        detail::Node n;
        n.shape = p.shape;
        n.ext_value = p.value.data();
        n.param = &p;
        n.needs_grad = true;
        return push(std::move(n));
    }

    size_t size() const { return nodes_.size(); }
    const Shape& shape(Tensor t) const { return node(t).shape; }
    int64_t numel(Tensor t) const { return node(t).numel(); }

    std::vector<double> values(Tensor t) const {
        const auto& n = node(t);
        return std::vector<double>(n.data(), n.data() + n.numel());
    }
    const double* data(Tensor t) const { return node(t).data(); }
    double scalar(Tensor t) const {
        if (node(t).numel() != 1) throw ShapeError("scalar: tensor is not a scalar");
        return node(t).data()[0];
    }

    // Gradient of the last backward() w.r.t. t; zeros if t never received one.
    std::vector<double> grad(Tensor t) const {
        const auto& n = node(t);
        if (n.grad.empty()) return std::vector<double>(static_cast<size_t>(n.numel()), 0.0);
        return n.grad;
    }

    // Reverse pass from a scalar. Visits nodes in exact reverse creation
    // (= reverse topological) order; multi-consumer tensors accumulate.
    void backward(Tensor loss) {
        auto& ln = node(loss);
        if (ln.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(ln.shape));
        for (auto& n : nodes_) n.grad.clear();
        ln.grad.assign(1, 1.0);
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            auto& n = nodes_[static_cast<size_t>(i)];
            if (!n.needs_grad || n.grad.empty()) continue;
            if (n.param != nullptr && direct_param_grads) {
                double* g = n.param->grad.data();
                const double* src = n.grad.data();
                const int64_t m = n.numel();
                for (int64_t j = 0; j < m; ++j) g[j] += src[j];
                continue;
            }
            if (n.backward) n.backward(*this, i);
        }
    }

    // Merge parameter-leaf gradients into their Params (multi-graph path).
    void merge_param_grads(double scale = 1.0) {
        for (auto& n : nodes_) {
            if (n.param == nullptr || n.grad.empty()) continue;
            double* g = n.param->grad.data();
            const int64_t m = n.numel();
            for (int64_t j = 0; j < m; ++j) g[j] += scale * n.grad[j];
        }
    }

    // -- internals used by the op implementations ---------------------------

    detail::Node& node(Tensor t) {
        if (t.graph != this) throw ShapeError("tensor belongs to a different graph");
        return nodes_[static_cast<size_t>(t.id)];
    }
    const detail::Node& node(Tensor t) const {
        if (t.graph != this) throw ShapeError("tensor belongs to a different graph");
        return nodes_[static_cast<size_t>(t.id)];
    }
    detail::Node& node_at(int id) { return nodes_[static_cast<size_t>(id)]; }

    Tensor push(detail::Node n) {
        nodes_.push_back(std::move(n));
        return Tensor{this, static_cast<int>(nodes_.size()) - 1};
    }

    // Gradient buffer of node id, allocated (zeroed) on first touch.
    double* grad_buf(int id) {
        auto& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.empty()) n.grad.assign(static_cast<size_t>(n.numel()), 0.0);
        return n.grad.data();
    }

private:
    std::deque<detail::Node> nodes_;
};

// ---------------------------------------------------------------------------
// op helpers

namespace detail {

inline Tensor make_op(Graph& g, const char* op, Shape out_shape,
                      std::initializer_list<Tensor> inputs,
                      std::function<void(Graph&, int)> backward) {
    Node n;
    n.op = op;
    n.shape = std::move(out_shape);
    n.value.assign(static_cast<size_t>(shape_numel(n.shape)), 0.0);
    bool needs = false;
    for (Tensor t : inputs) {
        if (t.graph != &g) throw ShapeError(std::string(op) + ": input from a different graph");
        n.inputs[static_cast<size_t>(n.n_inputs++)] = t.id;
        needs = needs || g.node(t).needs_grad;
    }
    n.needs_grad = needs;
    if (needs) n.backward = std::move(backward);
    return g.push(std::move(n));
}

inline bool wants_grad(Graph& g, int id) { return g.node_at(id).needs_grad; }

}  // namespace detail

// ---------------------------------------------------------------------------
// primitive ops

// C[m,n] = A[m,k] * B[k,n]; dA = dC*B^T, dB = A^T*dC.
inline Tensor matmul(Tensor a, Tensor b) {
    Graph& g = *a.graph;
    const auto& an = g.node(a);
    const auto& bn = g.node(b);
    check_shape(an.shape.size() == 2 && bn.shape.size() == 2 && an.shape[1] == bn.shape[0],
                "matmul", an.shape, bn.shape);
    const int m = an.shape[0], k = an.shape[1], n = bn.shape[1];
    Tensor out = detail::make_op(g, "matmul", {m, n}, {a, b}, [a, b, m, k, n](Graph& gg, int id) {
        const double* dC = gg.node_at(id).grad.data();
        const double* A = gg.node(a).data();
        const double* B = gg.node(b).data();
        if (detail::wants_grad(gg, a.id)) {
            double* dA = gg.grad_buf(a.id);
            // dA[i,p] += sum_j dC[i,j] * B[p,j]
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* dCi = dC + static_cast<int64_t>(i) * n;
                    const double* Bp = B + static_cast<int64_t>(p) * n;
                    for (int j = 0; j < n; ++j) acc += dCi[j] * Bp[j];
                    dA[static_cast<int64_t>(i) * k + p] += acc;
                }
        }
        if (detail::wants_grad(gg, b.id)) {
            double* dB = gg.grad_buf(b.id);
            // dB[p,j] += sum_i A[i,p] * dC[i,j]
            for (int i = 0; i < m; ++i) {
                const double* Ai = A + static_cast<int64_t>(i) * k;
                const double* dCi = dC + static_cast<int64_t>(i) * n;
                for (int p = 0; p < k; ++p) {
                    const double ap = Ai[p];
                    if (ap == 0.0) continue;
                    double* dBp = dB + static_cast<int64_t>(p) * n;
                    for (int j = 0; j < n; ++j) dBp[j] += ap * dCi[j];
                }
            }
        }
    });
    // ikj loop keeps B accesses contiguous.
    double* C = g.node(out).value.data();
    const double* A = g.node(a).data();
    const double* B = g.node(b).data();
    for (int i = 0; i < m; ++i) {
        double* Ci = C + static_cast<int64_t>(i) * n;
        const double* Ai = A + static_cast<int64_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double ap = Ai[p];
            if (ap == 0.0) continue;
            const double* Bp = B + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) Ci[j] += ap * Bp[j];
        }
    }
    return out;
}

inline Tensor add(Tensor a, Tensor b) {
    Graph& g = *a.graph;
    const auto& an = g.node(a);
    const auto& bn = g.node(b);
    check_shape(an.shape == bn.shape, "add", an.shape, bn.shape);
    Tensor out = detail::make_op(g, "add", an.shape, {a, b}, [a, b](Graph& gg, int id) {
        const auto& n = gg.node_at(id);
        const int64_t m = n.numel();
        if (detail::wants_grad(gg, a.id)) {
            double* dA = gg.grad_buf(a.id);
            for (int64_t i = 0; i < m; ++i) dA[i] += n.grad[static_cast<size_t>(i)];
        }
        if (detail::wants_grad(gg, b.id)) {
            double* dB = gg.grad_buf(b.id);
            for (int64_t i = 0; i < m; ++i) dB[i] += n.grad[static_cast<size_t>(i)];
        }
    });
    double* o = g.node(out).value.data();
    const double* x = an.data();
    const double* y = bn.data();
    for (int64_t i = 0; i < an.numel(); ++i) o[i] = x[i] + y[i];
    return out;
}

inline Tensor sub(Tensor a, Tensor b) {
    Graph& g = *a.graph;
    const auto& an = g.node(a);
    const auto& bn = g.node(b);
    check_shape(an.shape == bn.shape, "sub", an.shape, bn.shape);
    Tensor out = detail::make_op(g, "sub", an.shape, {a, b}, [a, b](Graph& gg, int id) {
        const auto& n = gg.node_at(id);
        const int64_t m = n.numel();
        if (detail::wants_grad(gg, a.id)) {
            double* dA = gg.grad_buf(a.id);
            for (int64_t i = 0; i < m; ++i) dA[i] += n.grad[static_cast<size_t>(i)];
        }
        if (detail::wants_grad(gg, b.id)) {
            double* dB = gg.grad_buf(b.id);
            for (int64_t i = 0; i < m; ++i) dB[i] -= n.grad[static_cast<size_t>(i)];
        }
    });
    double* o = g.node(out).value.data();
    const double* x = an.data();
    const double* y = bn.data();
    for (int64_t i = 0; i < an.numel(); ++i) o[i] = x[i] - y[i];
    return out;
}

inline Tensor scale(Tensor a, double c) {
    Graph& g = *a.graph;
    const auto& an = g.node(a);
    Tensor out = detail::make_op(g, "scale", an.shape, {a}, [a, c](Graph& gg, int id) {
        const auto& n = gg.node_at(id);
        double* dA = gg.grad_buf(a.id);
        for (int64_t i = 0; i < n.numel(); ++i) dA[i] += c * n.grad[static_cast<size_t>(i)];
    });
    double* o = g.node(out).value.data();
    const double* x = an.data();
    for (int64_t i = 0; i < an.numel(); ++i) o[i] = c * x[i];
    return out;
}

// Elementwise multiply by a scalar tensor s[1,1]; both sides differentiable.
inline Tensor scale_by(Tensor a, Tensor s) {
    Graph& g = *a.graph;
    const auto& an = g.node(a);
    const auto& sn = g.node(s);
    check_shape(sn.numel() == 1, "scale_by", an.shape, sn.shape);
    Tensor out = detail::make_op(g, "scale_by", an.shape, {a, s}, [a, s](Graph& gg, int id) {
        const auto& n = gg.node_at(id);
        const double sv = gg.node(s).data()[0];
        const double* A = gg.node(a).data();
        const int64_t m = n.numel();
        if (detail::wants_grad(gg, a.id)) {
            double* dA = gg.grad_buf(a.id);
            for (int64_t i = 0; i < m; ++i) dA[i] += sv * n.grad[static_cast<size_t>(i)];
        }
        if (detail::wants_grad(gg, s.id)) {
            double* dS = gg.grad_buf(s.id);
            double acc = 0.0;
            for (int64_t i = 0; i < m; ++i) acc += A[i] * n.grad[static_cast<size_t>(i)];
            dS[0] += acc;
        }
    });
    double* o = g.node(out).value.data();
    const double* x = an.data();
    const double sv = sn.data()[0];
    for (int64_t i = 0; i < an.numel(); ++i) o[i] = sv * x[i];
    return out;
}

// a[m,n] + row-broadcast bias b[1,n].
inline Tensor add_bias(Tensor a, Tensor b) {
    Graph& g = *a.graph;
    const auto& an = g.node(a);
    const auto& bn = g.node(b);
    check_shape(an.shape.size() == 2 && bn.shape.size() == 2 && bn.shape[0] == 1 &&
                    bn.shape[1] == an.shape[1],
                "add_bias", an.shape, bn.shape);
    const int m = an.shape[0], n = an.shape[1];
    Tensor out = detail::make_op(g, "add_bias", an.shape, {a, b}, [a, b, m, n](Graph& gg, int id) {
        const double* dC = gg.node_at(id).grad.data();
        if (detail::wants_grad(gg, a.id)) {
            double* dA = gg.grad_buf(a.id);
            for (int64_t i = 0; i < static_cast<int64_t>(m) * n; ++i) dA[i] += dC[i];
        }
        if (detail::wants_grad(gg, b.id)) {
            double* dB = gg.grad_buf(b.id);
            for (int i = 0; i < m; ++i) {
                const double* row = dC + static_cast<int64_t>(i) * n;
                for (int j = 0; j < n; ++j) dB[j] += row[j];
            }
        }
    });
    double* o = g.node(out).value.data();
    const double* x = an.data();
    const double* bias = bn.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) o[static_cast<int64_t>(i) * n + j] = x[static_cast<int64_t>(i) * n + j] + bias[j];
    return out;
}

// Row-wise scaling: a[m,n] * c[m,1].
inline Tensor mul_rows(Tensor a, Tensor c) {
    Graph& g = *a.graph;
    const auto& an = g.node(a);
    const auto& cn = g.node(c);
    check_shape(an.shape.size() == 2 && cn.shape.size() == 2 && cn.shape[0] == an.shape[0] &&
                    cn.shape[1] == 1,
                "mul_rows", an.shape, cn.shape);
    const int m = an.shape[0], n = an.shape[1];
    Tensor out = detail::make_op(g, "mul_rows", an.shape, {a, c}, [a, c, m, n](Graph& gg, int id) {
        const double* dC = gg.node_at(id).grad.data();
        const double* A = gg.node(a).data();
        const double* s = gg.node(c).data();
        if (detail::wants_grad(gg, a.id)) {
            double* dA = gg.grad_buf(a.id);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    dA[static_cast<int64_t>(i) * n + j] += s[i] * dC[static_cast<int64_t>(i) * n + j];
        }
        if (detail::wants_grad(gg, c.id)) {
            double* ds = gg.grad_buf(c.id);
            for (int i = 0; i < m; ++i) {
                double acc = 0.0;
                for (int j = 0; j < n; ++j)
                    acc += A[static_cast<int64_t>(i) * n + j] * dC[static_cast<int64_t>(i) * n + j];
                ds[i] += acc;
            }
        }
    });
    double* o = g.node(out).value.data();
    const double* x = an.data();
    const double* s = cn.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) o[static_cast<int64_t>(i) * n + j] = s[i] * x[static_cast<int64_t>(i) * n + j];
    return out;
}

// Concatenate along the last axis (2-D).
inline Tensor concat_cols(Tensor a, Tensor b) {
    Graph& g = *a.graph;
    const auto& an = g.node(a);
    const auto& bn = g.node(b);
    check_shape(an.shape.size() == 2 && bn.shape.size() == 2 && an.shape[0] == bn.shape[0],
                "concat_cols", an.shape, bn.shape);
    const int m = an.shape[0], na = an.shape[1], nb = bn.shape[1];
    Tensor out = detail::make_op(g, "concat_cols", {m, na + nb}, {a, b}, [a, b, m, na, nb](Graph& gg, int id) {
        const double* dC = gg.node_at(id).grad.data();
        const int w = na + nb;
        if (detail::wants_grad(gg, a.id)) {
            double* dA = gg.grad_buf(a.id);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < na; ++j) dA[static_cast<int64_t>(i) * na + j] += dC[static_cast<int64_t>(i) * w + j];
        }
        if (detail::wants_grad(gg, b.id)) {
            double* dB = gg.grad_buf(b.id);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < nb; ++j)
                    dB[static_cast<int64_t>(i) * nb + j] += dC[static_cast<int64_t>(i) * w + na + j];
        }
    });
    double* o = g.node(out).value.data();
    const double* x = an.data();
    const double* y = bn.data();
    const int w = na + nb;
    for (int i = 0; i < m; ++i) {
        std::memcpy(o + static_cast<int64_t>(i) * w, x + static_cast<int64_t>(i) * na, sizeof(double) * static_cast<size_t>(na));
        std::memcpy(o + static_cast<int64_t>(i) * w + na, y + static_cast<int64_t>(i) * nb, sizeof(double) * static_cast<size_t>(nb));
    }
    return out;
}

inline Tensor slice_rows(Tensor a, int r0, int r1) {
    Graph& g = *a.graph;
    const auto& an = g.node(a);
    if (an.shape.size() != 2 || r0 < 0 || r1 > an.shape[0] || r0 >= r1)
        throw ShapeError("slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") for " + shape_str(an.shape));
    const int n = an.shape[1];
    Tensor out = detail::make_op(g, "slice_rows", {r1 - r0, n}, {a}, [a, r0, r1, n](Graph& gg, int id) {
        const double* dC = gg.node_at(id).grad.data();
        double* dA = gg.grad_buf(a.id);
        for (int i = r0; i < r1; ++i)
            for (int j = 0; j < n; ++j)
                dA[static_cast<int64_t>(i) * n + j] += dC[static_cast<int64_t>(i - r0) * n + j];
    });
    double* o = g.node(out).value.data();
    std::memcpy(o, an.data() + static_cast<int64_t>(r0) * n, sizeof(double) * static_cast<size_t>((r1 - r0)) * static_cast<size_t>(n));
    return out;
}

inline Tensor slice_cols(Tensor a, int c0, int c1) {
    Graph& g = *a.graph;
    const auto& an = g.node(a);
    if (an.shape.size() != 2 || c0 < 0 || c1 > an.shape[1] || c0 >= c1)
        throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") for " + shape_str(an.shape));
    const int m = an.shape[0], n = an.shape[1];
    const int w = c1 - c0;
    Tensor out = detail::make_op(g, "slice_cols", {m, w}, {a}, [a, c0, m, n, w](Graph& gg, int id) {
        const double* dC = gg.node_at(id).grad.data();
        double* dA = gg.grad_buf(a.id);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                dA[static_cast<int64_t>(i) * n + c0 + j] += dC[static_cast<int64_t>(i) * w + j];
    });
    double* o = g.node(out).value.data();
    const double* x = an.data();
    for (int i = 0; i < m; ++i)
        std::memcpy(o + static_cast<int64_t>(i) * w, x + static_cast<int64_t>(i) * n + c0, sizeof(double) * static_cast<size_t>(w));
    return out;
}

inline Tensor reshape(Tensor a, Shape shape) {
    Graph& g = *a.graph;
    const auto& an = g.node(a);
    if (shape_numel(shape) != an.numel())
        throw ShapeError("reshape: element count mismatch " + shape_str(an.shape) + " -> " + shape_str(shape));
    Tensor out = detail::make_op(g, "reshape", std::move(shape), {a}, [a](Graph& gg, int id) {
        const auto& n = gg.node_at(id);
        double* dA = gg.grad_buf(a.id);
        for (int64_t i = 0; i < n.numel(); ++i) dA[i] += n.grad[static_cast<size_t>(i)];
    });
    double* o = g.node(out).value.data();
    std::memcpy(o, an.data(), sizeof(double) * static_cast<size_t>(an.numel()));
    return out;
}

inline Tensor transpose(Tensor a) {
    Graph& g = *a.graph;
    const auto& an = g.node(a);
    if (an.shape.size() != 2) throw ShapeError("transpose: expects 2-D, got " + shape_str(an.shape));
    const int m = an.shape[0], n = an.shape[1];
    Tensor out = detail::make_op(g, "transpose", {n, m}, {a}, [a, m, n](Graph& gg, int id) {
        const double* dC = gg.node_at(id).grad.data();
        double* dA = gg.grad_buf(a.id);
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < m; ++i)
                dA[static_cast<int64_t>(i) * n + j] += dC[static_cast<int64_t>(j) * m + i];
    });
    double* o = g.node(out).value.data();
    const double* x = an.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) o[static_cast<int64_t>(j) * m + i] = x[static_cast<int64_t>(i) * n + j];
    return out;
}

// Exact (erf-based) GELU.
inline Tensor gelu(Tensor a) {
    Graph& g = *a.graph;
    const auto& an = g.node(a);
    Tensor out = detail::make_op(g, "gelu", an.shape, {a}, [a](Graph& gg, int id) {
        const auto& n = gg.node_at(id);
        const double* x = gg.node(a).data();
        double* dA = gg.grad_buf(a.id);
        const double inv_sqrt2 = 0.7071067811865475244;
        const double inv_sqrt2pi = 0.3989422804014326779;
        for (int64_t i = 0; i < n.numel(); ++i) {
            const double xi = x[i];
            const double cdf = 0.5 * (1.0 + std::erf(xi * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * xi * xi);
            dA[i] += (cdf + xi * pdf) * n.grad[static_cast<size_t>(i)];
        }
    });
    double* o = g.node(out).value.data();
    const double* x = an.data();
    const double inv_sqrt2 = 0.7071067811865475244;
    for (int64_t i = 0; i < an.numel(); ++i) o[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * inv_sqrt2));
    return out;
}

inline Tensor softplus(Tensor a) {
    Graph& g = *a.graph;
    const auto& an = g.node(a);
    Tensor out = detail::make_op(g, "softplus", an.shape, {a}, [a](Graph& gg, int id) {
        const auto& n = gg.node_at(id);
        const double* x = gg.node(a).data();
        double* dA = gg.grad_buf(a.id);
        for (int64_t i = 0; i < n.numel(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-x[i]));
            dA[i] += s * n.grad[static_cast<size_t>(i)];
        }
    });
    double* o = g.node(out).value.data();
    const double* x = an.data();
    for (int64_t i = 0; i < an.numel(); ++i)
        o[i] = x[i] > 30.0 ? x[i] : std::log1p(std::exp(x[i]));
    return out;
}

namespace detail {

// Shared softmax kernel: out rows of a [rows, n] block, row-max stabilized.
// Throws NumericError when a row is non-finite.
inline void softmax_rows_kernel(const double* x, double* y, int rows, int n, const char* op) {
    for (int i = 0; i < rows; ++i) {
        const double* xi = x + static_cast<int64_t>(i) * n;
        double* yi = y + static_cast<int64_t>(i) * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j)
            if (xi[j] > mx) mx = xi[j];
        if (!std::isfinite(mx)) throw NumericError(std::string(op) + ": non-finite input row");
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            yi[j] = fast_exp_neg(xi[j] - mx);
            sum += yi[j];
        }
        if (!std::isfinite(sum) || sum <= 0.0) throw NumericError(std::string(op) + ": non-finite input row");
        const double inv = 1.0 / sum;
        for (int j = 0; j < n; ++j) yi[j] *= inv;
    }
}

// dX = Y * (dY - rowdot(dY, Y)); uses the saved output only.
inline void softmax_rows_backward_kernel(const double* y, const double* dy, double* dx, int rows, int n) {
    for (int i = 0; i < rows; ++i) {
        const double* yi = y + static_cast<int64_t>(i) * n;
        const double* dyi = dy + static_cast<int64_t>(i) * n;
        double* dxi = dx + static_cast<int64_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += dyi[j] * yi[j];
        for (int j = 0; j < n; ++j) dxi[j] += yi[j] * (dyi[j] - dot);
    }
}

}  // namespace detail

inline Tensor softmax_rows(Tensor a) {
    Graph& g = *a.graph;
    const auto& an = g.node(a);
    if (an.shape.size() != 2) throw ShapeError("softmax_rows: expects 2-D, got " + shape_str(an.shape));
    const int m = an.shape[0], n = an.shape[1];
    Tensor out = detail::make_op(g, "softmax_rows", an.shape, {a}, [a, m, n](Graph& gg, int id) {
        const auto& node = gg.node_at(id);
        double* dA = gg.grad_buf(a.id);
        detail::softmax_rows_backward_kernel(node.data(), node.grad.data(), dA, m, n);
    });
    detail::softmax_rows_kernel(an.data(), g.node(out).value.data(), m, n, "softmax_rows");
    return out;
}

// Last-axis layer normalization with affine gain/bias of shape [1,d].
inline Tensor layer_norm(Tensor a, Tensor gain, Tensor bias, double eps = 1e-5) {
    Graph& g = *a.graph;
    const auto& an = g.node(a);
    const auto& gn = g.node(gain);
    const auto& bn = g.node(bias);
    if (an.shape.empty()) throw ShapeError("layer_norm: scalar input");
    const int d = an.shape.back();
    check_shape(gn.numel() == d && bn.numel() == d, "layer_norm", gn.shape, bn.shape);
    if (eps <= 0.0) throw ShapeError("layer_norm: eps must be positive");
    const int rows = static_cast<int>(an.numel() / d);
    Tensor out = detail::make_op(g, "layer_norm", an.shape, {a, gain, bias},
                                 [a, gain, bias, rows, d, eps](Graph& gg, int id) {
        const auto& node = gg.node_at(id);
        const double* dY = node.grad.data();
        const double* X = gg.node(a).data();
        const double* G = gg.node(gain).data();
        const bool wa = detail::wants_grad(gg, a.id);
        const bool wg = detail::wants_grad(gg, gain.id);
        const bool wb = detail::wants_grad(gg, bias.id);
        double* dA = wa ? gg.grad_buf(a.id) : nullptr;
        double* dG = wg ? gg.grad_buf(gain.id) : nullptr;
        double* dB = wb ? gg.grad_buf(bias.id) : nullptr;
        std::vector<double> xhat(static_cast<size_t>(d));
        for (int r = 0; r < rows; ++r) {
            const double* x = X + static_cast<int64_t>(r) * d;
            const double* dy = dY + static_cast<int64_t>(r) * d;
            double mean = 0.0;
            for (int j = 0; j < d; ++j) mean += x[j];
            mean /= d;
            double var = 0.0;
            for (int j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
            var /= d;
            const double inv_std = 1.0 / std::sqrt(var + eps);
            for (int j = 0; j < d; ++j) xhat[static_cast<size_t>(j)] = (x[j] - mean) * inv_std;
            if (wg)
                for (int j = 0; j < d; ++j) dG[j] += dy[j] * xhat[static_cast<size_t>(j)];
            if (wb)
                for (int j = 0; j < d; ++j) dB[j] += dy[j];
            if (wa) {
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int j = 0; j < d; ++j) {
                    const double dxh = dy[j] * G[j];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * xhat[static_cast<size_t>(j)];
                }
                double* da = dA + static_cast<int64_t>(r) * d;
                for (int j = 0; j < d; ++j) {
                    const double dxh = dy[j] * G[j];
                    da[j] += inv_std *
                             (dxh - sum_dxhat / d - xhat[static_cast<size_t>(j)] * sum_dxhat_xhat / d);
                }
            }
        }
    });
    double* o = g.node(out).value.data();
    const double* x = an.data();
    const double* gv = gn.data();
    const double* bv = bn.data();
    for (int r = 0; r < rows; ++r) {
        const double* xr = x + static_cast<int64_t>(r) * d;
        double* orow = o + static_cast<int64_t>(r) * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += xr[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= d;
        const double inv_std = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < d; ++j) orow[j] = (xr[j] - mean) * inv_std * gv[j] + bv[j];
    }
    return out;
}

// x[m,k] * W[k,n] + b[1,n] in one node.
inline Tensor linear(Tensor x, Tensor w, Tensor b) {
    Graph& g = *x.graph;
    const auto& xn = g.node(x);
    const auto& wn = g.node(w);
    const auto& bn = g.node(b);
    check_shape(xn.shape.size() == 2 && wn.shape.size() == 2 && xn.shape[1] == wn.shape[0],
                "linear", xn.shape, wn.shape);
    check_shape(bn.shape.size() == 2 && bn.shape[0] == 1 && bn.shape[1] == wn.shape[1],
                "linear", wn.shape, bn.shape);
    const int m = xn.shape[0], k = xn.shape[1], n = wn.shape[1];
    Tensor out = detail::make_op(g, "linear", {m, n}, {x, w, b}, [x, w, b, m, k, n](Graph& gg, int id) {
        const double* dC = gg.node_at(id).grad.data();
        const double* X = gg.node(x).data();
        const double* W = gg.node(w).data();
        if (detail::wants_grad(gg, x.id)) {
            double* dX = gg.grad_buf(x.id);
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* dCi = dC + static_cast<int64_t>(i) * n;
                    const double* Wp = W + static_cast<int64_t>(p) * n;
                    for (int j = 0; j < n; ++j) acc += dCi[j] * Wp[j];
                    dX[static_cast<int64_t>(i) * k + p] += acc;
                }
        }
        if (detail::wants_grad(gg, w.id)) {
            double* dW = gg.grad_buf(w.id);
            for (int i = 0; i < m; ++i) {
                const double* Xi = X + static_cast<int64_t>(i) * k;
                const double* dCi = dC + static_cast<int64_t>(i) * n;
                for (int p = 0; p < k; ++p) {
                    const double xp = Xi[p];
                    if (xp == 0.0) continue;
                    double* dWp = dW + static_cast<int64_t>(p) * n;
                    for (int j = 0; j < n; ++j) dWp[j] += xp * dCi[j];
                }
            }
        }
        if (detail::wants_grad(gg, b.id)) {
            double* dB = gg.grad_buf(b.id);
            for (int i = 0; i < m; ++i) {
                const double* dCi = dC + static_cast<int64_t>(i) * n;
                for (int j = 0; j < n; ++j) dB[j] += dCi[j];
            }
        }
    });
    double* C = g.node(out).value.data();
    const double* X = xn.data();
    const double* W = wn.data();
    const double* B = bn.data();
    for (int i = 0; i < m; ++i) {
        double* Ci = C + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) Ci[j] = B[j];
        const double* Xi = X + static_cast<int64_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double xp = Xi[p];
            if (xp == 0.0) continue;
            const double* Wp = W + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) Ci[j] += xp * Wp[j];
        }
    }
    return out;
}

// Mean over rows: [m,n] -> [1,n].
inline Tensor mean_pool_rows(Tensor a) {
    Graph& g = *a.graph;
    const auto& an = g.node(a);
    if (an.shape.size() != 2) throw ShapeError("mean_pool_rows: expects 2-D, got " + shape_str(an.shape));
    const int m = an.shape[0], n = an.shape[1];
    Tensor out = detail::make_op(g, "mean_pool_rows", {1, n}, {a}, [a, m, n](Graph& gg, int id) {
        const double* dC = gg.node_at(id).grad.data();
        double* dA = gg.grad_buf(a.id);
        const double inv = 1.0 / m;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) dA[static_cast<int64_t>(i) * n + j] += dC[j] * inv;
    });
    double* o = g.node(out).value.data();
    const double* x = an.data();
    for (int j = 0; j < n; ++j) o[j] = 0.0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) o[j] += x[static_cast<int64_t>(i) * n + j];
    for (int j = 0; j < n; ++j) o[j] /= m;
    return out;
}

inline Tensor sum_all(Tensor a) {
    Graph& g = *a.graph;
    const auto& an = g.node(a);
    Tensor out = detail::make_op(g, "sum_all", {1, 1}, {a}, [a](Graph& gg, int id) {
        const double dc = gg.node_at(id).grad[0];
        double* dA = gg.grad_buf(a.id);
        for (int64_t i = 0; i < gg.node(a).numel(); ++i) dA[i] += dc;
    });
    const double* x = an.data();
    double acc = 0.0;
    for (int64_t i = 0; i < an.numel(); ++i) acc += x[i];
    g.node(out).value[0] = acc;
    return out;
}

// Mean over rows of the per-row L1 norm: (1/m) * sum_i sum_j |p - t|.
// Subgradient at exact ties is 0.
inline Tensor l1_mean(Tensor pred, Tensor target) {
    Graph& g = *pred.graph;
    const auto& pn = g.node(pred);
    const auto& tn = g.node(target);
    check_shape(pn.shape == tn.shape, "l1_mean", pn.shape, tn.shape);
    if (pn.shape.size() != 2) throw ShapeError("l1_mean: expects 2-D, got " + shape_str(pn.shape));
    const int m = pn.shape[0], n = pn.shape[1];
    Tensor out = detail::make_op(g, "l1_mean", {1, 1}, {pred, target}, [pred, target, m, n](Graph& gg, int id) {
        const double dc = gg.node_at(id).grad[0];
        const double* P = gg.node(pred).data();
        const double* T = gg.node(target).data();
        const double inv = dc / m;
        if (detail::wants_grad(gg, pred.id)) {
            double* dP = gg.grad_buf(pred.id);
            for (int64_t i = 0; i < static_cast<int64_t>(m) * n; ++i) {
                const double diff = P[i] - T[i];
                dP[i] += diff > 0.0 ? inv : (diff < 0.0 ? -inv : 0.0);
            }
        }
        if (detail::wants_grad(gg, target.id)) {
            double* dT = gg.grad_buf(target.id);
            for (int64_t i = 0; i < static_cast<int64_t>(m) * n; ++i) {
                const double diff = P[i] - T[i];
                dT[i] -= diff > 0.0 ? inv : (diff < 0.0 ? -inv : 0.0);
            }
        }
    });
    const double* P = pn.data();
    const double* T = tn.data();
    double acc = 0.0;
    for (int64_t i = 0; i < static_cast<int64_t>(m) * n; ++i) acc += std::fabs(P[i] - T[i]);
    g.node(out).value[0] = acc / m;
    return out;
}

// ---------------------------------------------------------------------------
// fused multi-head self-attention
//
// q,k,v: [T,d] with d divisible by heads. Per head h (width dh = d/heads):
//   A_h = softmax(q_h k_h^T / sqrt(dh)),  out_h = A_h v_h,
// concatenated back to [T,d]. The attention stack A [heads,T,T] is the only
// retained intermediate; backward re-derives everything else from q,k,v,A.
inline Tensor multi_head_attention(Tensor q, Tensor k, Tensor v, int heads) {
    Graph& g = *q.graph;
    const auto& qn = g.node(q);
    const auto& kn = g.node(k);
    const auto& vn = g.node(v);
    check_shape(qn.shape.size() == 2 && qn.shape == kn.shape, "multi_head_attention", qn.shape, kn.shape);
    check_shape(qn.shape == vn.shape, "multi_head_attention", qn.shape, vn.shape);
    const int T = qn.shape[0], d = qn.shape[1];
    if (heads < 1 || d % heads != 0)
        throw ConfigError("multi_head_attention: heads=" + std::to_string(heads) +
                          " must divide width " + std::to_string(d));
    const int dh = d / heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor out = detail::make_op(g, "multi_head_attention", {T, d}, {q, k, v},
                                 [q, k, v, T, d, heads, dh, inv_sqrt_dh](Graph& gg, int id) {
        auto& node = gg.node_at(id);
        const double* dOut = node.grad.data();
        const double* Q = gg.node(q).data();
        const double* K = gg.node(k).data();
        const double* V = gg.node(v).data();
        const double* A = node.aux.data();  // [heads,T,T]
        const bool wq = detail::wants_grad(gg, q.id);
        const bool wk = detail::wants_grad(gg, k.id);
        const bool wv = detail::wants_grad(gg, v.id);
        double* dQ = wq ? gg.grad_buf(q.id) : nullptr;
        double* dK = wk ? gg.grad_buf(k.id) : nullptr;
        double* dV = wv ? gg.grad_buf(v.id) : nullptr;
        std::vector<double> dA(static_cast<size_t>(T) * T);
        std::vector<double> dS(static_cast<size_t>(T) * T);
        for (int h = 0; h < heads; ++h) {
            const int c = h * dh;
            const double* Ah = A + static_cast<int64_t>(h) * T * T;
            // dA = dOut_h * v_h^T ; dV_h = A^T dOut_h
            for (int i = 0; i < T; ++i) {
                const double* doi = dOut + static_cast<int64_t>(i) * d + c;
                for (int j = 0; j < T; ++j) {
                    const double* vj = V + static_cast<int64_t>(j) * d + c;
                    double acc = 0.0;
                    for (int e = 0; e < dh; ++e) acc += doi[e] * vj[e];
                    dA[static_cast<int64_t>(i) * T + j] = acc;
                }
            }
            if (wv) {
                for (int i = 0; i < T; ++i) {
                    const double* Ai = Ah + static_cast<int64_t>(i) * T;
                    const double* doi = dOut + static_cast<int64_t>(i) * d + c;
                    for (int j = 0; j < T; ++j) {
                        const double aij = Ai[j];
                        if (aij == 0.0) continue;
                        double* dvj = dV + static_cast<int64_t>(j) * d + c;
                        for (int e = 0; e < dh; ++e) dvj[e] += aij * doi[e];
                    }
                }
            }
            // softmax backward into dS, then scale by 1/sqrt(dh)
            std::fill(dS.begin(), dS.end(), 0.0);
            detail::softmax_rows_backward_kernel(Ah, dA.data(), dS.data(), T, T);
            for (auto& x : dS) x *= inv_sqrt_dh;
            if (wq) {
                for (int i = 0; i < T; ++i) {
                    double* dqi = dQ + static_cast<int64_t>(i) * d + c;
                    const double* dSi = dS.data() + static_cast<int64_t>(i) * T;
                    for (int j = 0; j < T; ++j) {
                        const double sij = dSi[j];
                        if (sij == 0.0) continue;
                        const double* kj = K + static_cast<int64_t>(j) * d + c;
                        for (int e = 0; e < dh; ++e) dqi[e] += sij * kj[e];
                    }
                }
            }
            if (wk) {
                for (int i = 0; i < T; ++i) {
                    const double* dSi = dS.data() + static_cast<int64_t>(i) * T;
                    const double* qi = Q + static_cast<int64_t>(i) * d + c;
                    for (int j = 0; j < T; ++j) {
                        const double sij = dSi[j];
                        if (sij == 0.0) continue;
                        double* dkj = dK + static_cast<int64_t>(j) * d + c;
                        for (int e = 0; e < dh; ++e) dkj[e] += sij * qi[e];
                    }
                }
            }
        }
    });

    auto& on = g.node(out);
    on.aux.assign(static_cast<size_t>(heads) * T * T, 0.0);
    on.aux_shape = {heads, T, T};
    const double* Q = qn.data();
    const double* K = kn.data();
    const double* V = vn.data();
    double* O = on.value.data();
    std::vector<double> scores(static_cast<size_t>(T) * T);
    for (int h = 0; h < heads; ++h) {
        const int c = h * dh;
        double* Ah = on.aux.data() + static_cast<int64_t>(h) * T * T;
        for (int i = 0; i < T; ++i) {
            const double* qi = Q + static_cast<int64_t>(i) * d + c;
            double* si = scores.data() + static_cast<int64_t>(i) * T;
            for (int j = 0; j < T; ++j) {
                const double* kj = K + static_cast<int64_t>(j) * d + c;
                double acc = 0.0;
                for (int e = 0; e < dh; ++e) acc += qi[e] * kj[e];
                si[j] = acc * inv_sqrt_dh;
            }
        }
        detail::softmax_rows_kernel(scores.data(), Ah, T, T, "multi_head_attention");
        for (int i = 0; i < T; ++i) {
            const double* Ai = Ah + static_cast<int64_t>(i) * T;
            double* oi = O + static_cast<int64_t>(i) * d + c;
            for (int e = 0; e < dh; ++e) oi[e] = 0.0;
            for (int j = 0; j < T; ++j) {
                const double aij = Ai[j];
                const double* vj = V + static_cast<int64_t>(j) * d + c;
                for (int e = 0; e < dh; ++e) oi[e] += aij * vj[e];
            }
        }
    }
    return out;
}

// Attention matrices saved by a multi_head_attention node: [heads,T,T].
inline std::vector<double> attention_of(const Graph& g, Tensor mha_out, Shape* shape_out = nullptr) {
    const auto& n = g.node(mha_out);
    if (n.aux.empty()) throw ShapeError("attention_of: node has no saved attention");
    if (shape_out) *shape_out = n.aux_shape;
    return n.aux;
}

// ---------------------------------------------------------------------------
// convolution ops (serve the raster feature extractor only)

// x [C,H,W], w [F,C,kh,kw], b [1,F]; valid padding, square stride.
inline Tensor conv2d(Tensor x, Tensor w, Tensor b, int stride = 1) {
    Graph& g = *x.graph;
    const auto& xn = g.node(x);
    const auto& wn = g.node(w);
    const auto& bn = g.node(b);
    if (xn.shape.size() != 3 || wn.shape.size() != 4)
        throw ShapeError("conv2d: expects x[C,H,W], w[F,C,kh,kw], got " + shape_str(xn.shape) + " and " +
                         shape_str(wn.shape));
    const int C = xn.shape[0], H = xn.shape[1], W = xn.shape[2];
    const int F = wn.shape[0], kh = wn.shape[2], kw = wn.shape[3];
    check_shape(wn.shape[1] == C, "conv2d", xn.shape, wn.shape);
    check_shape(bn.numel() == F, "conv2d", wn.shape, bn.shape);
    if (stride < 1 || H < kh || W < kw)
        throw ShapeError("conv2d: kernel larger than input or bad stride for " + shape_str(xn.shape));
    const int OH = (H - kh) / stride + 1, OW = (W - kw) / stride + 1;
    auto x_at = [C, H, W](const double* p, int c, int i, int j) {
        return p[(static_cast<int64_t>(c) * H + i) * W + j];
    };
    Tensor out = detail::make_op(g, "conv2d", {F, OH, OW}, {x, w, b},
                                 [x, w, b, C, H, W, F, kh, kw, stride, OH, OW](Graph& gg, int id) {
        const double* dO = gg.node_at(id).grad.data();
        const double* X = gg.node(x).data();
        const double* Wt = gg.node(w).data();
        const bool wx = detail::wants_grad(gg, x.id);
        const bool ww = detail::wants_grad(gg, w.id);
        const bool wb = detail::wants_grad(gg, b.id);
        double* dX = wx ? gg.grad_buf(x.id) : nullptr;
        double* dW = ww ? gg.grad_buf(w.id) : nullptr;
        double* dB = wb ? gg.grad_buf(b.id) : nullptr;
        for (int f = 0; f < F; ++f)
            for (int oi = 0; oi < OH; ++oi)
                for (int oj = 0; oj < OW; ++oj) {
                    const double go = dO[(static_cast<int64_t>(f) * OH + oi) * OW + oj];
                    if (go == 0.0) continue;
                    if (wb) dB[f] += go;
                    for (int c = 0; c < C; ++c)
                        for (int u = 0; u < kh; ++u)
                            for (int t = 0; t < kw; ++t) {
                                const int ii = oi * stride + u, jj = oj * stride + t;
                                const int64_t xi = (static_cast<int64_t>(c) * H + ii) * W + jj;
                                const int64_t wi = ((static_cast<int64_t>(f) * C + c) * kh + u) * kw + t;
                                if (ww) dW[wi] += go * X[xi];
                                if (wx) dX[xi] += go * Wt[wi];
                            }
                }
    });
    double* O = g.node(out).value.data();
    const double* X = xn.data();
    const double* Wt = wn.data();
    const double* B = bn.data();
    for (int f = 0; f < F; ++f)
        for (int oi = 0; oi < OH; ++oi)
            for (int oj = 0; oj < OW; ++oj) {
                double acc = B[f];
                for (int c = 0; c < C; ++c)
                    for (int u = 0; u < kh; ++u)
                        for (int t = 0; t < kw; ++t)
                            acc += x_at(X, c, oi * stride + u, oj * stride + t) *
                                   Wt[((static_cast<int64_t>(f) * C + c) * kh + u) * kw + t];
                O[(static_cast<int64_t>(f) * OH + oi) * OW + oj] = acc;
            }
    return out;
}

// Non-overlapping max pooling; first maximum wins ties (deterministic).
inline Tensor max_pool2d(Tensor x, int p) {
    Graph& g = *x.graph;
    const auto& xn = g.node(x);
    if (xn.shape.size() != 3) throw ShapeError("max_pool2d: expects [C,H,W], got " + shape_str(xn.shape));
    const int C = xn.shape[0], H = xn.shape[1], W = xn.shape[2];
    if (p < 1 || H < p || W < p) throw ShapeError("max_pool2d: bad window for " + shape_str(xn.shape));
    const int OH = H / p, OW = W / p;
    Tensor out = detail::make_op(g, "max_pool2d", {C, OH, OW}, {x}, [x, C, H, W, p, OH, OW](Graph& gg, int id) {
        auto& node = gg.node_at(id);
        const double* dO = node.grad.data();
        double* dX = gg.grad_buf(x.id);
        const double* arg = node.aux.data();
        for (int64_t i = 0; i < node.numel(); ++i)
            dX[static_cast<int64_t>(arg[i])] += dO[i];
    });
    auto& on = g.node(out);
    on.aux.assign(static_cast<size_t>(on.numel()), 0.0);
    double* O = on.value.data();
    const double* X = xn.data();
    for (int c = 0; c < C; ++c)
        for (int oi = 0; oi < OH; ++oi)
            for (int oj = 0; oj < OW; ++oj) {
                double best = -std::numeric_limits<double>::infinity();
                int64_t best_idx = 0;
                for (int u = 0; u < p; ++u)
                    for (int t = 0; t < p; ++t) {
                        const int64_t xi = (static_cast<int64_t>(c) * H + oi * p + u) * W + oj * p + t;
                        if (X[xi] > best) {
                            best = X[xi];
                            best_idx = xi;
                        }
                    }
                const int64_t oidx = (static_cast<int64_t>(c) * OH + oi) * OW + oj;
                O[oidx] = best;
                on.aux[static_cast<size_t>(oidx)] = static_cast<double>(best_idx);
            }
    return out;
}

// Global spatial mean: [C,H,W] -> [1,C].
inline Tensor global_mean_pool(Tensor x) {
    Graph& g = *x.graph;
    const auto& xn = g.node(x);
    if (xn.shape.size() != 3) throw ShapeError("global_mean_pool: expects [C,H,W], got " + shape_str(xn.shape));
    const int C = xn.shape[0], H = xn.shape[1], W = xn.shape[2];
    const int64_t hw = static_cast<int64_t>(H) * W;
    Tensor out = detail::make_op(g, "global_mean_pool", {1, C}, {x}, [x, C, hw](Graph& gg, int id) {
        const double* dO = gg.node_at(id).grad.data();
        double* dX = gg.grad_buf(x.id);
        for (int c = 0; c < C; ++c) {
            const double gpc = dO[c] / static_cast<double>(hw);
            double* dxc = dX + c * hw;
            for (int64_t i = 0; i < hw; ++i) dxc[i] += gpc;
        }
    });
    double* O = g.node(out).value.data();
    const double* X = xn.data();
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        const double* xc = X + c * hw;
        for (int64_t i = 0; i < hw; ++i) acc += xc[i];
        O[c] = acc / static_cast<double>(hw);
    }
    return out;
}

}  // namespace mrt
