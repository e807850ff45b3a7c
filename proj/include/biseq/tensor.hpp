#pragma once

// Dense 64-bit tensors plus a tape-based reverse-mode differentiation graph.
//
// A Graph owns every Node created through it; creation order is the tape and
// is topological by construction. backward() runs one reverse sweep over
// fresh per-sweep adjoint buffers and then adds the sweep's result into each
// node's persistent grad, so calling backward twice accumulates exactly 2x.
// Every op checks its output for NaN/Inf and throws NumericError on the
// first non-finite value.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "biseq/error.hpp"

namespace biseq {

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s)
        : shape(std::move(s)), data(numel_of(shape), 0.0) {}

    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel_of(shape))
            throw DimensionError("tensor: " + std::to_string(data.size()) +
                                 " values do not fill shape " + shape_str());
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<std::size_t> s, double v) {
        Tensor t(std::move(s));
        t.fill(v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor row(std::vector<double> v) {
        std::size_t n = v.size();
        return Tensor({1, n}, std::move(v));
    }

    static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> d) {
        return Tensor({r, c}, std::move(d));
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t rows() const {
        require_rank2("rows()");
        return shape[0];
    }

    std::size_t cols() const {
        require_rank2("cols()");
        return shape[1];
    }

    double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    void require_rank2(const char* what) const {
        if (shape.size() != 2)
            throw DimensionError(std::string("tensor: ") + what +
                                 " needs rank 2, have " + shape_str());
    }
};

inline void check_finite(const Tensor& t, const char* where) {
    if (!t.all_finite())
        throw NumericError(std::string(where) + ": produced a non-finite value");
}

inline void add_into(Tensor& dst, const Tensor& src) {
    if (!dst.same_shape(src))
        throw DimensionError("accumulate: shape " + dst.shape_str() +
                             " vs " + src.shape_str());
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

enum class Activation { Tanh, Sigmoid, Relu };

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::Tanh: return "tanh";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Relu: return "relu";
    }
    return "?";
}

inline Activation parse_activation(std::string_view name) {
    if (name == "tanh") return Activation::Tanh;
    if (name == "sigmoid") return Activation::Sigmoid;
    if (name == "relu") return Activation::Relu;
    throw ConfigError("unknown activation '" + std::string(name) +
                      "' (expected tanh, sigmoid or relu)");
}

class BackwardPass;

struct Node {
    Tensor value;
    Tensor grad; // persistent across sweeps; empty until first accumulation
    bool requires_grad = false;
    std::size_t id = 0;
    std::function<void(BackwardPass&)> backprop;
};

// Scratch adjoints for one reverse sweep, indexed by node id. Slots are
// allocated lazily so untouched branches cost nothing.
class BackwardPass {
public:
    explicit BackwardPass(std::size_t node_count)
        : slots_(node_count), touched_(node_count, 0) {}

    Tensor& adj(const Node* n) {
        if (!touched_[n->id]) {
            slots_[n->id] = Tensor(n->value.shape);
            touched_[n->id] = 1;
        }
        return slots_[n->id];
    }

    bool touched(const Node* n) const { return touched_[n->id] != 0; }

private:
    std::vector<Tensor> slots_;
    std::vector<char> touched_;
};

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    std::size_t size() const { return nodes_.size(); }

    // Leaf without gradient tracking.
    Node* input(Tensor v) { return emplace(std::move(v), false, "input"); }

    // Leaf with gradient tracking; grads land in node->grad.
    Node* parameter(Tensor v) { return emplace(std::move(v), true, "parameter"); }

    Node* matmul(Node* a, Node* b) {
        const Tensor& A = a->value;
        const Tensor& B = b->value;
        if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
            throw DimensionError("matmul: incompatible shapes " + A.shape_str() +
                                 " and " + B.shape_str());
        const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
        Tensor out({m, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double aik = A.at(i, kk);
                if (aik == 0.0) continue;
                for (std::size_t j = 0; j < n; ++j)
                    out.at(i, j) += aik * B.at(kk, j);
            }
        Node* c = emplace(std::move(out), a->requires_grad || b->requires_grad, "matmul");
        if (c->requires_grad)
            c->backprop = [a, b, c](BackwardPass& bp) {
                const Tensor& G = bp.adj(c);
                const std::size_t m = a->value.rows(), k = a->value.cols(),
                                  n = b->value.cols();
                if (a->requires_grad) {
                    Tensor& GA = bp.adj(a);
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) {
                            const double g = G.at(i, j);
                            if (g == 0.0) continue;
                            for (std::size_t kk = 0; kk < k; ++kk)
                                GA.at(i, kk) += g * b->value.at(kk, j);
                        }
                }
                if (b->requires_grad) {
                    Tensor& GB = bp.adj(b);
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t kk = 0; kk < k; ++kk) {
                            const double av = a->value.at(i, kk);
                            if (av == 0.0) continue;
                            for (std::size_t j = 0; j < n; ++j)
                                GB.at(kk, j) += av * G.at(i, j);
                        }
                }
            };
        return c;
    }

    Node* add(Node* a, Node* b) { return binary_elementwise(a, b, "add"); }
    Node* sub(Node* a, Node* b) { return binary_elementwise(a, b, "sub"); }
    Node* mul(Node* a, Node* b) { return binary_elementwise(a, b, "mul"); }

    Node* scale(Node* a, double c) {
        Tensor out = a->value;
        for (double& v : out.data) v *= c;
        Node* r = emplace(std::move(out), a->requires_grad, "scale");
        if (r->requires_grad)
            r->backprop = [a, r, c](BackwardPass& bp) {
                const Tensor& G = bp.adj(r);
                Tensor& GA = bp.adj(a);
                for (std::size_t i = 0; i < G.data.size(); ++i)
                    GA.data[i] += c * G.data[i];
            };
        return r;
    }

    // Elementwise sum of one or more same-shape nodes.
    Node* add_list(std::vector<Node*> xs) {
        if (xs.empty()) throw UsageError("add_list: needs at least one node");
        Tensor out = xs[0]->value;
        bool rg = xs[0]->requires_grad;
        for (std::size_t i = 1; i < xs.size(); ++i) {
            if (!xs[i]->value.same_shape(out))
                throw DimensionError("add_list: shape " + xs[i]->value.shape_str() +
                                     " differs from " + out.shape_str());
            for (std::size_t k = 0; k < out.data.size(); ++k)
                out.data[k] += xs[i]->value.data[k];
            rg = rg || xs[i]->requires_grad;
        }
        Node* r = emplace(std::move(out), rg, "add_list");
        if (r->requires_grad)
            r->backprop = [xs = std::move(xs), r](BackwardPass& bp) {
                const Tensor& G = bp.adj(r);
                for (Node* x : xs) {
                    if (!x->requires_grad) continue;
                    add_into(bp.adj(x), G);
                }
            };
        return r;
    }

    // Concatenation along axis 0 or 1. Rank-1 nodes concat along axis 0 only.
    // Either side may be empty along the concat axis.
    Node* concat(Node* a, Node* b, std::size_t axis) {
        const Tensor& A = a->value;
        const Tensor& B = b->value;
        if (A.rank() != B.rank())
            throw DimensionError("concat: rank mismatch " + A.shape_str() + " vs " +
                                 B.shape_str());
        if (A.rank() != 1 && A.rank() != 2)
            throw DimensionError("concat: rank must be 1 or 2, have " + A.shape_str());
        if (axis >= A.rank())
            throw DimensionError("concat: axis " + std::to_string(axis) +
                                 " out of range for " + A.shape_str());
        const std::size_t other = 1 - axis;
        if (A.rank() == 2 && A.shape[other] != B.shape[other])
            throw DimensionError("concat: incompatible shapes " + A.shape_str() +
                                 " and " + B.shape_str() + " along axis " +
                                 std::to_string(axis));
        Tensor out;
        if (A.rank() == 1) {
            out = Tensor({A.shape[0] + B.shape[0]});
            std::copy(A.data.begin(), A.data.end(), out.data.begin());
            std::copy(B.data.begin(), B.data.end(), out.data.begin() + A.shape[0]);
        } else if (axis == 0) {
            out = Tensor({A.shape[0] + B.shape[0], A.shape[1]});
            std::copy(A.data.begin(), A.data.end(), out.data.begin());
            std::copy(B.data.begin(), B.data.end(), out.data.begin() + A.data.size());
        } else {
            out = Tensor({A.shape[0], A.shape[1] + B.shape[1]});
            for (std::size_t i = 0; i < A.shape[0]; ++i) {
                for (std::size_t j = 0; j < A.shape[1]; ++j)
                    out.at(i, j) = A.at(i, j);
                for (std::size_t j = 0; j < B.shape[1]; ++j)
                    out.at(i, A.shape[1] + j) = B.at(i, j);
            }
        }
        Node* r = emplace(std::move(out), a->requires_grad || b->requires_grad, "concat");
        if (r->requires_grad)
            r->backprop = [a, b, r, axis](BackwardPass& bp) {
                const Tensor& G = bp.adj(r);
                const Tensor& A = a->value;
                if (A.rank() == 1 || axis == 0) {
                    if (a->requires_grad) {
                        Tensor& GA = bp.adj(a);
                        for (std::size_t i = 0; i < GA.data.size(); ++i)
                            GA.data[i] += G.data[i];
                    }
                    if (b->requires_grad) {
                        Tensor& GB = bp.adj(b);
                        const std::size_t off = A.data.size();
                        for (std::size_t i = 0; i < GB.data.size(); ++i)
                            GB.data[i] += G.data[off + i];
                    }
                } else {
                    const std::size_t ca = A.shape[1];
                    if (a->requires_grad) {
                        Tensor& GA = bp.adj(a);
                        for (std::size_t i = 0; i < A.shape[0]; ++i)
                            for (std::size_t j = 0; j < ca; ++j)
                                GA.at(i, j) += G.at(i, j);
                    }
                    if (b->requires_grad) {
                        Tensor& GB = bp.adj(b);
                        for (std::size_t i = 0; i < A.shape[0]; ++i)
                            for (std::size_t j = 0; j < b->value.shape[1]; ++j)
                                GB.at(i, j) += G.at(i, ca + j);
                    }
                }
            };
        return r;
    }

    Node* activation(Activation kind, Node* x) {
        Tensor out = x->value;
        switch (kind) {
            case Activation::Tanh:
                for (double& v : out.data) v = std::tanh(v);
                break;
            case Activation::Sigmoid:
                for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
                break;
            case Activation::Relu:
                for (double& v : out.data) v = v > 0.0 ? v : 0.0;
                break;
        }
        Node* r = emplace(std::move(out), x->requires_grad, "activation");
        if (r->requires_grad)
            r->backprop = [x, r, kind](BackwardPass& bp) {
                const Tensor& G = bp.adj(r);
                Tensor& GX = bp.adj(x);
                const Tensor& Y = r->value;
                for (std::size_t i = 0; i < G.data.size(); ++i) {
                    double d = 0.0;
                    switch (kind) {
                        case Activation::Tanh:
                            d = 1.0 - Y.data[i] * Y.data[i];
                            break;
                        case Activation::Sigmoid:
                            d = Y.data[i] * (1.0 - Y.data[i]);
                            break;
                        case Activation::Relu:
                            // subgradient 0 at the kink
                            d = x->value.data[i] > 0.0 ? 1.0 : 0.0;
                            break;
                    }
                    GX.data[i] += d * G.data[i];
                }
            };
        return r;
    }

    // Per-column max over the time axis of a [T x F] matrix; ties resolve to
    // the earliest row, and only that row receives gradient.
    Node* max_over_time(Node* x) {
        const Tensor& X = x->value;
        if (X.rank() != 2)
            throw DimensionError("max_over_time: needs rank 2, have " + X.shape_str());
        const std::size_t T = X.rows(), F = X.cols();
        if (T == 0)
            throw DimensionError("max_over_time: empty time axis in " + X.shape_str());
        Tensor out({1, F});
        std::vector<std::size_t> arg(F, 0);
        for (std::size_t j = 0; j < F; ++j) {
            double best = X.at(0, j);
            std::size_t bi = 0;
            for (std::size_t i = 1; i < T; ++i)
                if (X.at(i, j) > best) {
                    best = X.at(i, j);
                    bi = i;
                }
            out.at(0, j) = best;
            arg[j] = bi;
        }
        Node* r = emplace(std::move(out), x->requires_grad, "max_over_time");
        if (r->requires_grad)
            r->backprop = [x, r, arg = std::move(arg)](BackwardPass& bp) {
                const Tensor& G = bp.adj(r);
                Tensor& GX = bp.adj(x);
                for (std::size_t j = 0; j < arg.size(); ++j)
                    GX.at(arg[j], j) += G.at(0, j);
            };
        return r;
    }

    // Numerically stable cross-entropy of softmax(logits) against one label.
    // Accepts a flat [C] or a [1 x C] logits node; produces a scalar.
    Node* softmax_cross_entropy(Node* logits, std::size_t label) {
        const Tensor& L = logits->value;
        const std::size_t C = L.numel();
        if (C == 0 || (L.rank() == 2 && L.rows() != 1) || L.rank() > 2)
            throw DimensionError("softmax_cross_entropy: logits must be [C] or [1xC], have " +
                                 L.shape_str());
        if (label >= C)
            throw InputError("softmax_cross_entropy: label " + std::to_string(label) +
                             " out of range for " + std::to_string(C) + " classes");
        const double mx = *std::max_element(L.data.begin(), L.data.end());
        double sum = 0.0;
        std::vector<double> probs(C);
        for (std::size_t i = 0; i < C; ++i) {
            probs[i] = std::exp(L.data[i] - mx);
            sum += probs[i];
        }
        for (double& p : probs) p /= sum;
        const double loss = std::log(sum) + mx - L.data[label];
        Node* r = emplace(Tensor::scalar(loss), logits->requires_grad,
                          "softmax_cross_entropy");
        if (r->requires_grad)
            r->backprop = [logits, r, label, probs = std::move(probs)](BackwardPass& bp) {
                const double g = bp.adj(r).data[0];
                Tensor& GL = bp.adj(logits);
                for (std::size_t i = 0; i < probs.size(); ++i)
                    GL.data[i] += g * (probs[i] - (i == label ? 1.0 : 0.0));
            };
        return r;
    }

    Node* sum_all(Node* x) {
        double s = std::accumulate(x->value.data.begin(), x->value.data.end(), 0.0);
        Node* r = emplace(Tensor::scalar(s), x->requires_grad, "sum_all");
        if (r->requires_grad)
            r->backprop = [x, r](BackwardPass& bp) {
                const double g = bp.adj(r).data[0];
                Tensor& GX = bp.adj(x);
                for (double& v : GX.data) v += g;
            };
        return r;
    }

    Node* sum_squares(Node* x) {
        double s = 0.0;
        for (double v : x->value.data) s += v * v;
        Node* r = emplace(Tensor::scalar(s), x->requires_grad, "sum_squares");
        if (r->requires_grad)
            r->backprop = [x, r](BackwardPass& bp) {
                const double g = bp.adj(r).data[0];
                Tensor& GX = bp.adj(x);
                for (std::size_t i = 0; i < GX.data.size(); ++i)
                    GX.data[i] += 2.0 * g * x->value.data[i];
            };
        return r;
    }

    // Mean of the first valid_rows rows of a [n x d] matrix -> [1 x d].
    Node* mean_rows(Node* x, std::size_t valid_rows) {
        const Tensor& X = x->value;
        if (X.rank() != 2)
            throw DimensionError("mean_rows: needs rank 2, have " + X.shape_str());
        if (valid_rows == 0 || valid_rows > X.rows())
            throw InputError("mean_rows: valid_rows " + std::to_string(valid_rows) +
                             " out of range for " + X.shape_str());
        const std::size_t d = X.cols();
        Tensor out({1, d});
        for (std::size_t i = 0; i < valid_rows; ++i)
            for (std::size_t j = 0; j < d; ++j)
                out.at(0, j) += X.at(i, j);
        const double inv = 1.0 / static_cast<double>(valid_rows);
        for (double& v : out.data) v *= inv;
        Node* r = emplace(std::move(out), x->requires_grad, "mean_rows");
        if (r->requires_grad)
            r->backprop = [x, r, valid_rows, inv](BackwardPass& bp) {
                const Tensor& G = bp.adj(r);
                Tensor& GX = bp.adj(x);
                const std::size_t d = x->value.cols();
                for (std::size_t i = 0; i < valid_rows; ++i)
                    for (std::size_t j = 0; j < d; ++j)
                        GX.at(i, j) += inv * G.at(0, j);
            };
        return r;
    }

    // Flattens rows [start, start+len) of a [n x d] matrix into [1 x len*d].
    // Rows at or beyond valid_rows read as zero, which realises conceptual
    // zero padding past the true sequence length.
    Node* window(Node* x, std::size_t start, std::size_t len, std::size_t valid_rows) {
        const Tensor& X = x->value;
        if (X.rank() != 2)
            throw DimensionError("window: needs rank 2, have " + X.shape_str());
        if (valid_rows > X.rows())
            throw DimensionError("window: valid_rows " + std::to_string(valid_rows) +
                                 " exceeds " + X.shape_str());
        if (len == 0) throw UsageError("window: zero-length window");
        const std::size_t d = X.cols();
        Tensor out({1, len * d});
        for (std::size_t r = 0; r < len; ++r) {
            const std::size_t src = start + r;
            if (src >= valid_rows) continue;
            for (std::size_t j = 0; j < d; ++j)
                out.data[r * d + j] = X.at(src, j);
        }
        Node* res = emplace(std::move(out), x->requires_grad, "window");
        if (res->requires_grad)
            res->backprop = [x, res, start, len, valid_rows](BackwardPass& bp) {
                const Tensor& G = bp.adj(res);
                Tensor& GX = bp.adj(x);
                const std::size_t d = x->value.cols();
                for (std::size_t r = 0; r < len; ++r) {
                    const std::size_t src = start + r;
                    if (src >= valid_rows) continue;
                    for (std::size_t j = 0; j < d; ++j)
                        GX.at(src, j) += G.data[r * d + j];
                }
            };
        return res;
    }

    // All length-h windows of a [n x d] matrix as rows of a
    // [max(valid_rows, h) - h + 1  x  h*d] matrix, zero past valid_rows.
    Node* unfold_windows(Node* x, std::size_t h, std::size_t valid_rows) {
        const Tensor& X = x->value;
        if (X.rank() != 2)
            throw DimensionError("unfold_windows: needs rank 2, have " + X.shape_str());
        if (h == 0) throw UsageError("unfold_windows: zero window width");
        if (valid_rows == 0 || valid_rows > X.rows())
            throw InputError("unfold_windows: valid_rows " + std::to_string(valid_rows) +
                             " out of range for " + X.shape_str());
        const std::size_t d = X.cols();
        const std::size_t T = std::max(valid_rows, h) - h + 1;
        Tensor out({T, h * d});
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t r = 0; r < h; ++r) {
                const std::size_t src = i + r;
                if (src >= valid_rows) continue;
                for (std::size_t j = 0; j < d; ++j)
                    out.at(i, r * d + j) = X.at(src, j);
            }
        Node* res = emplace(std::move(out), x->requires_grad, "unfold_windows");
        if (res->requires_grad)
            res->backprop = [x, res, h, valid_rows, T](BackwardPass& bp) {
                const Tensor& G = bp.adj(res);
                Tensor& GX = bp.adj(x);
                const std::size_t d = x->value.cols();
                for (std::size_t i = 0; i < T; ++i)
                    for (std::size_t r = 0; r < h; ++r) {
                        const std::size_t src = i + r;
                        if (src >= valid_rows) continue;
                        for (std::size_t j = 0; j < d; ++j)
                            GX.at(src, j) += G.at(i, r * d + j);
                    }
            };
        return res;
    }

    // Adds a [1 x F] row to every row of a [T x F] matrix.
    Node* add_row_broadcast(Node* m, Node* row) {
        const Tensor& M = m->value;
        const Tensor& R = row->value;
        if (M.rank() != 2 || R.rank() != 2 || R.rows() != 1 || R.cols() != M.cols())
            throw DimensionError("add_row_broadcast: incompatible shapes " +
                                 M.shape_str() + " and " + R.shape_str());
        Tensor out = M;
        const std::size_t T = M.rows(), F = M.cols();
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t j = 0; j < F; ++j)
                out.at(i, j) += R.at(0, j);
        Node* res = emplace(std::move(out), m->requires_grad || row->requires_grad,
                            "add_row_broadcast");
        if (res->requires_grad)
            res->backprop = [m, row, res](BackwardPass& bp) {
                const Tensor& G = bp.adj(res);
                const std::size_t T = m->value.rows(), F = m->value.cols();
                if (m->requires_grad) add_into(bp.adj(m), G);
                if (row->requires_grad) {
                    Tensor& GR = bp.adj(row);
                    for (std::size_t i = 0; i < T; ++i)
                        for (std::size_t j = 0; j < F; ++j)
                            GR.at(0, j) += G.at(i, j);
                }
            };
        return res;
    }

    // Gathers rows of an externally owned [V x d] table into [n x d]. The
    // table is not copied; gradients scatter-add into grad_sink, which must
    // match the table's shape. Row 0 is the padding row and never receives
    // gradient. Passing a null sink makes the result a constant.
    Node* embedding_lookup(const Tensor& table, std::span<const int> ids,
                           Tensor* grad_sink) {
        if (table.rank() != 2)
            throw DimensionError("embedding_lookup: table must be rank 2, have " +
                                 table.shape_str());
        const std::size_t V = table.rows(), d = table.cols();
        std::vector<int> id_copy(ids.begin(), ids.end());
        for (std::size_t i = 0; i < id_copy.size(); ++i)
            if (id_copy[i] < 0 || static_cast<std::size_t>(id_copy[i]) >= V)
                throw InputError("embedding_lookup: id " + std::to_string(id_copy[i]) +
                                 " at position " + std::to_string(i) +
                                 " out of range for vocabulary of " + std::to_string(V));
        if (grad_sink && !grad_sink->same_shape(table))
            throw DimensionError("embedding_lookup: grad sink shape " +
                                 grad_sink->shape_str() + " does not match table " +
                                 table.shape_str());
        Tensor out({id_copy.size(), d});
        for (std::size_t i = 0; i < id_copy.size(); ++i) {
            const std::size_t r = static_cast<std::size_t>(id_copy[i]);
            std::copy(table.data.begin() + r * d, table.data.begin() + (r + 1) * d,
                      out.data.begin() + i * d);
        }
        Node* res = emplace(std::move(out), grad_sink != nullptr, "embedding_lookup");
        if (res->requires_grad)
            res->backprop = [res, grad_sink, d, id_copy = std::move(id_copy)](BackwardPass& bp) {
                const Tensor& G = bp.adj(res);
                for (std::size_t i = 0; i < id_copy.size(); ++i) {
                    if (id_copy[i] == 0) continue;
                    const std::size_t r = static_cast<std::size_t>(id_copy[i]);
                    for (std::size_t j = 0; j < d; ++j)
                        grad_sink->data[r * d + j] += G.data[i * d + j];
                }
            };
        return res;
    }

    // One reverse sweep from a scalar loss. Adjoints live in per-sweep
    // buffers; each touched node's sweep adjoint is added into its
    // persistent grad before its backprop closure fires.
    void backward(Node* loss) {
        if (loss->value.numel() != 1)
            throw UsageError("backward: loss must be scalar, have " +
                             loss->value.shape_str());
        if (!loss->requires_grad) return;
        BackwardPass bp(nodes_.size());
        bp.adj(loss).data[0] = 1.0;
        for (std::size_t i = loss->id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || !bp.touched(&n)) continue;
            if (n.grad.shape.empty())
                n.grad = bp.adj(&n);
            else
                add_into(n.grad, bp.adj(&n));
            if (n.backprop) n.backprop(bp);
        }
    }

private:
    Node* emplace(Tensor value, bool requires_grad, const char* where) {
        check_finite(value, where);
        nodes_.emplace_back();
        Node& n = nodes_.back();
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.id = nodes_.size() - 1;
        return &n;
    }

    Node* binary_elementwise(Node* a, Node* b, const char* kind) {
        const Tensor& A = a->value;
        const Tensor& B = b->value;
        if (!A.same_shape(B))
            throw DimensionError(std::string(kind) + ": incompatible shapes " +
                                 A.shape_str() + " and " + B.shape_str());
        Tensor out = A;
        const bool is_add = kind[0] == 'a';
        const bool is_sub = kind[0] == 's';
        for (std::size_t i = 0; i < out.data.size(); ++i) {
            if (is_add)
                out.data[i] += B.data[i];
            else if (is_sub)
                out.data[i] -= B.data[i];
            else
                out.data[i] *= B.data[i];
        }
        Node* r = emplace(std::move(out), a->requires_grad || b->requires_grad, kind);
        if (r->requires_grad) {
            if (is_add)
                r->backprop = [a, b, r](BackwardPass& bp) {
                    const Tensor& G = bp.adj(r);
                    if (a->requires_grad) add_into(bp.adj(a), G);
                    if (b->requires_grad) add_into(bp.adj(b), G);
                };
            else if (is_sub)
                r->backprop = [a, b, r](BackwardPass& bp) {
                    const Tensor& G = bp.adj(r);
                    if (a->requires_grad) add_into(bp.adj(a), G);
                    if (b->requires_grad) {
                        Tensor& GB = bp.adj(b);
                        for (std::size_t i = 0; i < G.data.size(); ++i)
                            GB.data[i] -= G.data[i];
                    }
                };
            else
                r->backprop = [a, b, r](BackwardPass& bp) {
                    const Tensor& G = bp.adj(r);
                    if (a->requires_grad) {
                        Tensor& GA = bp.adj(a);
                        for (std::size_t i = 0; i < G.data.size(); ++i)
                            GA.data[i] += G.data[i] * b->value.data[i];
                    }
                    if (b->requires_grad) {
                        Tensor& GB = bp.adj(b);
                        for (std::size_t i = 0; i < G.data.size(); ++i)
                            GB.data[i] += G.data[i] * a->value.data[i];
                    }
                };
        }
        return r;
    }

    std::deque<Node> nodes_;
};

// Glorot-style uniform init, the default for dense weight matrices.
inline Tensor glorot_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor t({rows, cols});
    for (double& v : t.data) v = dist(rng);
    return t;
}

} // namespace biseq
