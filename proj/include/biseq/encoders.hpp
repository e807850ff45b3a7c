#pragma once

// The three sequence encoders: masked mean of embeddings, recurrent (GRU or
// LSTM) last-state encoding, and multi-width convolution with relu and
// max-over-time pooling. All of them consume an embedded [n x d] node plus a
// mask and produce a [1 x d_enc] row.

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "biseq/error.hpp"
#include "biseq/tensor.hpp"

namespace biseq {

// Valid positions form a contiguous prefix; padding only ever trails.
class Mask {
public:
    Mask() = default;

    explicit Mask(const std::vector<bool>& flags) : total_(flags.size()) {
        std::size_t v = 0;
        while (v < flags.size() && flags[v]) ++v;
        for (std::size_t i = v; i < flags.size(); ++i)
            if (flags[i])
                throw InputError("mask: valid positions must form a contiguous prefix "
                                 "(position " + std::to_string(i) + " follows padding)");
        valid_ = v;
    }

    static Mask prefix(std::size_t valid, std::size_t total) {
        if (valid > total)
            throw InputError("mask: " + std::to_string(valid) +
                             " valid positions exceed length " + std::to_string(total));
        Mask m;
        m.valid_ = valid;
        m.total_ = total;
        return m;
    }

    static Mask all(std::size_t n) { return prefix(n, n); }

    std::size_t valid() const { return valid_; }
    std::size_t size() const { return total_; }
    bool at(std::size_t i) const { return i < valid_; }

private:
    std::size_t valid_ = 0;
    std::size_t total_ = 0;
};

enum class CellKind { Gru, Lstm };

inline std::string to_string(CellKind k) {
    return k == CellKind::Gru ? "gru" : "lstm";
}

inline CellKind parse_cell(std::string_view s) {
    if (s == "gru") return CellKind::Gru;
    if (s == "lstm") return CellKind::Lstm;
    throw ConfigError("unknown cell '" + std::string(s) + "' (expected gru or lstm)");
}

enum class EncoderKind { Cbow, Rnn, Cnn, None };

inline std::string to_string(EncoderKind k) {
    switch (k) {
        case EncoderKind::Cbow: return "cbow";
        case EncoderKind::Rnn: return "rnn";
        case EncoderKind::Cnn: return "cnn";
        case EncoderKind::None: return "none";
    }
    return "?";
}

inline EncoderKind parse_encoder(std::string_view s) {
    if (s == "cbow") return EncoderKind::Cbow;
    if (s == "rnn") return EncoderKind::Rnn;
    if (s == "cnn") return EncoderKind::Cnn;
    if (s == "none") return EncoderKind::None;
    throw ConfigError("unknown encoder '" + std::string(s) +
                      "' (expected cbow, rnn, cnn or none)");
}

// An encoded sequence: a [1 x d_enc] node plus which encoder produced it.
struct EncodedVector {
    Node* value = nullptr;
    EncoderKind encoder = EncoderKind::None;
    std::size_t dim() const { return value->value.cols(); }
};

// Gate order is z, r, h for GRU and i, f, o, g for LSTM.
struct RnnParams {
    CellKind kind = CellKind::Gru;
    std::size_t input_dim = 0;
    std::size_t state_dim = 0;
    std::vector<Tensor> w; // per gate, [input_dim x state_dim]
    std::vector<Tensor> u; // per gate, [state_dim x state_dim]
    std::vector<Tensor> b; // per gate, [1 x state_dim]

    std::size_t gates() const { return kind == CellKind::Gru ? 3 : 4; }

    static const char* gate_name(CellKind kind, std::size_t i) {
        static const char* gru[] = {"z", "r", "h"};
        static const char* lstm[] = {"i", "f", "o", "g"};
        return kind == CellKind::Gru ? gru[i] : lstm[i];
    }

    static RnnParams init(CellKind kind, std::size_t input_dim, std::size_t state_dim,
                          std::mt19937_64& rng) {
        if (input_dim == 0 || state_dim == 0)
            throw ConfigError("rnn: input and state dimensions must be positive");
        RnnParams p;
        p.kind = kind;
        p.input_dim = input_dim;
        p.state_dim = state_dim;
        for (std::size_t i = 0; i < p.gates(); ++i) {
            p.w.push_back(glorot_uniform(input_dim, state_dim, rng));
            p.u.push_back(glorot_uniform(state_dim, state_dim, rng));
            p.b.push_back(Tensor({1, state_dim}));
        }
        return p;
    }
};

struct CnnParams {
    std::vector<int> windows; // strictly ascending widths
    std::size_t num_filters = 0;
    std::size_t input_dim = 0;
    std::vector<Tensor> filters; // per window, [h*input_dim x num_filters]
    std::vector<Tensor> biases;  // per window, [1 x num_filters]

    std::size_t output_dim() const { return windows.size() * num_filters; }

    static CnnParams init(std::vector<int> windows, std::size_t num_filters,
                          std::size_t input_dim, std::mt19937_64& rng) {
        if (windows.empty())
            throw ConfigError("cnn: needs at least one window width");
        for (std::size_t i = 0; i < windows.size(); ++i) {
            if (windows[i] < 1)
                throw ConfigError("cnn: window widths must be positive");
            if (i && windows[i] <= windows[i - 1])
                throw ConfigError("cnn: window widths must be strictly ascending");
        }
        if (num_filters == 0 || input_dim == 0)
            throw ConfigError("cnn: filter count and input dimension must be positive");
        CnnParams p;
        p.windows = std::move(windows);
        p.num_filters = num_filters;
        p.input_dim = input_dim;
        for (int h : p.windows) {
            p.filters.push_back(glorot_uniform(static_cast<std::size_t>(h) * input_dim,
                                               num_filters, rng));
            p.biases.push_back(Tensor({1, num_filters}));
        }
        return p;
    }
};

// Parameters bound onto a graph as leaf nodes.
struct RnnLeaves {
    CellKind kind = CellKind::Gru;
    std::size_t input_dim = 0;
    std::size_t state_dim = 0;
    std::vector<Node*> w, u, b;
};

inline RnnLeaves bind_rnn(Graph& g, const RnnParams& p, bool trainable) {
    RnnLeaves l;
    l.kind = p.kind;
    l.input_dim = p.input_dim;
    l.state_dim = p.state_dim;
    for (std::size_t i = 0; i < p.gates(); ++i) {
        l.w.push_back(trainable ? g.parameter(p.w[i]) : g.input(p.w[i]));
        l.u.push_back(trainable ? g.parameter(p.u[i]) : g.input(p.u[i]));
        l.b.push_back(trainable ? g.parameter(p.b[i]) : g.input(p.b[i]));
    }
    return l;
}

struct CnnLeaves {
    std::vector<int> windows;
    std::size_t num_filters = 0;
    std::size_t input_dim = 0;
    std::vector<Node*> filters, biases;
};

inline CnnLeaves bind_cnn(Graph& g, const CnnParams& p, bool trainable) {
    CnnLeaves l;
    l.windows = p.windows;
    l.num_filters = p.num_filters;
    l.input_dim = p.input_dim;
    for (std::size_t i = 0; i < p.windows.size(); ++i) {
        l.filters.push_back(trainable ? g.parameter(p.filters[i]) : g.input(p.filters[i]));
        l.biases.push_back(trainable ? g.parameter(p.biases[i]) : g.input(p.biases[i]));
    }
    return l;
}

namespace detail {

inline void check_step_dims(const char* who, Node* x, Node* s, const RnnLeaves& p) {
    if (x->value.rank() != 2 || x->value.rows() != 1 ||
        x->value.cols() != p.input_dim)
        throw DimensionError(std::string(who) + ": input " + x->value.shape_str() +
                             " does not match expected [1x" +
                             std::to_string(p.input_dim) + "]");
    if (s->value.rank() != 2 || s->value.rows() != 1 ||
        s->value.cols() != p.state_dim)
        throw DimensionError(std::string(who) + ": state " + s->value.shape_str() +
                             " does not match expected [1x" +
                             std::to_string(p.state_dim) + "]");
}

inline Node* gate_preact(Graph& g, Node* x, Node* s, const RnnLeaves& p, std::size_t i) {
    return g.add(g.add(g.matmul(x, p.w[i]), g.matmul(s, p.u[i])), p.b[i]);
}

} // namespace detail

// One GRU step:
//   z = sigmoid(x Wz + s Uz + bz)
//   r = sigmoid(x Wr + s Ur + br)
//   c = tanh(x Wh + (r * s) Uh + bh)
//   s' = (1 - z) * s + z * c
inline Node* step_gru(Graph& g, Node* x, Node* s_prev, const RnnLeaves& p) {
    if (p.kind != CellKind::Gru) throw UsageError("step_gru: parameters are not a GRU");
    detail::check_step_dims("step_gru", x, s_prev, p);
    Node* z = g.activation(Activation::Sigmoid, detail::gate_preact(g, x, s_prev, p, 0));
    Node* r = g.activation(Activation::Sigmoid, detail::gate_preact(g, x, s_prev, p, 1));
    Node* rs = g.mul(r, s_prev);
    Node* cand = g.activation(
        Activation::Tanh,
        g.add(g.add(g.matmul(x, p.w[2]), g.matmul(rs, p.u[2])), p.b[2]));
    Node* ones = g.input(Tensor::full({1, p.state_dim}, 1.0));
    return g.add(g.mul(g.sub(ones, z), s_prev), g.mul(z, cand));
}

// One LSTM step returning (state, cell):
//   i, f, o = sigmoid gates, t = tanh(x Wg + s Ug + bg)
//   c' = f * c + i * t
//   s' = o * tanh(c')
inline std::pair<Node*, Node*> step_lstm(Graph& g, Node* x, Node* s_prev, Node* c_prev,
                                         const RnnLeaves& p) {
    if (p.kind != CellKind::Lstm) throw UsageError("step_lstm: parameters are not an LSTM");
    detail::check_step_dims("step_lstm", x, s_prev, p);
    if (c_prev->value.rank() != 2 || c_prev->value.rows() != 1 ||
        c_prev->value.cols() != p.state_dim)
        throw DimensionError("step_lstm: cell " + c_prev->value.shape_str() +
                             " does not match expected [1x" +
                             std::to_string(p.state_dim) + "]");
    Node* i = g.activation(Activation::Sigmoid, detail::gate_preact(g, x, s_prev, p, 0));
    Node* f = g.activation(Activation::Sigmoid, detail::gate_preact(g, x, s_prev, p, 1));
    Node* o = g.activation(Activation::Sigmoid, detail::gate_preact(g, x, s_prev, p, 2));
    Node* t = g.activation(Activation::Tanh, detail::gate_preact(g, x, s_prev, p, 3));
    Node* c = g.add(g.mul(f, c_prev), g.mul(i, t));
    Node* s = g.mul(o, g.activation(Activation::Tanh, c));
    return {s, c};
}

// Mean of the unmasked embedding rows.
inline EncodedVector encode_cbow(Graph& g, Node* embedded, const Mask& mask) {
    const Tensor& X = embedded->value;
    if (X.rank() != 2)
        throw DimensionError("encode_cbow: embedded input must be rank 2, have " +
                             X.shape_str());
    if (mask.size() != X.rows())
        throw DimensionError("encode_cbow: mask covers " + std::to_string(mask.size()) +
                             " positions but input has " + std::to_string(X.rows()));
    if (mask.valid() == 0)
        throw InputError("encode_cbow: sequence is entirely padding");
    return {g.mean_rows(embedded, mask.valid()), EncoderKind::Cbow};
}

// Runs the cell over the unmasked prefix and returns the final state.
// init_state seeds the hidden state (for an LSTM only the hidden state; the
// cell state always starts at zero). aux_input, when given, is concatenated
// onto every step's input.
inline EncodedVector encode_rnn(Graph& g, Node* embedded, const Mask& mask,
                                const RnnLeaves& p, Node* init_state = nullptr,
                                Node* aux_input = nullptr) {
    const Tensor& X = embedded->value;
    if (X.rank() != 2)
        throw DimensionError("encode_rnn: embedded input must be rank 2, have " +
                             X.shape_str());
    if (mask.size() != X.rows())
        throw DimensionError("encode_rnn: mask covers " + std::to_string(mask.size()) +
                             " positions but input has " + std::to_string(X.rows()));
    const std::size_t L = mask.valid();
    if (L == 0) throw InputError("encode_rnn: sequence is entirely padding");
    const std::size_t d = X.cols();
    const std::size_t aux_dim =
        aux_input ? aux_input->value.cols() : 0;
    if (aux_input &&
        (aux_input->value.rank() != 2 || aux_input->value.rows() != 1))
        throw DimensionError("encode_rnn: auxiliary input must be [1 x d], have " +
                             aux_input->value.shape_str());
    if (d + aux_dim != p.input_dim)
        throw DimensionError("encode_rnn: step input dimension " +
                             std::to_string(d + aux_dim) + " does not match cell's " +
                             std::to_string(p.input_dim));
    Node* s = init_state ? init_state : g.input(Tensor({1, p.state_dim}));
    if (s->value.rank() != 2 || s->value.rows() != 1 ||
        s->value.cols() != p.state_dim)
        throw DimensionError("encode_rnn: initial state " + s->value.shape_str() +
                             " does not match expected [1x" +
                             std::to_string(p.state_dim) + "]");
    Node* c = p.kind == CellKind::Lstm ? g.input(Tensor({1, p.state_dim})) : nullptr;
    for (std::size_t t = 0; t < L; ++t) {
        Node* x = g.window(embedded, t, 1, L);
        if (aux_input) x = g.concat(x, aux_input, 1);
        if (p.kind == CellKind::Gru) {
            s = step_gru(g, x, s, p);
        } else {
            auto [ns, nc] = step_lstm(g, x, s, c, p);
            s = ns;
            c = nc;
        }
    }
    return {s, EncoderKind::Rnn};
}

// Narrow convolution per window width with relu and max-over-time pooling,
// pooled vectors concatenated across widths. Sequences shorter than a width
// are conceptually zero-padded up to it, so there is always at least one
// window position.
inline EncodedVector encode_cnn(Graph& g, Node* embedded, const Mask& mask,
                                const CnnLeaves& p) {
    const Tensor& X = embedded->value;
    if (X.rank() != 2)
        throw DimensionError("encode_cnn: embedded input must be rank 2, have " +
                             X.shape_str());
    if (mask.size() != X.rows())
        throw DimensionError("encode_cnn: mask covers " + std::to_string(mask.size()) +
                             " positions but input has " + std::to_string(X.rows()));
    if (mask.valid() == 0)
        throw InputError("encode_cnn: sequence is entirely padding");
    if (X.cols() != p.input_dim)
        throw DimensionError("encode_cnn: embedding dimension " +
                             std::to_string(X.cols()) + " does not match filters' " +
                             std::to_string(p.input_dim));
    Node* out = nullptr;
    for (std::size_t wi = 0; wi < p.windows.size(); ++wi) {
        const std::size_t h = static_cast<std::size_t>(p.windows[wi]);
        Node* unfolded = g.unfold_windows(embedded, h, mask.valid());
        Node* resp = g.add_row_broadcast(g.matmul(unfolded, p.filters[wi]), p.biases[wi]);
        Node* pooled = g.max_over_time(g.activation(Activation::Relu, resp));
        out = out ? g.concat(out, pooled, 1) : pooled;
    }
    return {out, EncoderKind::Cnn};
}

} // namespace biseq
