#pragma once

// Architecture specs, their validation and enumeration, and the combined
// model: context and target encoders joined by one of six combination
// schemes into class logits.
//
//   concat                  encode both sides, concatenate, affine head
//   bilinear                one score x^T W_c y per class, optional bias
//   conditional_state       context vector seeds the target RNN state
//   conditional_input       context vector rides along every target step
//   conditional_state_input both of the above
//   concat_sentence         one RNN over context <sep> target
//
// The conditional_* schemes require an RNN target; the state-seeding ones
// additionally require the context output dimension to equal the RNN size.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "biseq/embed.hpp"
#include "biseq/encoders.hpp"
#include "biseq/error.hpp"
#include "biseq/tensor.hpp"
#include "biseq/util.hpp"

namespace biseq {

enum class Combination {
    Concat,
    Bilinear,
    ConditionalState,
    ConditionalInput,
    ConditionalStateInput,
    ConcatSentence,
};

inline std::string to_string(Combination c) {
    switch (c) {
        case Combination::Concat: return "concat";
        case Combination::Bilinear: return "bilinear";
        case Combination::ConditionalState: return "conditional_state";
        case Combination::ConditionalInput: return "conditional_input";
        case Combination::ConditionalStateInput: return "conditional_state_input";
        case Combination::ConcatSentence: return "concat_sentence";
    }
    return "?";
}

inline Combination parse_combination(std::string_view s) {
    if (s == "concat") return Combination::Concat;
    if (s == "bilinear") return Combination::Bilinear;
    if (s == "conditional_state") return Combination::ConditionalState;
    if (s == "conditional_input") return Combination::ConditionalInput;
    if (s == "conditional_state_input") return Combination::ConditionalStateInput;
    if (s == "concat_sentence") return Combination::ConcatSentence;
    throw ConfigError("unknown combination '" + std::string(s) + "'");
}

struct ModelSpec {
    Combination combination = Combination::Concat;
    EncoderKind context_encoder = EncoderKind::Rnn;
    EncoderKind target_encoder = EncoderKind::Rnn;
    CellKind cell = CellKind::Gru;
    std::size_t rnn_size = 48;
    std::vector<int> filter_windows = {3, 4, 5};
    std::size_t num_filters = 16;
    double l2_coeff = 0.0;
    double learning_rate = 0.001;
    std::size_t num_classes = 2;
    std::size_t max_ctx_len = 60;
    std::size_t max_tgt_len = 60;
    std::uint64_t seed = 1;
    bool bilinear_bias = true;

    bool is_conditional() const {
        return combination == Combination::ConditionalState ||
               combination == Combination::ConditionalInput ||
               combination == Combination::ConditionalStateInput;
    }

    bool seeds_state() const {
        return combination == Combination::ConditionalState ||
               combination == Combination::ConditionalStateInput;
    }

    bool feeds_input() const {
        return combination == Combination::ConditionalInput ||
               combination == Combination::ConditionalStateInput;
    }

    bool uses_rnn() const {
        return combination == Combination::ConcatSentence ||
               context_encoder == EncoderKind::Rnn ||
               target_encoder == EncoderKind::Rnn;
    }

    bool uses_cnn() const {
        return context_encoder == EncoderKind::Cnn ||
               target_encoder == EncoderKind::Cnn;
    }

    std::size_t cnn_output_dim() const { return num_filters * filter_windows.size(); }

    std::size_t context_dim(std::size_t embed_dim) const {
        switch (context_encoder) {
            case EncoderKind::Cbow: return embed_dim;
            case EncoderKind::Rnn: return rnn_size;
            case EncoderKind::Cnn: return cnn_output_dim();
            case EncoderKind::None: return 0;
        }
        return 0;
    }

    std::size_t target_dim() const {
        return target_encoder == EncoderKind::Cnn ? cnn_output_dim() : rnn_size;
    }

    std::string windows_str() const {
        std::vector<std::string> parts;
        for (int w : filter_windows) parts.push_back(std::to_string(w));
        return join(parts, "+");
    }

    // Flat key-value line with only the keys the architecture uses, e.g.
    //   combination=concat context=rnn target=cnn cell=lstm rnn_size=200
    //   windows=3+4+5 filters=20 l2=0 lr=0.001 classes=2 ...
    std::string serialize() const {
        std::string s = "combination=" + biseq::to_string(combination) +
                        " context=" + biseq::to_string(context_encoder) +
                        " target=" + biseq::to_string(target_encoder);
        if (uses_rnn())
            s += " cell=" + biseq::to_string(cell) +
                 " rnn_size=" + std::to_string(rnn_size);
        if (uses_cnn())
            s += " windows=" + windows_str() +
                 " filters=" + std::to_string(num_filters) +
                 " l2=" + format_double(l2_coeff);
        s += " lr=" + format_double(learning_rate) +
             " classes=" + std::to_string(num_classes) +
             " max_ctx=" + std::to_string(max_ctx_len) +
             " max_tgt=" + std::to_string(max_tgt_len) +
             " seed=" + std::to_string(seed);
        if (combination == Combination::Bilinear && !bilinear_bias)
            s += " bilinear_bias=0";
        return s;
    }

    static std::vector<int> parse_windows(std::string_view s) {
        std::vector<int> out;
        for (const std::string& part : split(s, '+'))
            out.push_back(static_cast<int>(parse_int(part, "windows")));
        return out;
    }

    static ModelSpec deserialize(std::string_view line, const ModelSpec& defaults) {
        ModelSpec spec = defaults;
        for (const std::string& tok : split(line, ' ')) {
            if (trim(tok).empty()) continue;
            const std::size_t eq = tok.find('=');
            if (eq == std::string::npos)
                throw ParseError("model spec: expected key=value, got '" + tok + "'");
            const std::string key = tok.substr(0, eq);
            const std::string val = tok.substr(eq + 1);
            if (key == "combination") spec.combination = parse_combination(val);
            else if (key == "context") spec.context_encoder = parse_encoder(val);
            else if (key == "target") spec.target_encoder = parse_encoder(val);
            else if (key == "cell") spec.cell = parse_cell(val);
            else if (key == "rnn_size") spec.rnn_size = static_cast<std::size_t>(parse_int(val, key));
            else if (key == "windows") spec.filter_windows = parse_windows(val);
            else if (key == "filters") spec.num_filters = static_cast<std::size_t>(parse_int(val, key));
            else if (key == "l2") spec.l2_coeff = parse_double(val, key);
            else if (key == "lr") spec.learning_rate = parse_double(val, key);
            else if (key == "classes") spec.num_classes = static_cast<std::size_t>(parse_int(val, key));
            else if (key == "max_ctx") spec.max_ctx_len = static_cast<std::size_t>(parse_int(val, key));
            else if (key == "max_tgt") spec.max_tgt_len = static_cast<std::size_t>(parse_int(val, key));
            else if (key == "seed") spec.seed = static_cast<std::uint64_t>(parse_int(val, key));
            else if (key == "bilinear_bias") spec.bilinear_bias = parse_int(val, key) != 0;
            else throw ParseError("model spec: unknown key '" + key + "'");
        }
        return spec;
    }

    static ModelSpec deserialize(std::string_view line) {
        return deserialize(line, ModelSpec{});
    }
};

// Collects every rule violation; an empty result means the spec is valid.
inline std::vector<std::string> validate_spec(const ModelSpec& s) {
    std::vector<std::string> v;
    if (s.num_classes < 2) v.push_back("num_classes must be at least 2");
    if (!(s.learning_rate > 0)) v.push_back("learning rate must be positive");
    if (s.l2_coeff < 0) v.push_back("l2 coefficient must be non-negative");
    if (s.max_ctx_len == 0) v.push_back("max context length must be positive");
    if (s.max_tgt_len == 0) v.push_back("max target length must be positive");

    if (s.combination == Combination::ConcatSentence) {
        if (s.context_encoder != EncoderKind::None ||
            s.target_encoder != EncoderKind::None)
            v.push_back("concat_sentence uses a single shared recurrent encoder; "
                        "context and target encoders must be 'none'");
    } else if (s.is_conditional()) {
        if (s.target_encoder != EncoderKind::Rnn)
            v.push_back("conditional combinations require an rnn target encoder");
        if (s.context_encoder != EncoderKind::Rnn &&
            s.context_encoder != EncoderKind::Cnn)
            v.push_back("conditional combinations require an rnn or cnn context "
                        "encoder (cbow cannot feed a recurrent state)");
        if (s.seeds_state() && s.context_encoder == EncoderKind::Cnn &&
            s.cnn_output_dim() != s.rnn_size)
            v.push_back("state-seeding combinations need the context output "
                        "dimension (filters x windows = " +
                        std::to_string(s.cnn_output_dim()) +
                        ") to equal rnn_size (" + std::to_string(s.rnn_size) + ")");
    } else {
        if (s.context_encoder == EncoderKind::None)
            v.push_back(biseq::to_string(s.combination) +
                        " requires a cbow, rnn or cnn context encoder");
        if (s.target_encoder != EncoderKind::Rnn &&
            s.target_encoder != EncoderKind::Cnn)
            v.push_back(biseq::to_string(s.combination) +
                        " requires an rnn or cnn target encoder");
    }

    if (s.uses_rnn() && s.rnn_size == 0)
        v.push_back("rnn_size must be positive");
    if (s.uses_cnn()) {
        if (s.filter_windows.empty())
            v.push_back("cnn encoders need at least one window width");
        for (std::size_t i = 0; i < s.filter_windows.size(); ++i) {
            if (s.filter_windows[i] < 1) {
                v.push_back("cnn window widths must be positive");
                break;
            }
            if (i && s.filter_windows[i] <= s.filter_windows[i - 1]) {
                v.push_back("cnn window widths must be strictly ascending");
                break;
            }
        }
        if (s.num_filters == 0) v.push_back("cnn filter count must be positive");
    }
    return v;
}

inline void require_valid(const ModelSpec& s) {
    const auto v = validate_spec(s);
    if (!v.empty()) {
        std::string msg = "invalid model spec:";
        for (const auto& m : v) msg += "\n  - " + m;
        throw ConfigError(msg);
    }
}

// All nineteen architectures, derived from a base spec: six combination
// schemes crossed with their admissible encoder pairs. For state-seeding
// combinations with a cnn context, the filter count is adjusted to
// rnn_size / |windows| so the context vector fits the recurrent state.
inline std::vector<ModelSpec> enumerate_architectures(const ModelSpec& base) {
    std::vector<ModelSpec> out;
    const EncoderKind ctxs[] = {EncoderKind::Cbow, EncoderKind::Rnn, EncoderKind::Cnn};
    const EncoderKind tgts[] = {EncoderKind::Rnn, EncoderKind::Cnn};
    for (Combination comb : {Combination::Concat, Combination::Bilinear})
        for (EncoderKind c : ctxs)
            for (EncoderKind t : tgts) {
                ModelSpec s = base;
                s.combination = comb;
                s.context_encoder = c;
                s.target_encoder = t;
                out.push_back(s);
            }
    for (Combination comb : {Combination::ConditionalState, Combination::ConditionalInput,
                             Combination::ConditionalStateInput})
        for (EncoderKind c : {EncoderKind::Rnn, EncoderKind::Cnn}) {
            ModelSpec s = base;
            s.combination = comb;
            s.context_encoder = c;
            s.target_encoder = EncoderKind::Rnn;
            if (s.seeds_state() && c == EncoderKind::Cnn) {
                const std::size_t w = s.filter_windows.size();
                if (w == 0 || s.rnn_size % w != 0)
                    throw ConfigError(
                        "cannot derive a state-seeding cnn context: rnn_size " +
                        std::to_string(s.rnn_size) + " is not divisible by " +
                        std::to_string(w) + " window widths");
                s.num_filters = s.rnn_size / w;
            }
            out.push_back(s);
        }
    {
        ModelSpec s = base;
        s.combination = Combination::ConcatSentence;
        s.context_encoder = EncoderKind::None;
        s.target_encoder = EncoderKind::None;
        out.push_back(s);
    }
    for (const ModelSpec& s : out) require_valid(s);
    return out;
}

// One [d_ctx x d_tgt] matrix per class plus an optional scalar bias each.
struct BilinearParams {
    std::vector<Tensor> w;
    std::vector<Tensor> bias; // [1] scalars, present only when use_bias
    bool use_bias = true;

    static BilinearParams init(std::size_t classes, std::size_t d_ctx,
                               std::size_t d_tgt, bool use_bias,
                               std::mt19937_64& rng) {
        BilinearParams p;
        p.use_bias = use_bias;
        for (std::size_t c = 0; c < classes; ++c) {
            p.w.push_back(glorot_uniform(d_ctx, d_tgt, rng));
            if (use_bias) p.bias.push_back(Tensor({1}));
        }
        return p;
    }
};

struct ClassifierHead {
    Tensor weight; // [d_feat x classes]
    Tensor bias;   // [1 x classes]

    static ClassifierHead init(std::size_t d_feat, std::size_t classes,
                               std::mt19937_64& rng) {
        return {glorot_uniform(d_feat, classes, rng), Tensor({1, classes})};
    }
};

struct ParamRef {
    std::string name;
    Tensor* tensor = nullptr;
    bool is_cnn_filter = false; // only these receive the l2 penalty
};

struct Model {
    ModelSpec spec;
    Vocabulary vocab;
    EmbeddingTable embedding;
    std::optional<RnnParams> context_rnn;
    std::optional<CnnParams> context_cnn;
    std::optional<RnnParams> target_rnn;
    std::optional<CnnParams> target_cnn;
    std::optional<BilinearParams> bilinear;
    std::optional<ClassifierHead> head;

    std::size_t embed_dim() const { return embedding.dim(); }

    // Parameter construction order is fixed (context, target, combiner) so a
    // given seed always yields bit-identical weights.
    static Model init(const ModelSpec& spec, Vocabulary vocab, EmbeddingTable emb,
                      std::mt19937_64& rng) {
        require_valid(spec);
        Model m;
        m.spec = spec;
        m.vocab = std::move(vocab);
        m.embedding = std::move(emb);
        const std::size_t d_x = m.embedding.dim();

        if (spec.combination == Combination::ConcatSentence) {
            m.target_rnn = RnnParams::init(spec.cell, d_x, spec.rnn_size, rng);
            m.head = ClassifierHead::init(spec.rnn_size, spec.num_classes, rng);
            return m;
        }

        switch (spec.context_encoder) {
            case EncoderKind::Cbow:
            case EncoderKind::None:
                break;
            case EncoderKind::Rnn:
                m.context_rnn = RnnParams::init(spec.cell, d_x, spec.rnn_size, rng);
                break;
            case EncoderKind::Cnn:
                m.context_cnn = CnnParams::init(spec.filter_windows, spec.num_filters,
                                                d_x, rng);
                break;
        }
        const std::size_t d_ctx = spec.context_dim(d_x);

        if (spec.is_conditional()) {
            const std::size_t step_in = d_x + (spec.feeds_input() ? d_ctx : 0);
            m.target_rnn = RnnParams::init(spec.cell, step_in, spec.rnn_size, rng);
            m.head = ClassifierHead::init(spec.rnn_size, spec.num_classes, rng);
            return m;
        }

        if (spec.target_encoder == EncoderKind::Rnn)
            m.target_rnn = RnnParams::init(spec.cell, d_x, spec.rnn_size, rng);
        else
            m.target_cnn = CnnParams::init(spec.filter_windows, spec.num_filters,
                                           d_x, rng);
        const std::size_t d_tgt = spec.target_dim();

        if (spec.combination == Combination::Concat)
            m.head = ClassifierHead::init(d_ctx + d_tgt, spec.num_classes, rng);
        else
            m.bilinear = BilinearParams::init(spec.num_classes, d_ctx, d_tgt,
                                              spec.bilinear_bias, rng);
        return m;
    }

    template <class F>
    void for_each_param(F&& f) {
        if (embedding.trainable)
            f("embedding", embedding.matrix, false);
        const auto visit_rnn = [&](const char* prefix, RnnParams& p) {
            for (std::size_t i = 0; i < p.gates(); ++i) {
                const std::string gate = RnnParams::gate_name(p.kind, i);
                f(std::string(prefix) + ".w_" + gate, p.w[i], false);
                f(std::string(prefix) + ".u_" + gate, p.u[i], false);
                f(std::string(prefix) + ".b_" + gate, p.b[i], false);
            }
        };
        const auto visit_cnn = [&](const char* prefix, CnnParams& p) {
            for (std::size_t i = 0; i < p.windows.size(); ++i) {
                const std::string w = std::to_string(p.windows[i]);
                f(std::string(prefix) + ".filter_" + w, p.filters[i], true);
                f(std::string(prefix) + ".bias_" + w, p.biases[i], false);
            }
        };
        if (context_rnn) visit_rnn("ctx_rnn", *context_rnn);
        if (context_cnn) visit_cnn("ctx_cnn", *context_cnn);
        if (target_rnn) visit_rnn("tgt_rnn", *target_rnn);
        if (target_cnn) visit_cnn("tgt_cnn", *target_cnn);
        if (bilinear) {
            for (std::size_t c = 0; c < bilinear->w.size(); ++c)
                f("bilinear.w" + std::to_string(c), bilinear->w[c], false);
            for (std::size_t c = 0; c < bilinear->bias.size(); ++c)
                f("bilinear.b" + std::to_string(c), bilinear->bias[c], false);
        }
        if (head) {
            f("head.weight", head->weight, false);
            f("head.bias", head->bias, false);
        }
    }

    std::vector<ParamRef> params() {
        std::vector<ParamRef> out;
        for_each_param([&](const std::string& name, Tensor& t, bool is_filter) {
            out.push_back({name, &t, is_filter});
        });
        return out;
    }
};

// Structural consistency of an instantiated model against its spec.
inline std::vector<std::string> validate_model(Model& m) {
    std::vector<std::string> v;
    const auto spec_v = validate_spec(m.spec);
    v.insert(v.end(), spec_v.begin(), spec_v.end());
    if (m.embedding.vocab_size() != m.vocab.size())
        v.push_back("embedding table rows (" + std::to_string(m.embedding.vocab_size()) +
                    ") do not match vocabulary size (" + std::to_string(m.vocab.size()) + ")");
    for (std::size_t c = 0; c < m.embedding.dim(); ++c)
        if (m.embedding.matrix.at(0, c) != 0.0) {
            v.push_back("padding row of the embedding table must be zero");
            break;
        }
    if (m.bilinear && m.bilinear->w.size() != m.spec.num_classes)
        v.push_back("bilinear combination must hold exactly " +
                    std::to_string(m.spec.num_classes) + " matrices, found " +
                    std::to_string(m.bilinear->w.size()));
    if (m.bilinear && m.bilinear->use_bias &&
        m.bilinear->bias.size() != m.spec.num_classes)
        v.push_back("bilinear combination must hold exactly " +
                    std::to_string(m.spec.num_classes) + " biases, found " +
                    std::to_string(m.bilinear->bias.size()));
    const std::size_t d_ctx = m.spec.context_dim(m.embedding.dim());
    if (m.bilinear)
        for (std::size_t c = 0; c < m.bilinear->w.size(); ++c)
            if (m.bilinear->w[c].rows() != d_ctx ||
                m.bilinear->w[c].cols() != m.spec.target_dim())
                v.push_back("bilinear matrix " + std::to_string(c) + " has shape " +
                            m.bilinear->w[c].shape_str() + ", expected [" +
                            std::to_string(d_ctx) + "x" +
                            std::to_string(m.spec.target_dim()) + "]");
    if (m.head && m.head->weight.cols() != m.spec.num_classes)
        v.push_back("classifier head emits " + std::to_string(m.head->weight.cols()) +
                    " logits for " + std::to_string(m.spec.num_classes) + " classes");
    return v;
}

// A model's parameters materialised as leaf nodes on one graph, in
// for_each_param order. The embedding stays external; its gradient flows
// into embed_sink when one is supplied.
struct ModelBinding {
    Model* model = nullptr;
    Graph* graph = nullptr;
    Tensor* embed_sink = nullptr;
    bool trainable = false;
    std::vector<std::pair<ParamRef, Node*>> leaves; // embedding excluded
    std::optional<RnnLeaves> ctx_rnn, tgt_rnn;
    std::optional<CnnLeaves> ctx_cnn, tgt_cnn;
    std::vector<Node*> bilinear_w, bilinear_b;
    Node* head_weight = nullptr;
    Node* head_bias = nullptr;
};

inline ModelBinding bind_model(Graph& g, Model& m, Tensor* embed_sink) {
    ModelBinding b;
    b.model = &m;
    b.graph = &g;
    b.embed_sink = embed_sink;
    b.trainable = embed_sink != nullptr;
    const auto leaf = [&](const std::string& name, Tensor& t, bool is_filter) {
        Node* n = b.trainable ? g.parameter(t) : g.input(t);
        b.leaves.push_back({ParamRef{name, &t, is_filter}, n});
        return n;
    };
    const auto bind_rnn_part = [&](const char* prefix, RnnParams& p) {
        RnnLeaves l;
        l.kind = p.kind;
        l.input_dim = p.input_dim;
        l.state_dim = p.state_dim;
        for (std::size_t i = 0; i < p.gates(); ++i) {
            const std::string gate = RnnParams::gate_name(p.kind, i);
            l.w.push_back(leaf(std::string(prefix) + ".w_" + gate, p.w[i], false));
            l.u.push_back(leaf(std::string(prefix) + ".u_" + gate, p.u[i], false));
            l.b.push_back(leaf(std::string(prefix) + ".b_" + gate, p.b[i], false));
        }
        return l;
    };
    const auto bind_cnn_part = [&](const char* prefix, CnnParams& p) {
        CnnLeaves l;
        l.windows = p.windows;
        l.num_filters = p.num_filters;
        l.input_dim = p.input_dim;
        for (std::size_t i = 0; i < p.windows.size(); ++i) {
            const std::string w = std::to_string(p.windows[i]);
            l.filters.push_back(leaf(std::string(prefix) + ".filter_" + w, p.filters[i], true));
            l.biases.push_back(leaf(std::string(prefix) + ".bias_" + w, p.biases[i], false));
        }
        return l;
    };
    if (m.context_rnn) b.ctx_rnn = bind_rnn_part("ctx_rnn", *m.context_rnn);
    if (m.context_cnn) b.ctx_cnn = bind_cnn_part("ctx_cnn", *m.context_cnn);
    if (m.target_rnn) b.tgt_rnn = bind_rnn_part("tgt_rnn", *m.target_rnn);
    if (m.target_cnn) b.tgt_cnn = bind_cnn_part("tgt_cnn", *m.target_cnn);
    if (m.bilinear) {
        for (std::size_t c = 0; c < m.bilinear->w.size(); ++c)
            b.bilinear_w.push_back(
                leaf("bilinear.w" + std::to_string(c), m.bilinear->w[c], false));
        for (std::size_t c = 0; c < m.bilinear->bias.size(); ++c)
            b.bilinear_b.push_back(
                leaf("bilinear.b" + std::to_string(c), m.bilinear->bias[c], false));
    }
    if (m.head) {
        b.head_weight = leaf("head.weight", m.head->weight, false);
        b.head_bias = leaf("head.bias", m.head->bias, false);
    }
    return b;
}

namespace detail {

inline std::vector<int> truncated(std::span<const int> ids, std::size_t cap) {
    const std::size_t n = std::min(ids.size(), cap);
    return std::vector<int>(ids.begin(), ids.begin() + n);
}

inline EncodedVector encode_side(Graph& g, const ModelBinding& b,
                                 EncoderKind kind, std::span<const int> ids,
                                 const Mask& mask, bool is_context) {
    Model& m = *b.model;
    Node* emb = lookup(g, m.embedding, ids, b.embed_sink);
    switch (kind) {
        case EncoderKind::Cbow:
            return encode_cbow(g, emb, mask);
        case EncoderKind::Rnn:
            return encode_rnn(g, emb, mask, is_context ? *b.ctx_rnn : *b.tgt_rnn);
        case EncoderKind::Cnn:
            return encode_cnn(g, emb, mask, is_context ? *b.ctx_cnn : *b.tgt_cnn);
        case EncoderKind::None:
            break;
    }
    throw UsageError("encode_side: no encoder assigned");
}

inline Node* affine_head(Graph& g, const ModelBinding& b, Node* features) {
    return g.add(g.matmul(features, b.head_weight), b.head_bias);
}

} // namespace detail

// Logits for one (context, target) pair whose id rows may carry trailing
// padding described by the masks. Sequences are truncated to the spec's
// maximum lengths first.
inline Node* forward_pair_masked(Graph& g, const ModelBinding& b,
                                 std::span<const int> ctx_ids, const Mask& ctx_mask,
                                 std::span<const int> tgt_ids, const Mask& tgt_mask) {
    Model& m = *b.model;
    const ModelSpec& spec = m.spec;
    if (ctx_mask.size() != ctx_ids.size() || tgt_mask.size() != tgt_ids.size())
        throw DimensionError("forward: mask length does not match id row length");

    const std::size_t ctx_n = std::min(ctx_ids.size(), spec.max_ctx_len);
    const std::size_t tgt_n = std::min(tgt_ids.size(), spec.max_tgt_len);
    std::vector<int> ctx = detail::truncated(ctx_ids, ctx_n);
    std::vector<int> tgt = detail::truncated(tgt_ids, tgt_n);
    const Mask cm = Mask::prefix(std::min(ctx_mask.valid(), ctx_n), ctx_n);
    const Mask tm = Mask::prefix(std::min(tgt_mask.valid(), tgt_n), tgt_n);

    if (spec.combination == Combination::ConcatSentence) {
        std::vector<int> joined(ctx.begin(), ctx.begin() + cm.valid());
        joined.push_back(Vocabulary::kSepId);
        joined.insert(joined.end(), tgt.begin(), tgt.begin() + tm.valid());
        Node* emb = lookup(g, m.embedding, joined, b.embed_sink);
        EncodedVector enc = encode_rnn(g, emb, Mask::all(joined.size()), *b.tgt_rnn);
        return detail::affine_head(g, b, enc.value);
    }

    EncodedVector ctx_vec =
        detail::encode_side(g, b, spec.context_encoder, ctx, cm, true);

    if (spec.is_conditional()) {
        Node* emb = lookup(g, m.embedding, tgt, b.embed_sink);
        EncodedVector enc = encode_rnn(g, emb, tm, *b.tgt_rnn,
                                       spec.seeds_state() ? ctx_vec.value : nullptr,
                                       spec.feeds_input() ? ctx_vec.value : nullptr);
        return detail::affine_head(g, b, enc.value);
    }

    EncodedVector tgt_vec =
        detail::encode_side(g, b, spec.target_encoder, tgt, tm, false);

    if (spec.combination == Combination::Concat)
        return detail::affine_head(g, b, g.concat(ctx_vec.value, tgt_vec.value, 1));

    // bilinear: one score per class, stacked into a flat [C] logit vector
    Node* logits = nullptr;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        Node* score = g.sum_all(g.mul(g.matmul(ctx_vec.value, b.bilinear_w[c]),
                                      tgt_vec.value));
        if (m.bilinear->use_bias) score = g.add(score, b.bilinear_b[c]);
        logits = logits ? g.concat(logits, score, 0) : score;
    }
    return logits;
}

inline Node* forward_pair(Graph& g, const ModelBinding& b,
                          std::span<const int> ctx_ids,
                          std::span<const int> tgt_ids) {
    return forward_pair_masked(g, b, ctx_ids, Mask::all(ctx_ids.size()), tgt_ids,
                               Mask::all(tgt_ids.size()));
}

inline std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw UsageError("softmax: empty logits");
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

// Class probabilities for one pair of id sequences; builds a throwaway
// inference graph.
inline std::vector<double> predict_proba(Model& m, std::span<const int> ctx_ids,
                                         std::span<const int> tgt_ids) {
    Graph g;
    ModelBinding b = bind_model(g, m, nullptr);
    Node* logits = forward_pair(g, b, ctx_ids, tgt_ids);
    return softmax(logits->value.data);
}

inline std::vector<double> predict_proba_text(Model& m, std::string_view context,
                                              std::string_view target) {
    return predict_proba(m, m.vocab.encode(context), m.vocab.encode(target));
}

} // namespace biseq
