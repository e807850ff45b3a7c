#pragma once

// Tokenisation, vocabulary construction and the embedding layer shared by
// every encoder. Ids 0..2 are reserved: padding, unknown, separator. The
// padding row of any embedding table is zero and stays zero because lookups
// never route gradient to id 0.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "biseq/error.hpp"
#include "biseq/tensor.hpp"
#include "biseq/util.hpp"

namespace biseq {

// Lowercases, splits on whitespace, and peels leading/trailing ASCII
// punctuation off each chunk into tokens of their own.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    const auto is_sp = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    const auto is_punct = [](char c) {
        unsigned char u = static_cast<unsigned char>(c);
        return u < 128 && std::ispunct(u) != 0;
    };
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        while (i < n && is_sp(text[i])) ++i;
        std::size_t j = i;
        while (j < n && !is_sp(text[j])) ++j;
        if (j > i) {
            std::string_view chunk = text.substr(i, j - i);
            std::size_t b = 0, e = chunk.size();
            while (b < e && is_punct(chunk[b])) ++b;
            while (e > b && is_punct(chunk[e - 1])) --e;
            for (std::size_t k = 0; k < b; ++k)
                out.emplace_back(1, chunk[k]);
            if (e > b) out.push_back(lowercase_ascii(chunk.substr(b, e - b)));
            for (std::size_t k = e; k < chunk.size(); ++k)
                out.emplace_back(1, chunk[k]);
        }
        i = j;
    }
    return out;
}

class Vocabulary {
public:
    static constexpr int kPadId = 0;
    static constexpr int kUnkId = 1;
    static constexpr int kSepId = 2;

    Vocabulary() {
        add("<pad>");
        add("<unk>");
        add("<sep>");
    }

    // Frequency-sorted vocabulary (ties broken lexicographically) over
    // already-tokenised sequences, keeping tokens seen at least min_count
    // times. Reserved ids always come first.
    static Vocabulary build(std::span<const std::vector<std::string>> corpus,
                            std::size_t min_count = 1) {
        if (min_count < 1)
            throw InputError("vocabulary: min_count must be at least 1");
        std::unordered_map<std::string, std::size_t> freq;
        for (const auto& seq : corpus)
            for (const auto& tok : seq) ++freq[tok];
        std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
        std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        Vocabulary v;
        for (const auto& [tok, count] : items) {
            if (count < min_count) continue;
            if (v.contains(tok)) continue;
            v.add(tok);
        }
        return v;
    }

    int id_of(std::string_view token) const {
        auto it = to_id_.find(std::string(token));
        return it == to_id_.end() ? kUnkId : it->second;
    }

    bool contains(std::string_view token) const {
        return to_id_.find(std::string(token)) != to_id_.end();
    }

    const std::string& token_of(std::size_t id) const {
        if (id >= tokens_.size())
            throw InputError("vocabulary: id " + std::to_string(id) +
                             " out of range for size " + std::to_string(tokens_.size()));
        return tokens_[id];
    }

    std::size_t size() const { return tokens_.size(); }

    std::vector<int> ids_of(const std::vector<std::string>& tokens) const {
        std::vector<int> out;
        out.reserve(tokens.size());
        for (const auto& t : tokens) out.push_back(id_of(t));
        return out;
    }

    std::vector<int> encode(std::string_view text) const {
        return ids_of(tokenize(text));
    }

private:
    void add(std::string token) {
        to_id_.emplace(token, static_cast<int>(tokens_.size()));
        tokens_.push_back(std::move(token));
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> to_id_;
};

struct EmbeddingTable {
    Tensor matrix; // [V x dim], row 0 all zeros
    bool trainable = true;

    std::size_t vocab_size() const { return matrix.rows(); }
    std::size_t dim() const { return matrix.cols(); }
};

// Uniform [-0.25, 0.25] init for every non-padding row.
inline EmbeddingTable random_embedding(const Vocabulary& vocab, std::size_t dim,
                                       std::uint64_t seed) {
    if (dim == 0) throw ConfigError("embedding: dimension must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-0.25, 0.25);
    EmbeddingTable t;
    t.matrix = Tensor({vocab.size(), dim});
    for (std::size_t r = 1; r < vocab.size(); ++r)
        for (std::size_t c = 0; c < dim; ++c)
            t.matrix.at(r, c) = dist(rng);
    return t;
}

// Word vectors in text form: optional "count dim" header, then one token
// plus dim numbers per line.
struct PretrainedVectors {
    std::size_t dim = 0;
    std::vector<std::string> tokens;
    std::vector<std::vector<double>> vectors;
    std::unordered_map<std::string, std::size_t> index;

    const std::vector<double>* find(std::string_view token) const {
        auto it = index.find(std::string(token));
        return it == index.end() ? nullptr : &vectors[it->second];
    }
};

inline PretrainedVectors read_embedding_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("embedding file: cannot open '" + path + "'");
    PretrainedVectors pv;
    std::string line;
    std::size_t lineno = 0;
    bool first_content = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        std::vector<std::string> fields;
        {
            std::size_t start = 0;
            const std::string_view sv = line;
            for (std::size_t i = 0; i <= sv.size(); ++i) {
                if (i == sv.size() || sv[i] == ' ' || sv[i] == '\t') {
                    if (i > start) fields.emplace_back(sv.substr(start, i - start));
                    start = i + 1;
                }
            }
        }
        if (first_content) {
            first_content = false;
            if (fields.size() == 2 && is_integer_literal(fields[0]) &&
                is_integer_literal(fields[1]))
                continue; // header line: vector count and dimension
        }
        if (fields.size() < 2)
            throw ParseError("embedding file line " + std::to_string(lineno) +
                             ": expected a token and at least one value");
        std::vector<double> vec;
        vec.reserve(fields.size() - 1);
        for (std::size_t k = 1; k < fields.size(); ++k)
            vec.push_back(parse_double(fields[k], "embedding file line " +
                                                      std::to_string(lineno)));
        if (pv.dim == 0) {
            pv.dim = vec.size();
        } else if (vec.size() != pv.dim) {
            throw FormatError("embedding file line " + std::to_string(lineno) +
                              ": dimension " + std::to_string(vec.size()) +
                              " differs from established " + std::to_string(pv.dim));
        }
        if (pv.index.count(fields[0])) continue; // first occurrence wins
        pv.index.emplace(fields[0], pv.tokens.size());
        pv.tokens.push_back(fields[0]);
        pv.vectors.push_back(std::move(vec));
    }
    if (pv.dim == 0)
        throw InputError("embedding file '" + path + "' holds no vectors");
    return pv;
}

struct EmbeddingLoad {
    EmbeddingTable table;
    std::size_t matched = 0;
};

// Copies pretrained rows where the vocabulary token appears in the file and
// draws uniform [-0.25, 0.25] rows otherwise. Deterministic in (vocab, file,
// seed), so loading twice is bit-identical.
inline EmbeddingLoad init_from_pretrained(const PretrainedVectors& pv,
                                          const Vocabulary& vocab,
                                          std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-0.25, 0.25);
    EmbeddingLoad out;
    out.table.matrix = Tensor({vocab.size(), pv.dim});
    for (std::size_t r = 1; r < vocab.size(); ++r) {
        const std::vector<double>* vec = pv.find(vocab.token_of(r));
        if (vec) {
            ++out.matched;
            for (std::size_t c = 0; c < pv.dim; ++c)
                out.table.matrix.at(r, c) = (*vec)[c];
        } else {
            for (std::size_t c = 0; c < pv.dim; ++c)
                out.table.matrix.at(r, c) = dist(rng);
        }
    }
    return out;
}

inline EmbeddingLoad load_pretrained(const std::string& path, const Vocabulary& vocab,
                                     std::uint64_t seed) {
    return init_from_pretrained(read_embedding_file(path), vocab, seed);
}

// Gathers embedding rows for a batch of ids onto the graph. grad_sink
// receives scatter-added gradients for non-padding rows; pass null for
// inference or a frozen table.
inline Node* lookup(Graph& g, const EmbeddingTable& table, std::span<const int> ids,
                    Tensor* grad_sink = nullptr) {
    return g.embedding_lookup(table.matrix, ids,
                              table.trainable ? grad_sink : nullptr);
}

} // namespace biseq
