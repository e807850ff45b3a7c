#pragma once

// Ranking and classification metrics. Ranking sorts by score descending with
// ties kept in input order (stable sort); AUC instead uses the Mann-Whitney
// rank-sum with midranks, so tied scores contribute one half. Metrics that
// are undefined for the given labels throw UndefinedMetricError; report
// builders catch that and leave the field empty.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "biseq/error.hpp"
#include "biseq/util.hpp"

namespace biseq {

struct ScoredLabel {
    double score = 0.0;
    int label = 0;         // 0 or 1 for ranking metrics
    std::string group;     // empty when ungrouped
};

namespace metric_detail {

inline void validate(std::span<const ScoredLabel> items, const char* who) {
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!std::isfinite(items[i].score))
            throw InputError(std::string(who) + ": non-finite score at index " +
                             std::to_string(i));
        if (items[i].label != 0 && items[i].label != 1)
            throw InputError(std::string(who) + ": label " +
                             std::to_string(items[i].label) + " at index " +
                             std::to_string(i) + " is not binary");
    }
}

inline std::size_t count_positive(std::span<const ScoredLabel> items) {
    std::size_t n = 0;
    for (const auto& it : items) n += it.label == 1;
    return n;
}

// Indices sorted by score descending, input order preserved within ties.
inline std::vector<std::size_t> ranking(std::span<const ScoredLabel> items) {
    std::vector<std::size_t> idx(items.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return items[a].score > items[b].score;
    });
    return idx;
}

} // namespace metric_detail

// Non-interpolated average precision: mean over positive items of the
// precision at their rank.
inline double average_precision(std::span<const ScoredLabel> items) {
    metric_detail::validate(items, "average_precision");
    const std::size_t npos = metric_detail::count_positive(items);
    if (npos == 0)
        throw UndefinedMetricError("average_precision: no positive items");
    const auto idx = metric_detail::ranking(items);
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < idx.size(); ++r)
        if (items[idx[r]].label == 1) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
    return sum / static_cast<double>(npos);
}

// Mann-Whitney AUC via midranks; ties between a positive and a negative
// count one half.
inline double roc_auc(std::span<const ScoredLabel> items) {
    metric_detail::validate(items, "roc_auc");
    const std::size_t npos = metric_detail::count_positive(items);
    const std::size_t nneg = items.size() - npos;
    if (npos == 0 || nneg == 0)
        throw UndefinedMetricError("roc_auc: needs at least one positive and one "
                                   "negative item");
    std::vector<std::size_t> idx(items.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return items[a].score < items[b].score;
    });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j < idx.size() && items[idx[j]].score == items[idx[i]].score) ++j;
        // midrank of the tie block [i, j) with 1-based ranks
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k)
            if (items[idx[k]].label == 1) rank_sum_pos += midrank;
        i = j;
    }
    const double u = rank_sum_pos -
                     0.5 * static_cast<double>(npos) * static_cast<double>(npos + 1);
    return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Precision, recall and F1 over the top min(k, n) ranked items.
inline Prf prf_at_k(std::span<const ScoredLabel> items, std::size_t k) {
    if (k == 0) throw InputError("prf_at_k: k must be positive");
    metric_detail::validate(items, "prf_at_k");
    const std::size_t npos = metric_detail::count_positive(items);
    if (npos == 0)
        throw UndefinedMetricError("prf_at_k: no positive items");
    const auto idx = metric_detail::ranking(items);
    const std::size_t kk = std::min(k, items.size());
    std::size_t tp = 0;
    for (std::size_t r = 0; r < kk; ++r) tp += items[idx[r]].label == 1;
    Prf out;
    out.precision = static_cast<double>(tp) / static_cast<double>(kk);
    out.recall = static_cast<double>(tp) / static_cast<double>(npos);
    out.f1 = tp == 0 ? 0.0
                     : 2.0 * out.precision * out.recall /
                           (out.precision + out.recall);
    return out;
}

// Fraction of rows whose argmax matches the label; the earliest class wins
// arg ties.
inline double accuracy(const std::vector<std::vector<double>>& prob_rows,
                       std::span<const int> labels) {
    if (prob_rows.empty()) throw InputError("accuracy: no rows");
    if (prob_rows.size() != labels.size())
        throw DimensionError("accuracy: " + std::to_string(prob_rows.size()) +
                             " rows vs " + std::to_string(labels.size()) + " labels");
    const std::size_t classes = prob_rows[0].size();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < prob_rows.size(); ++i) {
        const auto& row = prob_rows[i];
        if (row.size() != classes)
            throw DimensionError("accuracy: row " + std::to_string(i) + " has " +
                                 std::to_string(row.size()) + " entries, expected " +
                                 std::to_string(classes));
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
            throw InputError("accuracy: label " + std::to_string(labels[i]) +
                             " at row " + std::to_string(i) + " out of range");
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c)
            if (row[c] > row[best]) best = c;
        correct += best == static_cast<std::size_t>(labels[i]);
    }
    return static_cast<double>(correct) / static_cast<double>(prob_rows.size());
}

// The K values reported by default.
inline const std::vector<std::size_t>& default_ks() {
    static const std::vector<std::size_t> ks = {200, 50, 20, 10, 5};
    return ks;
}

// A metric bundle where absent fields mean "undefined for these labels".
struct EvalReport {
    std::size_t n = 0;
    std::size_t n_pos = 0;
    std::optional<double> avgp;
    std::optional<double> auc;
    std::optional<double> accuracy;
    std::map<std::size_t, Prf> at_k;

    std::vector<std::string> defined_metrics() const {
        std::vector<std::string> out;
        if (avgp) out.push_back("avgp");
        if (auc) out.push_back("auc");
        if (accuracy) out.push_back("accuracy");
        for (const auto& [k, v] : at_k) out.push_back("p@" + std::to_string(k));
        return out;
    }
};

// Computes everything that is defined for a binary score list; positives are
// label 1, predicted positive means score > 0.5.
inline EvalReport evaluate_binary(std::span<const ScoredLabel> items,
                                  std::span<const std::size_t> ks = {}) {
    if (items.empty()) throw InputError("evaluate_binary: no items");
    metric_detail::validate(items, "evaluate_binary");
    EvalReport r;
    r.n = items.size();
    r.n_pos = metric_detail::count_positive(items);
    try {
        r.avgp = average_precision(items);
    } catch (const UndefinedMetricError&) {
    }
    try {
        r.auc = roc_auc(items);
    } catch (const UndefinedMetricError&) {
    }
    {
        std::size_t correct = 0;
        for (const auto& it : items)
            correct += (it.score > 0.5 ? 1 : 0) == it.label;
        r.accuracy = static_cast<double>(correct) / static_cast<double>(items.size());
    }
    const std::vector<std::size_t> use =
        ks.empty() ? default_ks() : std::vector<std::size_t>(ks.begin(), ks.end());
    for (std::size_t k : use) {
        try {
            r.at_k[k] = prf_at_k(items, k);
        } catch (const UndefinedMetricError&) {
        }
    }
    return r;
}

struct MacroReport {
    std::vector<std::pair<std::string, EvalReport>> per_group; // first appearance order
    EvalReport macro;                                          // unweighted means
    std::map<std::string, std::vector<std::string>> skipped;   // metric -> group ids
};

// Groups items by their group id, evaluates each group, and averages each
// metric over the groups where it is defined. Groups missing a metric are
// listed under skipped.
inline MacroReport macro_average(std::span<const ScoredLabel> items,
                                 std::span<const std::size_t> ks = {}) {
    if (items.empty())
        throw UndefinedMetricError("macro_average: no items, no group defined");
    std::vector<std::string> order;
    std::map<std::string, std::vector<ScoredLabel>> by_group;
    for (const auto& it : items) {
        if (!by_group.count(it.group)) order.push_back(it.group);
        by_group[it.group].push_back(it);
    }
    MacroReport mr;
    for (const auto& gname : order)
        mr.per_group.push_back({gname, evaluate_binary(by_group[gname], ks)});

    mr.macro.n = items.size();
    mr.macro.n_pos = metric_detail::count_positive(items);
    const auto mean_of = [&](auto getter, const std::string& metric)
        -> std::optional<double> {
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& [gname, rep] : mr.per_group) {
            const std::optional<double> v = getter(rep);
            if (v) {
                sum += *v;
                ++count;
            } else {
                mr.skipped[metric].push_back(gname);
            }
        }
        if (count == 0) return std::nullopt;
        return sum / static_cast<double>(count);
    };
    mr.macro.avgp = mean_of([](const EvalReport& r) { return r.avgp; }, "avgp");
    mr.macro.auc = mean_of([](const EvalReport& r) { return r.auc; }, "auc");
    mr.macro.accuracy =
        mean_of([](const EvalReport& r) { return r.accuracy; }, "accuracy");
    const std::vector<std::size_t> use =
        ks.empty() ? default_ks() : std::vector<std::size_t>(ks.begin(), ks.end());
    for (std::size_t k : use) {
        double p = 0, rec = 0, f = 0;
        std::size_t count = 0;
        for (const auto& [gname, rep] : mr.per_group) {
            auto it = rep.at_k.find(k);
            if (it != rep.at_k.end()) {
                p += it->second.precision;
                rec += it->second.recall;
                f += it->second.f1;
                ++count;
            } else {
                mr.skipped["p@" + std::to_string(k)].push_back(gname);
            }
        }
        if (count)
            mr.macro.at_k[k] = {p / count, rec / count, f / count};
    }
    return mr;
}

// TSV rows of score<TAB>label[<TAB>group].
inline std::vector<ScoredLabel> read_score_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("score file: cannot open '" + path + "'");
    std::vector<ScoredLabel> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const auto fields = split(line, '\t');
        if (fields.size() != 2 && fields.size() != 3)
            throw ParseError("score file line " + std::to_string(lineno) +
                             ": expected score<TAB>label[<TAB>group], got " +
                             std::to_string(fields.size()) + " fields");
        ScoredLabel sl;
        sl.score = parse_double(fields[0], "score file line " + std::to_string(lineno));
        sl.label = static_cast<int>(
            parse_int(fields[1], "score file line " + std::to_string(lineno)));
        if (fields.size() == 3) sl.group = fields[2];
        out.push_back(sl);
    }
    return out;
}

} // namespace biseq
