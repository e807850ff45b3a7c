#pragma once

// Dataset ingestion and the synthetic desk-scale task. Three file formats are
// supported: plain TSV pairs, entailment-style JSON lines, and QA-ranking TSV
// with a header row. Loaders reject malformed rows with their line number and
// map label strings to dense ids.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "biseq/embed.hpp"
#include "biseq/error.hpp"
#include "biseq/util.hpp"

namespace biseq {

struct SequencePair {
    std::string context;
    std::string target;
    int label = 0;
    std::string group;
};

struct Dataset {
    std::string name;
    std::vector<SequencePair> records;
    std::size_t num_classes = 0;
    std::vector<std::string> label_names; // index = dense label id

    std::size_t size() const { return records.size(); }
};

// Stable content hash for run manifests.
inline std::uint64_t dataset_fingerprint(const Dataset& ds) {
    std::uint64_t h = fnv1a(ds.name);
    for (const auto& r : ds.records) {
        h = fnv1a(r.context, h);
        h = fnv1a("\x1e", h);
        h = fnv1a(r.target, h);
        h = fnv1a("\x1e", h);
        h = fnv1a(std::to_string(r.label), h);
        h = fnv1a("\x1e", h);
        h = fnv1a(r.group, h);
        h = fnv1a("\x1f", h);
    }
    return h;
}

namespace dataset_detail {

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("dataset: cannot open '" + path + "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

// Assigns dense ids. All-integer label sets keep their numeric values and must
// already be dense; anything else is mapped in lexicographic order.
inline void finalize_labels(Dataset& ds, const std::vector<std::string>& raw) {
    if (raw.empty()) throw InputError("dataset '" + ds.name + "': no records");
    const bool all_int = std::all_of(raw.begin(), raw.end(), [](const std::string& s) {
        return is_integer_literal(s) && !s.empty() && s[0] != '-';
    });
    if (all_int) {
        long max_label = 0;
        std::set<long> seen;
        for (std::size_t i = 0; i < raw.size(); ++i) {
            const long v = parse_int(raw[i], "label");
            seen.insert(v);
            max_label = std::max(max_label, v);
            ds.records[i].label = static_cast<int>(v);
        }
        for (long v = 0; v <= max_label; ++v)
            if (!seen.count(v))
                throw InputError("dataset '" + ds.name + "': labels are not dense, " +
                                 std::to_string(v) + " never appears");
        ds.num_classes = static_cast<std::size_t>(max_label) + 1;
        if (ds.num_classes < 2)
            throw InputError("dataset '" + ds.name + "': needs at least 2 classes");
        for (std::size_t c = 0; c < ds.num_classes; ++c)
            ds.label_names.push_back(std::to_string(c));
        return;
    }
    std::set<std::string> distinct(raw.begin(), raw.end());
    if (distinct.size() < 2)
        throw InputError("dataset '" + ds.name + "': needs at least 2 classes");
    std::map<std::string, int> to_id;
    for (const auto& s : distinct) {
        to_id[s] = static_cast<int>(ds.label_names.size());
        ds.label_names.push_back(s);
    }
    for (std::size_t i = 0; i < raw.size(); ++i) ds.records[i].label = to_id[raw[i]];
    ds.num_classes = distinct.size();
}

} // namespace dataset_detail

// context<TAB>target<TAB>label[<TAB>group], one record per line. The column
// count must be consistent across the file. Files without a group column fall
// back to grouping by context text, since contexts repeat across records.
inline Dataset load_tsv_pairs(const std::string& path, const std::string& name) {
    Dataset ds;
    ds.name = name;
    std::vector<std::string> raw_labels;
    std::size_t columns = 0;
    const auto lines = dataset_detail::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        const auto fields = split(lines[i], '\t');
        if (fields.size() != 3 && fields.size() != 4)
            throw ParseError("tsv-pairs line " + std::to_string(i + 1) +
                             ": expected 3 or 4 tab-separated columns, got " +
                             std::to_string(fields.size()));
        if (columns == 0) columns = fields.size();
        if (fields.size() != columns)
            throw ParseError("tsv-pairs line " + std::to_string(i + 1) + ": " +
                             std::to_string(fields.size()) +
                             " columns, previous rows had " + std::to_string(columns));
        SequencePair r;
        r.context = fields[0];
        r.target = fields[1];
        if (trim(r.context).empty())
            throw ParseError("tsv-pairs line " + std::to_string(i + 1) +
                             ": empty context");
        if (trim(r.target).empty())
            throw ParseError("tsv-pairs line " + std::to_string(i + 1) +
                             ": empty target");
        r.group = columns == 4 ? std::string(fields[3]) : r.context;
        ds.records.push_back(std::move(r));
        raw_labels.push_back(std::string(fields[2]));
    }
    dataset_detail::finalize_labels(ds, raw_labels);
    return ds;
}

// One JSON object per line with sentence1, sentence2 and gold_label. The three
// entailment labels map to fixed ids; ungraded records (gold_label "-") are
// dropped.
inline Dataset load_snli_jsonl(const std::string& path, const std::string& name) {
    Dataset ds;
    ds.name = name;
    ds.num_classes = 3;
    ds.label_names = {"entailment", "contradiction", "neutral"};
    const std::map<std::string, int> to_id = {
        {"entailment", 0}, {"contradiction", 1}, {"neutral", 2}};
    const auto lines = dataset_detail::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(lines[i]);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("jsonl line " + std::to_string(i + 1) + ": " + e.what());
        }
        for (const char* key : {"sentence1", "sentence2", "gold_label"})
            if (!obj.contains(key) || !obj[key].is_string())
                throw ParseError("jsonl line " + std::to_string(i + 1) +
                                 ": missing string field '" + key + "'");
        const std::string label = obj["gold_label"];
        if (label == "-") continue;
        const auto it = to_id.find(label);
        if (it == to_id.end())
            throw ParseError("jsonl line " + std::to_string(i + 1) +
                             ": unknown gold_label '" + label + "'");
        SequencePair r;
        r.context = obj["sentence1"];
        r.target = obj["sentence2"];
        if (trim(r.context).empty() || trim(r.target).empty())
            throw ParseError("jsonl line " + std::to_string(i + 1) +
                             ": empty sentence");
        r.label = it->second;
        r.group = r.context;
        ds.records.push_back(std::move(r));
    }
    if (ds.records.empty())
        throw InputError("dataset '" + name + "': no graded records");
    return ds;
}

// Header row naming at least Question, Sentence and Label columns
// (case-insensitive); QuestionID, when present, becomes the group.
inline Dataset load_wikiqa_tsv(const std::string& path, const std::string& name) {
    const auto lines = dataset_detail::read_lines(path);
    if (lines.empty()) throw InputError("dataset '" + name + "': empty file");
    const auto header = split(lines[0], '\t');
    long q = -1, s = -1, l = -1, qid = -1;
    for (std::size_t i = 0; i < header.size(); ++i) {
        const std::string h = lowercase_ascii(trim(header[i]));
        if (h == "question") q = static_cast<long>(i);
        else if (h == "sentence") s = static_cast<long>(i);
        else if (h == "label") l = static_cast<long>(i);
        else if (h == "questionid") qid = static_cast<long>(i);
    }
    if (q < 0 || s < 0 || l < 0)
        throw FormatError("dataset '" + name +
                          "': header must name Question, Sentence and Label columns");
    Dataset ds;
    ds.name = name;
    std::vector<std::string> raw_labels;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        const auto fields = split(lines[i], '\t');
        if (fields.size() != header.size())
            throw ParseError("line " + std::to_string(i + 1) + ": " +
                             std::to_string(fields.size()) + " columns, header has " +
                             std::to_string(header.size()));
        SequencePair r;
        r.context = fields[static_cast<std::size_t>(q)];
        r.target = fields[static_cast<std::size_t>(s)];
        if (trim(r.context).empty() || trim(r.target).empty())
            throw ParseError("line " + std::to_string(i + 1) +
                             ": empty question or sentence");
        r.group = qid >= 0 ? std::string(fields[static_cast<std::size_t>(qid)])
                           : r.context;
        ds.records.push_back(std::move(r));
        raw_labels.push_back(std::string(fields[static_cast<std::size_t>(l)]));
    }
    dataset_detail::finalize_labels(ds, raw_labels);
    return ds;
}

inline Dataset load_dataset(const std::string& path, const std::string& format,
                            const std::string& name) {
    if (format == "tsv-pairs") return load_tsv_pairs(path, name);
    if (format == "snli-jsonl") return load_snli_jsonl(path, name);
    if (format == "wikiqa-tsv") return load_wikiqa_tsv(path, name);
    throw ConfigError("unknown dataset format '" + format +
                      "', expected tsv-pairs, snli-jsonl or wikiqa-tsv");
}

// Always writes 4 columns; labels appear by name.
inline void write_tsv_pairs(const std::string& path, const Dataset& ds) {
    std::ofstream out(path);
    if (!out) throw InputError("dataset: cannot write '" + path + "'");
    for (const auto& r : ds.records) {
        const std::string& label =
            ds.label_names.at(static_cast<std::size_t>(r.label));
        out << r.context << '\t' << r.target << '\t' << label << '\t' << r.group
            << '\n';
    }
    if (!out) throw InputError("dataset: failed writing '" + path + "'");
}

// Synthetic bi-sequence task: the context is a single key token and the label
// says whether that token occurs in the target. Negative targets contain no
// key token at all, so the classes are separable by every architecture family,
// and the rule is identical across groups, which makes the task a clean
// leave-one-group-out testbed.
inline Dataset make_containment_dataset(std::size_t n, std::size_t num_groups,
                                        std::size_t filler_vocab,
                                        std::uint64_t seed) {
    if (n == 0) throw InputError("containment dataset: n must be positive");
    if (num_groups == 0 || num_groups > n)
        throw InputError("containment dataset: need 1..n groups");
    if (filler_vocab == 0)
        throw InputError("containment dataset: filler vocabulary must be nonempty");
    constexpr std::size_t kKeys = 5;
    std::mt19937_64 rng(derive_seed(seed, "containment"));
    std::uniform_int_distribution<std::size_t> key(0, kKeys - 1);
    std::uniform_int_distribution<std::size_t> filler(0, filler_vocab - 1);
    std::uniform_int_distribution<std::size_t> tgt_len(6, 10);
    std::uniform_int_distribution<int> coin(0, 1);
    Dataset ds;
    ds.name = "containment";
    ds.num_classes = 2;
    ds.label_names = {"0", "1"};
    for (std::size_t i = 0; i < n; ++i) {
        SequencePair r;
        const std::string k = "key" + std::to_string(key(rng));
        r.context = k;
        const std::size_t len = tgt_len(rng);
        std::vector<std::string> words;
        for (std::size_t j = 0; j < len; ++j)
            words.push_back("w" + std::to_string(filler(rng)));
        r.label = coin(rng);
        if (r.label == 1) words[rng() % words.size()] = k;
        r.target = join(words, " ");
        r.group = "g" + std::to_string(i % num_groups);
        ds.records.push_back(std::move(r));
    }
    return ds;
}

} // namespace biseq
