#pragma once

// Experiment harness: grouped dataset splitting, hyperparameter grid search
// with validation-based selection, and leave-one-group-out evaluation. Runs
// persist a results table (CSV), a manifest (JSON) and per-run training
// histories (JSON lines) when an output directory is given. Result tables are
// byte-identical across reruns with the same seed; wall-clock times live only
// in the histories.

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "biseq/dataset.hpp"
#include "biseq/error.hpp"
#include "biseq/metrics.hpp"
#include "biseq/model.hpp"
#include "biseq/train.hpp"

namespace biseq {

// ----- encoding text records against a vocabulary ---------------------------

inline Vocabulary build_vocabulary(std::span<const SequencePair> records,
                                   std::size_t min_count = 1) {
    std::vector<std::vector<std::string>> corpus;
    corpus.reserve(records.size() * 2);
    for (const auto& r : records) {
        corpus.push_back(tokenize(r.context));
        corpus.push_back(tokenize(r.target));
    }
    return Vocabulary::build(corpus, min_count);
}

inline std::vector<EncodedPair> encode_records(std::span<const SequencePair> records,
                                               const Vocabulary& vocab) {
    std::vector<EncodedPair> out;
    out.reserve(records.size());
    for (const auto& r : records)
        out.push_back({vocab.encode(r.context), vocab.encode(r.target), r.label});
    return out;
}

inline EmbeddingTable prepare_embedding(const Vocabulary& vocab, std::size_t dim,
                                        std::uint64_t seed,
                                        const PretrainedVectors* pretrained) {
    if (!pretrained) return random_embedding(vocab, dim, seed);
    return init_from_pretrained(*pretrained, vocab, seed).table;
}

// ----- grouped splitting -----------------------------------------------------

struct Splits {
    std::vector<SequencePair> train, valid, test;
    std::array<std::vector<std::string>, 3> groups; // sorted ids per part
};

namespace harness_detail {

// Greedy assignment of whole groups to parts: walk the shuffled group list and
// give each group to the part whose record deficit against its target share is
// largest. Zero-ratio parts never receive anything. Once the number of groups
// left equals the number of parts still empty, only empty parts may receive,
// so every positive-ratio part ends up nonempty whenever enough groups exist.
inline std::map<std::string, std::size_t> assign_groups(
    const std::vector<std::string>& shuffled,
    const std::map<std::string, std::size_t>& group_sizes,
    std::span<const double> ratios, std::size_t total) {
    std::vector<double> assigned(ratios.size(), 0.0);
    std::vector<std::size_t> received(ratios.size(), 0);
    std::map<std::string, std::size_t> part_of;
    for (std::size_t gi = 0; gi < shuffled.size(); ++gi) {
        const std::string& g = shuffled[gi];
        std::size_t still_empty = 0;
        for (std::size_t p = 0; p < ratios.size(); ++p)
            still_empty += ratios[p] > 0.0 && received[p] == 0;
        const bool must_fill = shuffled.size() - gi <= still_empty;
        std::size_t best = ratios.size();
        double best_deficit = -1e300;
        for (std::size_t p = 0; p < ratios.size(); ++p) {
            if (ratios[p] <= 0.0) continue;
            if (must_fill && received[p] > 0) continue;
            const double deficit =
                ratios[p] * static_cast<double>(total) - assigned[p];
            if (deficit > best_deficit) {
                best_deficit = deficit;
                best = p;
            }
        }
        part_of[g] = best;
        assigned[best] += static_cast<double>(group_sizes.at(g));
        received[best] += 1;
    }
    return part_of;
}

inline std::vector<std::string> groups_in_order(
    std::span<const SequencePair> records) {
    std::vector<std::string> order;
    std::map<std::string, bool> seen;
    for (const auto& r : records)
        if (!seen[r.group]) {
            seen[r.group] = true;
            order.push_back(r.group);
        }
    return order;
}

} // namespace harness_detail

// Whole groups land in one part; part sizes approximate the ratios by record
// count. All three ratios must be positive and every part must end up
// nonempty, so callers cannot silently train without a test set.
inline Splits split_dataset(const Dataset& ds, std::array<double, 3> ratios,
                            std::uint64_t seed) {
    double sum = 0.0;
    for (double r : ratios) {
        if (!std::isfinite(r) || r <= 0.0)
            throw InputError("split: all three ratios must be positive");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw InputError("split: ratios must sum to 1, got " + format_double(sum));
    if (ds.records.empty()) throw InputError("split: empty dataset");

    auto order = harness_detail::groups_in_order(ds.records);
    if (order.size() < 3)
        throw InputError("split: only " + std::to_string(order.size()) +
                         " groups for 3 parts");
    std::map<std::string, std::size_t> sizes;
    for (const auto& r : ds.records) ++sizes[r.group];

    std::mt19937_64 rng(derive_seed(seed, "split"));
    std::shuffle(order.begin(), order.end(), rng);
    const auto part_of = harness_detail::assign_groups(order, sizes, ratios,
                                                       ds.records.size());
    Splits out;
    for (const auto& r : ds.records) {
        const std::size_t p = part_of.at(r.group);
        (p == 0 ? out.train : p == 1 ? out.valid : out.test).push_back(r);
    }
    for (std::size_t p = 0; p < 3; ++p) {
        for (const auto& [g, gp] : part_of)
            if (gp == p) out.groups[p].push_back(g);
        std::sort(out.groups[p].begin(), out.groups[p].end());
    }
    const char* names[3] = {"train", "valid", "test"};
    for (std::size_t p = 0; p < 3; ++p)
        if (out.groups[p].empty())
            throw InputError(std::string("split: the ") + names[p] +
                             " part received no groups");
    return out;
}

// Nearest-rank token-length percentile per side.
inline std::pair<std::size_t, std::size_t> suggest_max_lengths(const Dataset& ds,
                                                               double percentile) {
    if (ds.records.empty()) throw InputError("max lengths: empty dataset");
    if (!(percentile > 0.0) || percentile > 100.0)
        throw InputError("max lengths: percentile must be in (0, 100]");
    const auto side = [&](bool context) {
        std::vector<std::size_t> lens;
        lens.reserve(ds.records.size());
        for (const auto& r : ds.records)
            lens.push_back(tokenize(context ? r.context : r.target).size());
        std::sort(lens.begin(), lens.end());
        auto rank = static_cast<std::size_t>(
            std::ceil(percentile / 100.0 * static_cast<double>(lens.size())));
        rank = std::min(std::max<std::size_t>(rank, 1), lens.size());
        return std::max<std::size_t>(lens[rank - 1], 1);
    };
    return {side(true), side(false)};
}

// ----- cooperative cancellation ----------------------------------------------

// Set from a signal handler (the store is lock-free); runners stop picking up
// new cells or folds, persist the rows that finished, and raise
// CancelledError. Call cancel_flag() once before installing a handler so the
// static is initialized outside signal context.
inline std::atomic<bool>& cancel_flag() {
    static std::atomic<bool> flag{false};
    return flag;
}

inline void request_cancel(bool value = true) { cancel_flag().store(value); }

inline bool cancel_requested() { return cancel_flag().load(); }

// ----- shared run options ----------------------------------------------------

struct RunOptions {
    TrainConfig train;        // loop knobs; lr, l2 and seed come from each spec
    std::size_t embed_dim = 50;
    std::size_t min_count = 1;
    const PretrainedVectors* pretrained = nullptr;
    std::size_t workers = 1;
    std::string out_dir;      // empty disables persistence
    bool full_table = false;  // grid: score every cell on test, not just the winner
};

namespace harness_detail {

inline TrainConfig cell_config(const RunOptions& opt, const ModelSpec& spec) {
    TrainConfig c = opt.train;
    c.learning_rate = spec.learning_rate;
    c.l2_coeff = spec.l2_coeff;
    c.seed = spec.seed;
    return c;
}

// Runs fn(0..n-1) on up to `workers` threads; results land by index so the
// outcome does not depend on scheduling. The first failure (lowest index among
// those raised) is rethrown after all threads stop. A cancellation request
// stops dispatch; tasks already running finish, and their slots stay filled
// while unstarted slots stay empty.
template <typename Fn>
auto parallel_map_partial(std::size_t n, std::size_t workers, Fn&& fn)
    -> std::vector<std::optional<decltype(fn(std::size_t{0}))>> {
    using R = decltype(fn(std::size_t{0}));
    std::vector<std::optional<R>> slots(n);
    const std::size_t k = std::max<std::size_t>(1, std::min(workers, n));
    if (k == 1) {
        for (std::size_t i = 0; i < n && !cancel_requested(); ++i)
            slots[i].emplace(fn(i));
    } else {
        std::atomic<std::size_t> next{0};
        std::atomic<bool> bail{false};
        std::mutex mu;
        std::exception_ptr first_error;
        std::size_t first_error_index = n;
        const auto body = [&]() {
            while (!bail.load() && !cancel_requested()) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    slots[i].emplace(fn(i));
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (i < first_error_index) {
                        first_error_index = i;
                        first_error = std::current_exception();
                    }
                    bail.store(true);
                    return;
                }
            }
        };
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < k; ++t) threads.emplace_back(body);
        for (auto& t : threads) t.join();
        if (first_error) std::rethrow_exception(first_error);
    }
    return slots;
}

template <typename Fn>
auto parallel_map(std::size_t n, std::size_t workers, Fn&& fn)
    -> std::vector<decltype(fn(std::size_t{0}))> {
    auto slots = parallel_map_partial(n, workers, std::forward<Fn>(fn));
    std::vector<decltype(fn(std::size_t{0}))> out;
    out.reserve(n);
    for (auto& s : slots) {
        if (!s) throw CancelledError("interrupted before all tasks finished");
        out.push_back(std::move(*s));
    }
    return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write '" + path.string() + "'");
    out << body;
    if (!out) throw InputError("failed writing '" + path.string() + "'");
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string quoted = "\"";
    for (char c : s) {
        if (c == '"') quoted += '"';
        quoted += c;
    }
    return quoted + "\"";
}

inline std::string spec_csv_header() {
    return "combination,context,target,cell,rnn_size,windows,filters,l2,lr,"
           "classes,max_ctx,max_tgt,seed";
}

inline std::string spec_csv_fields(const ModelSpec& s) {
    std::vector<std::string> f = {
        to_string(s.combination),
        to_string(s.context_encoder),
        to_string(s.target_encoder),
        to_string(s.cell),
        std::to_string(s.rnn_size),
        s.windows_str(),
        std::to_string(s.num_filters),
        format_double(s.l2_coeff),
        format_double(s.learning_rate),
        std::to_string(s.num_classes),
        std::to_string(s.max_ctx_len),
        std::to_string(s.max_tgt_len),
        std::to_string(s.seed)};
    return join(f, ",");
}

inline std::string history_jsonl(const std::vector<EpochRecord>& history) {
    std::string out;
    for (const auto& rec : history) {
        nlohmann::json line = {{"epoch", rec.epoch},
                               {"train_loss", rec.train_loss},
                               {"valid", rec.valid_value},
                               {"seconds", rec.seconds}};
        out += line.dump();
        out += '\n';
    }
    return out;
}

inline std::string run_index(std::size_t i) {
    std::string s = std::to_string(i);
    return std::string(s.size() >= 3 ? 0 : 3 - s.size(), '0') + s;
}

} // namespace harness_detail

// ----- grid search -----------------------------------------------------------

struct GridSpace {
    std::vector<CellKind> cells = {CellKind::Gru, CellKind::Lstm};
    std::vector<std::size_t> rnn_sizes = {50, 100, 200, 300, 400, 500, 1000};
    std::vector<std::vector<int>> window_sets = {{3}, {3, 4}, {3, 4, 5}, {2, 3, 4, 5}};
    std::vector<std::size_t> filter_counts = {10, 20, 40, 64, 128};
    std::vector<double> l2_coeffs = {0.0, 0.01, 0.001, 0.0001};
    std::vector<double> learning_rates = {0.001, 0.0001, 0.00001};
};

struct GridEnumeration {
    std::vector<ModelSpec> cells;       // surviving cells, fixed order
    std::size_t excluded = 0;           // cells dropped by spec constraints
    std::vector<std::string> exclusion_samples;
};

// Expands only the axes the base spec actually uses: RNN axes when some part
// is recurrent, CNN axes (including the CNN L2 coefficient) when some part is
// convolutional, learning rates always. Cells violating spec constraints, such
// as a state-seeding CNN whose output width misses the RNN size, are dropped
// and counted.
inline GridEnumeration enumerate_grid(const ModelSpec& base, const GridSpace& space) {
    if (space.cells.empty() || space.rnn_sizes.empty() || space.window_sets.empty() ||
        space.filter_counts.empty() || space.l2_coeffs.empty() ||
        space.learning_rates.empty())
        throw ConfigError("grid: every axis needs at least one value");
    const bool rnn = base.uses_rnn();
    const bool cnn = base.uses_cnn();
    const std::vector<CellKind> cells = rnn ? space.cells
                                            : std::vector<CellKind>{base.cell};
    const std::vector<std::size_t> sizes =
        rnn ? space.rnn_sizes : std::vector<std::size_t>{base.rnn_size};
    const std::vector<std::vector<int>> windows =
        cnn ? space.window_sets
            : std::vector<std::vector<int>>{base.filter_windows};
    const std::vector<std::size_t> filters =
        cnn ? space.filter_counts : std::vector<std::size_t>{base.num_filters};
    const std::vector<double> l2s =
        cnn ? space.l2_coeffs : std::vector<double>{base.l2_coeff};

    GridEnumeration out;
    std::size_t total = 0;
    for (CellKind cell : cells)
        for (std::size_t rnn_size : sizes)
            for (const auto& ws : windows)
                for (std::size_t nf : filters)
                    for (double l2 : l2s)
                        for (double lr : space.learning_rates) {
                            ++total;
                            ModelSpec spec = base;
                            spec.cell = cell;
                            spec.rnn_size = rnn_size;
                            spec.filter_windows = ws;
                            spec.num_filters = nf;
                            spec.l2_coeff = l2;
                            spec.learning_rate = lr;
                            const auto violations = validate_spec(spec);
                            if (violations.empty()) {
                                out.cells.push_back(std::move(spec));
                            } else {
                                ++out.excluded;
                                if (out.exclusion_samples.size() < 3)
                                    out.exclusion_samples.push_back(violations[0]);
                            }
                        }
    if (out.cells.empty())
        throw ConfigError("grid: all " + std::to_string(total) +
                          " cells violate spec constraints; first: " +
                          (out.exclusion_samples.empty()
                               ? std::string("(none recorded)")
                               : out.exclusion_samples[0]));
    return out;
}

struct GridRow {
    ModelSpec spec;
    std::size_t cell_index = 0;
    double valid_value = 0.0;
    std::optional<double> test_value;
    std::size_t best_epoch = 0;
};

struct GridResult {
    std::string selection;
    std::size_t excluded = 0;
    std::vector<GridRow> rows;    // sorted by valid metric descending
    std::size_t winner_cell = 0;
    double winner_valid = 0.0;
    double winner_test = 0.0;
    Model winner_model;
};

namespace harness_detail {

inline void persist_grid(
    const Dataset& ds, const Splits& sp, const ModelSpec& base,
    const RunOptions& opt, const GridResult& result,
    const std::vector<std::pair<std::size_t, std::vector<EpochRecord>>>& histories,
    const char* command, bool cancelled) {
    const std::filesystem::path dir(opt.out_dir);
    std::filesystem::create_directories(dir);

    std::string csv = "cell_index," + spec_csv_header() +
                      ",valid_metric,test_metric,best_epoch\n";
    for (const auto& row : result.rows) {
        csv += std::to_string(row.cell_index) + "," + spec_csv_fields(row.spec) + "," +
               format_double(row.valid_value) + "," +
               (row.test_value ? format_double(*row.test_value) : std::string()) +
               "," + std::to_string(row.best_epoch) + "\n";
    }
    write_file(dir / "results.csv", csv);

    nlohmann::json manifest;
    manifest["command"] = command;
    manifest["dataset"] = {{"name", ds.name},
                           {"fingerprint", dataset_fingerprint(ds)},
                           {"records", ds.records.size()},
                           {"classes", ds.num_classes}};
    manifest["base_spec"] = base.serialize();
    manifest["seed"] = base.seed;
    manifest["selection"] = result.selection;
    manifest["embed_dim"] = opt.embed_dim;
    manifest["excluded_cells"] = result.excluded;
    manifest["cells"] = result.rows.size();
    if (cancelled) manifest["cancelled"] = true;
    manifest["winner"] = {{"cell_index", result.winner_cell},
                          {"spec", result.rows.empty()
                                       ? std::string()
                                       : result.winner_model.spec.serialize()},
                          {"valid_metric", result.winner_valid},
                          {"test_metric", result.winner_test}};
    manifest["split_groups"] = {{"train", sp.groups[0]},
                                {"valid", sp.groups[1]},
                                {"test", sp.groups[2]}};
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");

    for (const auto& [cell, history] : histories)
        write_file(dir / ("history_" + run_index(cell) + ".jsonl"),
                   history_jsonl(history));
}

} // namespace harness_detail

// Trains one model per surviving grid cell, picks the winner by validation
// metric (ties go to the earlier cell), and scores the winner on the test
// part. full_table scores every cell on test instead.
inline GridResult grid_search(const Dataset& ds, const Splits& sp,
                              const ModelSpec& base, const GridSpace& space,
                              const RunOptions& opt) {
    GridEnumeration grid = enumerate_grid(base, space);
    for (auto& spec : grid.cells) spec.num_classes = ds.num_classes;

    const std::string selection =
        !opt.train.selection.empty() ? opt.train.selection
        : ds.num_classes == 2       ? std::string("avgp")
                                    : std::string("accuracy");
    {
        TrainConfig probe = opt.train;
        probe.selection = selection;
        validate_train_config(probe, ds.num_classes);
    }
    if (sp.train.empty() || sp.valid.empty() || sp.test.empty())
        throw InputError("grid: splits must all be nonempty");

    std::vector<SequencePair> seen(sp.train);
    seen.insert(seen.end(), sp.valid.begin(), sp.valid.end());
    const Vocabulary vocab = build_vocabulary(seen, opt.min_count);
    const auto enc_train = encode_records(sp.train, vocab);
    const auto enc_valid = encode_records(sp.valid, vocab);
    const auto enc_test = encode_records(sp.test, vocab);

    struct CellOutcome {
        GridRow row;
        Model model;
        std::vector<EpochRecord> history;
    };
    const auto run_cell = [&](std::size_t i) -> CellOutcome {
        ModelSpec spec = grid.cells[i];
        spec.seed = derive_seed(base.seed, "cell", i);
        TrainConfig config = harness_detail::cell_config(opt, spec);
        config.selection = selection;
        EmbeddingTable emb = prepare_embedding(
            vocab, opt.embed_dim, derive_seed(spec.seed, "embedding"),
            opt.pretrained);
        TrainResult r = train_model(spec, enc_train, enc_valid, vocab,
                                    std::move(emb), config);
        CellOutcome out{{spec, i, r.best_value, std::nullopt, r.best_epoch},
                        std::move(r.model), std::move(r.history)};
        if (opt.full_table)
            out.row.test_value = train_detail::selection_value(out.model, enc_test,
                                                               selection);
        return out;
    };
    auto slots = harness_detail::parallel_map_partial(grid.cells.size(),
                                                      opt.workers, run_cell);
    std::vector<CellOutcome> outcomes;
    for (auto& s : slots)
        if (s) outcomes.push_back(std::move(*s));
    const bool cancelled = outcomes.size() < grid.cells.size();
    if (outcomes.empty())
        throw CancelledError("grid: interrupted before any cell finished");

    std::size_t best = 0;
    for (std::size_t i = 1; i < outcomes.size(); ++i)
        if (outcomes[i].row.valid_value > outcomes[best].row.valid_value) best = i;

    GridResult result;
    result.selection = selection;
    result.excluded = grid.excluded;
    result.winner_cell = outcomes[best].row.cell_index;
    result.winner_valid = outcomes[best].row.valid_value;
    result.winner_model = outcomes[best].model;
    if (!outcomes[best].row.test_value)
        outcomes[best].row.test_value = train_detail::selection_value(
            result.winner_model, enc_test, selection);
    result.winner_test = *outcomes[best].row.test_value;

    std::vector<std::pair<std::size_t, std::vector<EpochRecord>>> histories;
    for (auto& o : outcomes) {
        result.rows.push_back(o.row);
        histories.emplace_back(o.row.cell_index, std::move(o.history));
    }
    std::stable_sort(result.rows.begin(), result.rows.end(),
                     [](const GridRow& a, const GridRow& b) {
                         return a.valid_value > b.valid_value;
                     });
    if (!opt.out_dir.empty())
        harness_detail::persist_grid(ds, sp, base, opt, result, histories, "grid",
                                     cancelled);
    if (cancelled)
        throw CancelledError("grid: interrupted after " +
                             std::to_string(outcomes.size()) + " of " +
                             std::to_string(grid.cells.size()) +
                             " cells; completed rows were flushed");
    return result;
}

// ----- leave-one-group-out ---------------------------------------------------

struct LomoFold {
    std::string group;
    std::size_t n_test = 0;
    EvalReport report;
    std::vector<std::string> train_groups, valid_groups;
};

struct LomoResult {
    MacroReport macro;
    std::vector<LomoFold> folds;
};

namespace harness_detail {

// Group-respecting 90:10 holdout; with a single remaining group the split
// falls back to record level so two-group datasets stay usable.
inline std::pair<std::vector<SequencePair>, std::vector<SequencePair>>
inner_holdout(const std::vector<SequencePair>& rest, std::uint64_t seed,
              std::vector<std::string>* train_groups,
              std::vector<std::string>* valid_groups) {
    auto order = groups_in_order(rest);
    std::mt19937_64 rng(derive_seed(seed, "holdout"));
    std::pair<std::vector<SequencePair>, std::vector<SequencePair>> out;
    if (order.size() >= 2) {
        std::map<std::string, std::size_t> sizes;
        for (const auto& r : rest) ++sizes[r.group];
        std::shuffle(order.begin(), order.end(), rng);
        const double ratios[2] = {0.9, 0.1};
        const auto part_of = assign_groups(order, sizes, ratios, rest.size());
        for (const auto& r : rest)
            (part_of.at(r.group) == 0 ? out.first : out.second).push_back(r);
        for (const auto& [g, p] : part_of)
            (p == 0 ? train_groups : valid_groups)->push_back(g);
    } else {
        if (rest.size() < 2)
            throw InputError("lomo: fold needs at least 2 training records");
        std::vector<std::size_t> idx(rest.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        const std::size_t n_valid = std::max<std::size_t>(1, rest.size() / 10);
        for (std::size_t i = 0; i < idx.size(); ++i)
            (i < idx.size() - n_valid ? out.first : out.second)
                .push_back(rest[idx[i]]);
        train_groups->push_back(order[0]);
        valid_groups->push_back(order[0]);
    }
    std::sort(train_groups->begin(), train_groups->end());
    std::sort(valid_groups->begin(), valid_groups->end());
    return out;
}

inline void persist_lomo(
    const Dataset& ds, const ModelSpec& spec, const RunOptions& opt,
    const LomoResult& result,
    const std::vector<std::pair<std::size_t, std::vector<EpochRecord>>>& histories,
    bool cancelled) {
    const std::filesystem::path dir(opt.out_dir);
    std::filesystem::create_directories(dir);

    const auto cell = [](const std::optional<double>& v) {
        return v ? format_double(*v) : std::string();
    };
    std::string csv = "fold,group,n,n_pos,avgp,auc,accuracy";
    for (std::size_t k : default_ks())
        csv += ",p@" + std::to_string(k) + ",r@" + std::to_string(k) + ",f1@" +
               std::to_string(k);
    csv += "\n";
    const auto report_row = [&](const std::string& fold, const std::string& group,
                                const EvalReport& r) {
        std::string line = fold + "," + csv_field(group) + "," + std::to_string(r.n) +
                           "," + std::to_string(r.n_pos) + "," + cell(r.avgp) + "," +
                           cell(r.auc) + "," + cell(r.accuracy);
        for (std::size_t k : default_ks()) {
            const auto it = r.at_k.find(k);
            if (it == r.at_k.end()) {
                line += ",,,";
            } else {
                line += "," + format_double(it->second.precision) + "," +
                        format_double(it->second.recall) + "," +
                        format_double(it->second.f1);
            }
        }
        return line + "\n";
    };
    for (std::size_t i = 0; i < result.folds.size(); ++i)
        csv += report_row(std::to_string(i), result.folds[i].group,
                          result.folds[i].report);
    if (!cancelled) csv += report_row("macro", "", result.macro.macro);
    write_file(dir / "results.csv", csv);

    nlohmann::json manifest;
    manifest["command"] = "lomo";
    if (cancelled) manifest["cancelled"] = true;
    manifest["dataset"] = {{"name", ds.name},
                           {"fingerprint", dataset_fingerprint(ds)},
                           {"records", ds.records.size()},
                           {"classes", ds.num_classes}};
    manifest["spec"] = spec.serialize();
    manifest["seed"] = spec.seed;
    manifest["embed_dim"] = opt.embed_dim;
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : result.folds)
        folds.push_back({{"test_group", f.group},
                         {"n_test", f.n_test},
                         {"train_groups", f.train_groups},
                         {"valid_groups", f.valid_groups}});
    manifest["folds"] = folds;
    nlohmann::json skipped = nlohmann::json::object();
    for (const auto& [metric, groups] : result.macro.skipped)
        skipped[metric] = groups;
    manifest["macro_skipped"] = skipped;
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");

    for (const auto& [fold, history] : histories)
        write_file(dir / ("history_fold_" + run_index(fold) + ".jsonl"),
                   history_jsonl(history));
}

} // namespace harness_detail

// One fold per group: train on everything outside the group with a 90:10
// early-stopping holdout, score the held-out group, then macro-average the
// per-group reports. Binary labels only, matching the ranking metrics.
inline LomoResult lomo_evaluate(const Dataset& ds, const ModelSpec& base,
                                const RunOptions& opt) {
    if (ds.num_classes != 2)
        throw UsageError("lomo: needs binary labels, dataset has " +
                         std::to_string(ds.num_classes) + " classes");
    const auto groups = harness_detail::groups_in_order(ds.records);
    if (groups.size() < 2)
        throw InputError("lomo: needs at least 2 groups, have " +
                         std::to_string(groups.size()));
    {
        TrainConfig probe = opt.train;
        if (probe.selection.empty()) probe.selection = "avgp";
        validate_train_config(probe, ds.num_classes);
    }

    struct FoldOutcome {
        LomoFold fold;
        std::vector<ScoredLabel> items;
        std::vector<EpochRecord> history;
    };
    const auto run_fold = [&](std::size_t fi) -> FoldOutcome {
        const std::string& g = groups[fi];
        std::vector<SequencePair> test, rest;
        for (const auto& r : ds.records)
            (r.group == g ? test : rest).push_back(r);

        FoldOutcome out;
        out.fold.group = g;
        out.fold.n_test = test.size();
        const std::uint64_t fold_seed = derive_seed(base.seed, "fold", fi);
        const auto [train_part, valid_part] = harness_detail::inner_holdout(
            rest, fold_seed, &out.fold.train_groups, &out.fold.valid_groups);

        std::vector<SequencePair> seen(train_part);
        seen.insert(seen.end(), valid_part.begin(), valid_part.end());
        const Vocabulary vocab = build_vocabulary(seen, opt.min_count);

        ModelSpec spec = base;
        spec.num_classes = ds.num_classes;
        spec.seed = fold_seed;
        TrainConfig config = harness_detail::cell_config(opt, spec);
        EmbeddingTable emb = prepare_embedding(
            vocab, opt.embed_dim, derive_seed(fold_seed, "embedding"),
            opt.pretrained);
        TrainResult r =
            train_model(spec, encode_records(train_part, vocab),
                        encode_records(valid_part, vocab), vocab, std::move(emb),
                        config);
        out.history = std::move(r.history);

        const auto enc_test = encode_records(test, vocab);
        const auto scores = positive_scores(r.model, enc_test);
        for (std::size_t i = 0; i < test.size(); ++i)
            out.items.push_back({scores[i], test[i].label, g});
        out.fold.report = evaluate_binary(out.items);
        return out;
    };
    auto slots =
        harness_detail::parallel_map_partial(groups.size(), opt.workers, run_fold);
    std::vector<FoldOutcome> outcomes;
    std::vector<std::size_t> fold_index;
    for (std::size_t i = 0; i < slots.size(); ++i)
        if (slots[i]) {
            outcomes.push_back(std::move(*slots[i]));
            fold_index.push_back(i);
        }
    const bool cancelled = outcomes.size() < groups.size();
    if (outcomes.empty())
        throw CancelledError("lomo: interrupted before any fold finished");

    LomoResult result;
    std::vector<ScoredLabel> all_items;
    std::vector<std::pair<std::size_t, std::vector<EpochRecord>>> histories;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        result.folds.push_back(std::move(outcomes[i].fold));
        all_items.insert(all_items.end(), outcomes[i].items.begin(),
                         outcomes[i].items.end());
        histories.emplace_back(fold_index[i], std::move(outcomes[i].history));
    }
    if (!cancelled) result.macro = macro_average(all_items);
    if (!opt.out_dir.empty())
        harness_detail::persist_lomo(ds, base, opt, result, histories, cancelled);
    if (cancelled)
        throw CancelledError("lomo: interrupted after " +
                             std::to_string(outcomes.size()) + " of " +
                             std::to_string(groups.size()) +
                             " folds; completed rows were flushed");
    return result;
}

} // namespace biseq
