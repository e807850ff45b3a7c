#pragma once

// Command-line surface. run() is the whole program minus argv conversion and
// signal wiring, so tests can drive it in-process with captured streams.
// Progress and summaries go to the error stream; stdout carries only
// machine-readable output (eval, enumerate) while experiment results land in
// files under --out.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "biseq/harness.hpp"

namespace biseq {

namespace cli_detail {

inline std::string windows_to_flag(const std::vector<int>& ws) {
    std::vector<std::string> parts;
    for (int w : ws) parts.push_back(std::to_string(w));
    return join(parts, "+");
}

// Spec flags mirror the serialized key=value names, so a row from results.csv
// can be replayed by prefixing each key with --.
struct SpecFlags {
    std::string combination = to_string(ModelSpec{}.combination);
    std::string context = to_string(ModelSpec{}.context_encoder);
    std::string target = to_string(ModelSpec{}.target_encoder);
    std::string cell = to_string(ModelSpec{}.cell);
    std::size_t rnn_size = ModelSpec{}.rnn_size;
    std::string windows = windows_to_flag(ModelSpec{}.filter_windows);
    std::size_t filters = ModelSpec{}.num_filters;
    double l2 = ModelSpec{}.l2_coeff;
    double lr = ModelSpec{}.learning_rate;
    std::size_t classes = 0;  // 0 = taken from the dataset
    std::size_t max_ctx = 0;  // 0 = percentile of the data (enumerate: default)
    std::size_t max_tgt = 0;
    std::uint64_t seed = ModelSpec{}.seed;
    bool bilinear_bias = ModelSpec{}.bilinear_bias;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--combination", combination,
                        "concat | bilinear | conditional_state | conditional_input"
                        " | conditional_state_input | concat_sentence")
            ->capture_default_str();
        cmd->add_option("--context", context, "Context encoder: cbow | rnn | cnn")
            ->capture_default_str();
        cmd->add_option("--target", target, "Target encoder: rnn | cnn")
            ->capture_default_str();
        cmd->add_option("--cell", cell, "Recurrent cell: gru | lstm")
            ->capture_default_str();
        cmd->add_option("--rnn_size", rnn_size, "Hidden state width")
            ->capture_default_str();
        cmd->add_option("--windows", windows, "CNN window sizes, e.g. 3+4+5")
            ->capture_default_str();
        cmd->add_option("--filters", filters, "CNN filters per window")
            ->capture_default_str();
        cmd->add_option("--l2", l2, "L2 penalty on CNN filters")
            ->capture_default_str();
        cmd->add_option("--lr", lr, "Learning rate")->capture_default_str();
        cmd->add_option("--classes", classes,
                        "Label arity; 0 takes it from the dataset")
            ->capture_default_str();
        cmd->add_option("--max_ctx", max_ctx,
                        "Context length cap; 0 picks the --percentile value")
            ->capture_default_str();
        cmd->add_option("--max_tgt", max_tgt,
                        "Target length cap; 0 picks the --percentile value")
            ->capture_default_str();
        cmd->add_option("--seed", seed, "Model seed (init, shuffling, grid cells)")
            ->capture_default_str();
        cmd->add_option("--bilinear_bias", bilinear_bias,
                        "Include the bias class in bilinear scoring")
            ->capture_default_str();
    }

    ModelSpec to_spec() const {
        ModelSpec s;
        s.combination = parse_combination(combination);
        s.context_encoder = parse_encoder(context);
        s.target_encoder = parse_encoder(target);
        s.cell = parse_cell(cell);
        s.rnn_size = rnn_size;
        s.filter_windows = ModelSpec::parse_windows(windows);
        s.num_filters = filters;
        s.l2_coeff = l2;
        s.learning_rate = lr;
        if (classes > 0) s.num_classes = classes;
        if (max_ctx > 0) s.max_ctx_len = max_ctx;
        if (max_tgt > 0) s.max_tgt_len = max_tgt;
        s.seed = seed;
        s.bilinear_bias = bilinear_bias;
        return s;
    }
};

struct DataFlags {
    std::string path;
    std::string format = "tsv-pairs";
    std::string name;
    std::vector<double> split = {0.6, 0.1, 0.3};
    std::uint64_t split_seed = 1;
    double percentile = 99.0;

    void add_to(CLI::App* cmd, bool with_split) {
        cmd->add_option("--data", path, "Dataset file")->required();
        cmd->add_option("--format", format, "tsv-pairs | snli-jsonl | wikiqa-tsv")
            ->capture_default_str();
        cmd->add_option("--name", name, "Dataset name (default: file stem)");
        if (with_split) {
            cmd->add_option("--split", split,
                            "Train,valid,test ratios for the grouped split")
                ->delimiter(',')
                ->capture_default_str();
            cmd->add_option("--split-seed", split_seed,
                            "Seed for the grouped split, independent of --seed")
                ->capture_default_str();
        }
        cmd->add_option("--percentile", percentile,
                        "Length percentile used when --max_ctx/--max_tgt are 0")
            ->capture_default_str();
    }

    Dataset load() const {
        const std::string n =
            !name.empty() ? name : std::filesystem::path(path).stem().string();
        return load_dataset(path, format, n);
    }
};

struct RunFlags {
    TrainConfig train;
    std::string embeddings;
    std::size_t embed_dim = 50;
    std::size_t min_count = 1;
    std::size_t workers = 1;
    std::string out_dir;
    bool full_table = false;
    CLI::Option* patience_opt = nullptr;

    void add_to(CLI::App* cmd, bool with_full_table) {
        cmd->add_option("--embeddings", embeddings,
                        "Pretrained word vectors; their width overrides"
                        " --embed-dim");
        cmd->add_option("--embed-dim", embed_dim,
                        "Embedding width for randomly initialized vectors")
            ->capture_default_str();
        cmd->add_option("--min-count", min_count,
                        "Keep vocabulary tokens seen at least this often")
            ->capture_default_str();
        cmd->add_option("--batch-size", train.batch_size, "Examples per step")
            ->capture_default_str();
        cmd->add_option("--epochs", train.max_epochs, "Maximum training epochs")
            ->capture_default_str();
        patience_opt =
            cmd->add_option("--patience", train.patience,
                            "Epochs without validation improvement before"
                            " stopping (default: min(5, --epochs))")
                ->capture_default_str();
        cmd->add_option("--selection", train.selection,
                        "Validation metric: avgp | auc | accuracy"
                        " (default: avgp for binary labels, else accuracy)");
        cmd->add_option("--clip", train.clip_norm,
                        "Global gradient norm clip; 0 disables")
            ->capture_default_str();
        cmd->add_option("--positive-weight", train.positive_weight,
                        "Loss weight of label-1 examples (binary only)")
            ->capture_default_str();
        cmd->add_option("--workers", workers,
                        "Parallel cells/folds; BISEQ_WORKERS overrides")
            ->capture_default_str();
        cmd->add_option("--out", out_dir,
                        "Directory for results.csv, manifest.json and histories");
        if (with_full_table)
            cmd->add_flag("--full-table", full_table,
                          "Score every grid cell on test, not just the winner");
    }

    RunOptions to_options(const PretrainedVectors* pv) const {
        RunOptions opt;
        opt.train = train;
        if (patience_opt && !patience_opt->count() &&
            opt.train.patience > opt.train.max_epochs)
            opt.train.patience = opt.train.max_epochs;
        opt.embed_dim = pv ? pv->dim : embed_dim;
        opt.min_count = min_count;
        opt.pretrained = pv;
        opt.workers = workers;
        opt.out_dir = out_dir;
        opt.full_table = full_table;
        return opt;
    }
};

inline void apply_worker_env(std::size_t* workers) {
    const char* env = std::getenv("BISEQ_WORKERS");
    if (!env) return;
    const std::string text(env);
    if (!is_integer_literal(text) || parse_int(text, "BISEQ_WORKERS") < 1)
        throw ConfigError("BISEQ_WORKERS must be a positive integer, got '" +
                          text + "'");
    *workers = static_cast<std::size_t>(parse_int(text, "BISEQ_WORKERS"));
}

inline std::array<double, 3> split_ratios(const std::vector<double>& split) {
    if (split.size() != 3)
        throw InputError("--split needs three comma-separated ratios");
    return {split[0], split[1], split[2]};
}

inline void resolve_classes(ModelSpec* spec, const SpecFlags& flags,
                            const Dataset& ds) {
    if (flags.classes > 0 && flags.classes != ds.num_classes)
        throw InputError("--classes " + std::to_string(flags.classes) +
                         " does not match the dataset (" +
                         std::to_string(ds.num_classes) + " classes)");
    spec->num_classes = ds.num_classes;
}

inline void resolve_lengths(ModelSpec* spec, const SpecFlags& flags,
                            const Dataset& ds, double percentile,
                            std::ostream& err) {
    if (flags.max_ctx > 0 && flags.max_tgt > 0) return;
    const auto [ctx, tgt] = suggest_max_lengths(ds, percentile);
    if (flags.max_ctx == 0) spec->max_ctx_len = ctx;
    if (flags.max_tgt == 0) spec->max_tgt_len = tgt;
    err << "length caps: context " << spec->max_ctx_len << ", target "
        << spec->max_tgt_len << " (p" << percentile << ")\n";
}

inline void check_spec(const ModelSpec& spec) {
    const auto violations = validate_spec(spec);
    if (!violations.empty())
        throw ConfigError("spec: " + join(violations, "; "));
}

inline std::string resolved_selection(const std::string& flag,
                                      std::size_t num_classes) {
    if (!flag.empty()) return flag;
    return num_classes == 2 ? "avgp" : "accuracy";
}

inline std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

struct EvalFlags {
    std::string scores;
    std::vector<std::size_t> ks;
    bool by_group = false;
};

struct SynthFlags {
    std::size_t n = 1000;
    std::size_t groups = 5;
    std::size_t vocab = 50;
    std::uint64_t seed = 1;
    std::string out_file;
};

struct GridFlags {
    std::vector<std::string> cells;
    std::vector<std::size_t> rnn_sizes;
    std::vector<std::string> window_sets;
    std::vector<std::size_t> filter_counts;
    std::vector<double> l2_coeffs;
    std::vector<double> learning_rates;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--grid-cells", cells, "Cell axis, e.g. gru,lstm")
            ->delimiter(',');
        cmd->add_option("--grid-rnn-sizes", rnn_sizes,
                        "Hidden width axis, e.g. 50,100,200")
            ->delimiter(',');
        cmd->add_option("--grid-windows", window_sets,
                        "Window set axis; sets joined by +, e.g. 3,3+4,3+4+5")
            ->delimiter(',');
        cmd->add_option("--grid-filters", filter_counts,
                        "Filter count axis, e.g. 10,20,40")
            ->delimiter(',');
        cmd->add_option("--grid-l2", l2_coeffs, "L2 axis, e.g. 0,0.01,0.001")
            ->delimiter(',');
        cmd->add_option("--grid-lr", learning_rates,
                        "Learning rate axis, e.g. 0.001,0.0001")
            ->delimiter(',');
    }

    GridSpace to_space() const {
        GridSpace space;
        if (!cells.empty()) {
            space.cells.clear();
            for (const auto& c : cells) space.cells.push_back(parse_cell(c));
        }
        if (!rnn_sizes.empty()) space.rnn_sizes = rnn_sizes;
        if (!window_sets.empty()) {
            space.window_sets.clear();
            for (const auto& ws : window_sets)
                space.window_sets.push_back(ModelSpec::parse_windows(ws));
        }
        if (!filter_counts.empty()) space.filter_counts = filter_counts;
        if (!l2_coeffs.empty()) space.l2_coeffs = l2_coeffs;
        if (!learning_rates.empty()) space.learning_rates = learning_rates;
        return space;
    }
};

inline std::optional<PretrainedVectors> maybe_vectors(const std::string& path) {
    if (path.empty()) return std::nullopt;
    return read_embedding_file(path);
}

inline int do_train(const DataFlags& data, const SpecFlags& spec_flags,
                    const RunFlags& run_flags, std::ostream& err) {
    const Dataset ds = data.load();
    ModelSpec spec = spec_flags.to_spec();
    resolve_classes(&spec, spec_flags, ds);
    resolve_lengths(&spec, spec_flags, ds, data.percentile, err);
    check_spec(spec);

    const Splits sp = split_dataset(ds, split_ratios(data.split), data.split_seed);
    err << "split: " << sp.train.size() << " train / " << sp.valid.size()
        << " valid / " << sp.test.size() << " test records\n";

    const auto pv = maybe_vectors(run_flags.embeddings);
    const RunOptions opt = run_flags.to_options(pv ? &*pv : nullptr);

    std::vector<SequencePair> seen(sp.train);
    seen.insert(seen.end(), sp.valid.begin(), sp.valid.end());
    const Vocabulary vocab = build_vocabulary(seen, opt.min_count);
    err << "vocabulary: " << vocab.size() << " entries\n";

    TrainConfig config = harness_detail::cell_config(opt, spec);
    config.selection = resolved_selection(opt.train.selection, ds.num_classes);

    EmbeddingTable emb = prepare_embedding(vocab, opt.embed_dim,
                                           derive_seed(spec.seed, "embedding"),
                                           opt.pretrained);
    const auto progress = [&](const EpochRecord& rec) {
        err << "epoch " << rec.epoch << "  loss " << fmt4(rec.train_loss) << "  "
            << config.selection << " " << fmt4(rec.valid_value) << "  ("
            << fmt4(rec.seconds) << "s)\n";
    };
    TrainResult r =
        train_model(spec, encode_records(sp.train, vocab),
                    encode_records(sp.valid, vocab), vocab, std::move(emb),
                    config, progress);
    const double test_value = train_detail::selection_value(
        r.model, encode_records(sp.test, vocab), config.selection);
    err << "best epoch " << r.best_epoch << ": valid " << config.selection << " "
        << fmt4(r.best_value) << ", test " << fmt4(test_value) << "\n";

    if (!opt.out_dir.empty()) {
        GridResult result;
        result.selection = config.selection;
        result.rows.push_back(
            {spec, 0, r.best_value, test_value, r.best_epoch});
        result.winner_valid = r.best_value;
        result.winner_test = test_value;
        result.winner_model = std::move(r.model);
        harness_detail::persist_grid(ds, sp, spec, opt, result,
                                     {{0, r.history}}, "train", false);
        err << "wrote " << opt.out_dir << "/results.csv\n";
    }
    return 0;
}

inline int do_grid(const DataFlags& data, const SpecFlags& spec_flags,
                   const GridFlags& grid_flags, const RunFlags& run_flags,
                   std::ostream& err) {
    const Dataset ds = data.load();
    ModelSpec base = spec_flags.to_spec();
    resolve_classes(&base, spec_flags, ds);
    resolve_lengths(&base, spec_flags, ds, data.percentile, err);

    const Splits sp = split_dataset(ds, split_ratios(data.split), data.split_seed);
    err << "split: " << sp.train.size() << " train / " << sp.valid.size()
        << " valid / " << sp.test.size() << " test records\n";

    const auto pv = maybe_vectors(run_flags.embeddings);
    const RunOptions opt = run_flags.to_options(pv ? &*pv : nullptr);
    const GridResult r = grid_search(ds, sp, base, grid_flags.to_space(), opt);

    err << "trained " << r.rows.size() << " cells (" << r.excluded
        << " excluded); winner by " << r.selection << ":\n  "
        << r.winner_model.spec.serialize() << "\n  valid "
        << fmt4(r.winner_valid) << ", test " << fmt4(r.winner_test) << "\n";
    if (!opt.out_dir.empty()) err << "wrote " << opt.out_dir << "/results.csv\n";
    return 0;
}

inline int do_lomo(const DataFlags& data, const SpecFlags& spec_flags,
                   const RunFlags& run_flags, std::ostream& err) {
    const Dataset ds = data.load();
    ModelSpec spec = spec_flags.to_spec();
    resolve_classes(&spec, spec_flags, ds);
    resolve_lengths(&spec, spec_flags, ds, data.percentile, err);
    check_spec(spec);

    const auto pv = maybe_vectors(run_flags.embeddings);
    const RunOptions opt = run_flags.to_options(pv ? &*pv : nullptr);
    const LomoResult r = lomo_evaluate(ds, spec, opt);

    err << r.folds.size() << " folds; macro:";
    if (r.macro.macro.avgp) err << " avgp " << fmt4(*r.macro.macro.avgp);
    if (r.macro.macro.auc) err << " auc " << fmt4(*r.macro.macro.auc);
    if (r.macro.macro.accuracy)
        err << " accuracy " << fmt4(*r.macro.macro.accuracy);
    err << "\n";
    for (const auto& [metric, groups] : r.macro.skipped)
        err << "macro " << metric << " skipped undefined folds: "
            << join(groups, ", ") << "\n";
    if (!opt.out_dir.empty()) err << "wrote " << opt.out_dir << "/results.csv\n";
    return 0;
}

inline void print_report(const EvalReport& r, const std::string& prefix,
                         std::ostream& out) {
    out << prefix << "n\t" << r.n << "\n";
    out << prefix << "n_pos\t" << r.n_pos << "\n";
    if (r.avgp) out << prefix << "avgp\t" << format_double(*r.avgp) << "\n";
    if (r.auc) out << prefix << "auc\t" << format_double(*r.auc) << "\n";
    if (r.accuracy)
        out << prefix << "accuracy\t" << format_double(*r.accuracy) << "\n";
    for (const auto& [k, prf] : r.at_k) {
        out << prefix << "p@" << k << "\t" << format_double(prf.precision) << "\n";
        out << prefix << "r@" << k << "\t" << format_double(prf.recall) << "\n";
        out << prefix << "f1@" << k << "\t" << format_double(prf.f1) << "\n";
    }
}

inline int do_eval(const EvalFlags& flags, std::ostream& out, std::ostream& err) {
    const auto items = read_score_file(flags.scores);
    const auto report = evaluate_binary(items, flags.ks);
    print_report(report, "", out);
    if (flags.by_group) {
        bool any = false;
        for (const auto& it : items) any |= !it.group.empty();
        if (!any)
            throw InputError("--by-group: score file has no group column");
        const MacroReport macro = macro_average(items, flags.ks);
        for (const auto& [group, rep] : macro.per_group)
            print_report(rep, group + "\t", out);
        print_report(macro.macro, "(macro)\t", out);
        for (const auto& [metric, groups] : macro.skipped)
            err << "macro " << metric << " skipped undefined groups: "
                << join(groups, ", ") << "\n";
    }
    return 0;
}

inline int do_enumerate(const SpecFlags& spec_flags, std::ostream& out) {
    ModelSpec base = spec_flags.to_spec();
    for (const ModelSpec& spec : enumerate_architectures(base))
        out << spec.serialize() << "\n";
    return 0;
}

inline int do_synth(const SynthFlags& flags, std::ostream& err) {
    if (flags.vocab < 6)
        throw InputError("--vocab must be at least 6 (5 keys plus fillers)");
    if (flags.out_file.empty()) throw InputError("--out is required");
    const Dataset ds = make_containment_dataset(flags.n, flags.groups,
                                                flags.vocab - 5, flags.seed);
    write_tsv_pairs(flags.out_file, ds);
    err << "wrote " << ds.records.size() << " records ("
        << harness_detail::groups_in_order(ds.records).size() << " groups) to "
        << flags.out_file << "\n";
    return 0;
}

} // namespace cli_detail

inline int run(std::vector<std::string> args, std::ostream& out,
               std::ostream& err) {
    using namespace cli_detail;
    CLI::App app{"Bi-sequence classification experiments"};
    app.name("biseq");
    app.require_subcommand(1);
    app.fallthrough(); // lets --config follow the subcommand it configures
    app.set_config("--config", "", "Key-value config file; sections per command");

    CLI::App* train_cmd =
        app.add_subcommand("train", "Train one model on a grouped split");
    CLI::App* grid_cmd =
        app.add_subcommand("grid", "Hyperparameter grid search");
    CLI::App* lomo_cmd =
        app.add_subcommand("lomo", "Leave-one-group-out evaluation");
    CLI::App* eval_cmd =
        app.add_subcommand("eval", "Ranking metrics over a score file");
    CLI::App* enum_cmd =
        app.add_subcommand("enumerate", "Print every architecture variant");
    CLI::App* synth_cmd =
        app.add_subcommand("synth", "Emit the synthetic containment dataset");

    DataFlags train_data, grid_data, lomo_data;
    SpecFlags train_spec, grid_spec, lomo_spec, enum_spec;
    RunFlags train_run, grid_run, lomo_run;
    GridFlags grid_axes;
    EvalFlags eval_flags;
    SynthFlags synth_flags;

    train_data.add_to(train_cmd, true);
    train_spec.add_to(train_cmd);
    train_run.add_to(train_cmd, false);

    grid_data.add_to(grid_cmd, true);
    grid_spec.add_to(grid_cmd);
    grid_axes.add_to(grid_cmd);
    grid_run.add_to(grid_cmd, true);

    lomo_data.add_to(lomo_cmd, false);
    lomo_spec.add_to(lomo_cmd);
    lomo_run.add_to(lomo_cmd, false);

    eval_cmd->add_option("--scores", eval_flags.scores,
                         "TSV of score<TAB>label[<TAB>group] rows")
        ->required();
    eval_cmd->add_option("--k", eval_flags.ks,
                         "Cutoffs for p/r/f1@K (default 200,50,20,10,5)")
        ->delimiter(',');
    eval_cmd->add_flag("--by-group", eval_flags.by_group,
                       "Also report per-group and macro-averaged metrics");

    enum_spec.add_to(enum_cmd);

    synth_cmd->add_option("--n", synth_flags.n, "Number of records")
        ->capture_default_str();
    synth_cmd->add_option("--groups", synth_flags.groups, "Number of groups")
        ->capture_default_str();
    synth_cmd->add_option("--vocab", synth_flags.vocab,
                          "Word inventory: 5 keys plus fillers")
        ->capture_default_str();
    synth_cmd->add_option("--seed", synth_flags.seed, "Generator seed")
        ->capture_default_str();
    synth_cmd->add_option("--out", synth_flags.out_file, "Output TSV file")
        ->required();

    const auto contextual_help = [&](CLI::AppFormatMode mode) {
        const auto subs = app.get_subcommands();
        return subs.empty() ? app.help("", mode) : subs[0]->help("", mode);
    };

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
        apply_worker_env(&train_run.workers);
        apply_worker_env(&grid_run.workers);
        apply_worker_env(&lomo_run.workers);
        if (train_cmd->parsed())
            return do_train(train_data, train_spec, train_run, err);
        if (grid_cmd->parsed())
            return do_grid(grid_data, grid_spec, grid_axes, grid_run, err);
        if (lomo_cmd->parsed()) return do_lomo(lomo_data, lomo_spec, lomo_run, err);
        if (eval_cmd->parsed()) return do_eval(eval_flags, out, err);
        if (enum_cmd->parsed()) return do_enumerate(enum_spec, out);
        if (synth_cmd->parsed()) return do_synth(synth_flags, err);
        err << app.help();
        return 1;
    } catch (const CLI::CallForHelp&) {
        out << contextual_help(CLI::AppFormatMode::Normal);
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << contextual_help(CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n"
            << contextual_help(CLI::AppFormatMode::Normal);
        return 1;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return 2;
    } catch (const CancelledError& e) {
        err << e.what() << "\n";
        return 130;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace biseq
