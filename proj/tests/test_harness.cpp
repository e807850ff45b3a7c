#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "biseq/harness.hpp"
#include "support.hpp"

using namespace biseq;

namespace {

struct TempFile {
    std::filesystem::path path;
    explicit TempFile(const std::string& name, const std::string& content)
        : path(std::filesystem::temp_directory_path() / name) {
        std::ofstream out(path);
        out << content;
    }
    ~TempFile() { std::filesystem::remove(path); }
};

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name)
        : path(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ModelSpec tiny_rnn_spec() {
    ModelSpec s;
    s.combination = Combination::Concat;
    s.context_encoder = EncoderKind::Rnn;
    s.target_encoder = EncoderKind::Rnn;
    s.rnn_size = 8;
    s.max_ctx_len = 4;
    s.max_tgt_len = 12;
    return s;
}

RunOptions quick_options() {
    RunOptions opt;
    opt.train.batch_size = 32;
    opt.train.max_epochs = 3;
    opt.train.patience = 3;
    opt.embed_dim = 12;
    return opt;
}

} // namespace

TEST_CASE("tsv pairs load with context as the fallback group") {
    TempFile f("biseq_pairs.tsv",
               "the claim\tsupports it\t1\n"
               "the claim\tagainst it\t0\n"
               "another claim\tneutral words\t0\n");
    const Dataset ds = load_tsv_pairs(f.path.string(), "demo");
    REQUIRE(ds.records.size() == 3);
    CHECK(ds.num_classes == 2);
    CHECK(ds.label_names == std::vector<std::string>{"0", "1"});
    CHECK(ds.records[0].label == 1);
    CHECK(ds.records[0].group == "the claim");
    CHECK(ds.records[2].group == "another claim");
}

TEST_CASE("tsv pairs honor an explicit group column") {
    TempFile f("biseq_pairs4.tsv",
               "c one\tt one\tyes\tm1\n"
               "c two\tt two\tno\tm2\n");
    const Dataset ds = load_tsv_pairs(f.path.string(), "demo");
    CHECK(ds.records[0].group == "m1");
    // String labels map in lexicographic order.
    CHECK(ds.label_names == std::vector<std::string>{"no", "yes"});
    CHECK(ds.records[0].label == 1);
    CHECK(ds.records[1].label == 0);
}

TEST_CASE("tsv pairs reject malformed rows by line") {
    TempFile missing("biseq_missing.tsv", "ctx\ttgt\t1\nctx only\n");
    try {
        load_tsv_pairs(missing.path.string(), "demo");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    TempFile ragged("biseq_ragged.tsv", "c\tt\t1\tg\nc\tt\t0\n");
    CHECK_THROWS_AS(load_tsv_pairs(ragged.path.string(), "demo"), ParseError);
    TempFile blank_ctx("biseq_blankctx.tsv", " \tt\t1\n");
    CHECK_THROWS_AS(load_tsv_pairs(blank_ctx.path.string(), "demo"), ParseError);
    TempFile empty("biseq_empty.tsv", "\n\n");
    CHECK_THROWS_AS(load_tsv_pairs(empty.path.string(), "demo"), InputError);
    CHECK_THROWS_AS(load_tsv_pairs("/nonexistent.tsv", "demo"), InputError);
}

TEST_CASE("integer labels must be dense from zero") {
    TempFile holes("biseq_holes.tsv", "c\tt\t0\nc2\tt2\t2\n");
    try {
        load_tsv_pairs(holes.path.string(), "demo");
        FAIL("expected InputError");
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("1 never appears") != std::string::npos);
    }
    TempFile single("biseq_single.tsv", "c\tt\t0\nc2\tt2\t0\n");
    CHECK_THROWS_AS(load_tsv_pairs(single.path.string(), "demo"), InputError);
}

TEST_CASE("entailment jsonl uses the fixed label mapping and drops ungraded rows") {
    TempFile f("biseq_snli.jsonl",
               R"({"sentence1":"a man sleeps","sentence2":"a person rests","gold_label":"entailment"})"
               "\n"
               R"({"sentence1":"a man sleeps","sentence2":"a person runs","gold_label":"contradiction"})"
               "\n"
               R"({"sentence1":"a man sleeps","sentence2":"a person snores","gold_label":"-"})"
               "\n"
               R"({"sentence1":"dogs bark","sentence2":"it is loud","gold_label":"neutral"})"
               "\n");
    const Dataset ds = load_snli_jsonl(f.path.string(), "nli");
    REQUIRE(ds.records.size() == 3);
    CHECK(ds.num_classes == 3);
    CHECK(ds.label_names ==
          std::vector<std::string>{"entailment", "contradiction", "neutral"});
    CHECK(ds.records[0].label == 0);
    CHECK(ds.records[1].label == 1);
    CHECK(ds.records[2].label == 2);
    CHECK(ds.records[0].group == "a man sleeps");
}

TEST_CASE("entailment jsonl rejects bad rows with line numbers") {
    TempFile bad("biseq_badlabel.jsonl",
                 R"({"sentence1":"a","sentence2":"b","gold_label":"maybe"})" "\n");
    try {
        load_snli_jsonl(bad.path.string(), "nli");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 1") != std::string::npos);
        CHECK(std::string(e.what()).find("maybe") != std::string::npos);
    }
    TempFile missing("biseq_missing.jsonl", R"({"sentence1":"a","gold_label":"neutral"})" "\n");
    CHECK_THROWS_AS(load_snli_jsonl(missing.path.string(), "nli"), ParseError);
    TempFile notjson("biseq_notjson.jsonl", "nope\n");
    CHECK_THROWS_AS(load_snli_jsonl(notjson.path.string(), "nli"), ParseError);
    TempFile all_dropped("biseq_dropped.jsonl",
                         R"({"sentence1":"a","sentence2":"b","gold_label":"-"})" "\n");
    CHECK_THROWS_AS(load_snli_jsonl(all_dropped.path.string(), "nli"), InputError);
}

TEST_CASE("qa tsv reads header columns case-insensitively") {
    TempFile f("biseq_qa.tsv",
               "QuestionID\tQuestion\tDocumentTitle\tSentence\tLabel\n"
               "Q1\thow big is it\tT\tvery big indeed\t1\n"
               "Q1\thow big is it\tT\tunrelated words\t0\n"
               "Q2\twho did it\tT\tsomeone did\t0\n"
               "Q2\twho did it\tT\tthey did it\t1\n");
    const Dataset ds = load_wikiqa_tsv(f.path.string(), "qa");
    REQUIRE(ds.records.size() == 4);
    CHECK(ds.num_classes == 2);
    CHECK(ds.records[0].context == "how big is it");
    CHECK(ds.records[0].target == "very big indeed");
    CHECK(ds.records[0].group == "Q1");
    CHECK(ds.records[2].group == "Q2");
}

TEST_CASE("qa tsv demands the named columns") {
    TempFile f("biseq_qa_bad.tsv", "QuestionID\tQuestion\tSentence\nQ1\tq\ts\n");
    CHECK_THROWS_AS(load_wikiqa_tsv(f.path.string(), "qa"), FormatError);
    TempFile ragged("biseq_qa_ragged.tsv",
                    "Question\tSentence\tLabel\nq\ts\t1\nq2\ts2\n");
    CHECK_THROWS_AS(load_wikiqa_tsv(ragged.path.string(), "qa"), ParseError);
}

TEST_CASE("load_dataset dispatches on format") {
    TempFile f("biseq_dispatch.tsv", "c\tt\t1\nc2\tt2\t0\n");
    const Dataset ds = load_dataset(f.path.string(), "tsv-pairs", "demo");
    CHECK(ds.name == "demo");
    CHECK_THROWS_AS(load_dataset(f.path.string(), "csv", "demo"), ConfigError);
}

TEST_CASE("tsv write and reload round-trips records") {
    Dataset ds = make_containment_dataset(40, 4, 30, 7);
    TempFile f("biseq_roundtrip.tsv", "");
    write_tsv_pairs(f.path.string(), ds);
    const Dataset back = load_tsv_pairs(f.path.string(), ds.name);
    REQUIRE(back.records.size() == ds.records.size());
    CHECK(back.num_classes == ds.num_classes);
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        CHECK(back.records[i].context == ds.records[i].context);
        CHECK(back.records[i].target == ds.records[i].target);
        CHECK(back.records[i].label == ds.records[i].label);
        CHECK(back.records[i].group == ds.records[i].group);
    }
    CHECK(dataset_fingerprint(back) == dataset_fingerprint(ds));
}

TEST_CASE("the containment task is labeled by exact membership") {
    const Dataset ds = make_containment_dataset(200, 5, 30, 11);
    REQUIRE(ds.records.size() == 200);
    CHECK(ds.num_classes == 2);
    std::set<std::string> groups;
    std::size_t positives = 0;
    for (const auto& r : ds.records) {
        groups.insert(r.group);
        const auto words = tokenize(r.target);
        const bool contains =
            std::find(words.begin(), words.end(), r.context) != words.end();
        REQUIRE(contains == (r.label == 1));
        // Negatives carry no key token at all.
        if (r.label == 0)
            for (const auto& w : words) REQUIRE(w.find("key") != 0);
        positives += r.label == 1;
    }
    CHECK(groups.size() == 5);
    CHECK(positives > 60);
    CHECK(positives < 140);
    const Dataset again = make_containment_dataset(200, 5, 30, 11);
    CHECK(dataset_fingerprint(again) == dataset_fingerprint(ds));
    const Dataset other = make_containment_dataset(200, 5, 30, 12);
    CHECK(dataset_fingerprint(other) != dataset_fingerprint(ds));
}

TEST_CASE("grouped split keeps every group in one part") {
    const Dataset ds = make_containment_dataset(300, 10, 30, 3);
    const Splits sp = split_dataset(ds, {0.6, 0.1, 0.3}, 5);
    CHECK(!sp.train.empty());
    CHECK(!sp.valid.empty());
    CHECK(!sp.test.empty());
    CHECK(sp.train.size() + sp.valid.size() + sp.test.size() == ds.records.size());
    std::set<std::string> train_groups(sp.groups[0].begin(), sp.groups[0].end());
    std::set<std::string> valid_groups(sp.groups[1].begin(), sp.groups[1].end());
    std::set<std::string> test_groups(sp.groups[2].begin(), sp.groups[2].end());
    CHECK(train_groups.size() + valid_groups.size() + test_groups.size() == 10);
    for (const auto& g : train_groups) {
        CHECK(!valid_groups.count(g));
        CHECK(!test_groups.count(g));
    }
    for (const auto& r : sp.train) CHECK(train_groups.count(r.group));
    for (const auto& r : sp.valid) CHECK(valid_groups.count(r.group));
    for (const auto& r : sp.test) CHECK(test_groups.count(r.group));
    // The train part should carry the largest share.
    CHECK(sp.train.size() > sp.valid.size());
    CHECK(sp.train.size() > sp.test.size());
}

TEST_CASE("splits are deterministic in the seed") {
    const Dataset ds = make_containment_dataset(120, 8, 30, 3);
    const Splits a = split_dataset(ds, {0.6, 0.1, 0.3}, 42);
    const Splits b = split_dataset(ds, {0.6, 0.1, 0.3}, 42);
    CHECK(a.groups == b.groups);
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i)
        CHECK(a.train[i].target == b.train[i].target);
}

TEST_CASE("split validates ratios and group count") {
    const Dataset ds = make_containment_dataset(50, 5, 30, 3);
    CHECK_THROWS_AS(split_dataset(ds, {1.0, 0.0, 0.0}, 1), InputError);
    CHECK_THROWS_AS(split_dataset(ds, {0.5, 0.2, 0.2}, 1), InputError);
    const Dataset two = make_containment_dataset(50, 2, 30, 3);
    CHECK_THROWS_AS(split_dataset(two, {0.6, 0.1, 0.3}, 1), InputError);
}

TEST_CASE("split preserves record order inside each part") {
    const Dataset ds = make_containment_dataset(90, 6, 30, 13);
    const Splits sp = split_dataset(ds, {0.6, 0.1, 0.3}, 7);
    const auto check_subsequence = [&](const std::vector<SequencePair>& part) {
        std::size_t cursor = 0;
        for (const auto& r : part) {
            while (cursor < ds.records.size() &&
                   (ds.records[cursor].target != r.target ||
                    ds.records[cursor].context != r.context))
                ++cursor;
            REQUIRE(cursor < ds.records.size());
            ++cursor;
        }
    };
    check_subsequence(sp.train);
    check_subsequence(sp.valid);
    check_subsequence(sp.test);
}

TEST_CASE("length suggestion uses the nearest-rank percentile") {
    Dataset ds;
    ds.name = "lens";
    ds.num_classes = 2;
    ds.label_names = {"0", "1"};
    for (std::size_t i = 1; i <= 100; ++i) {
        SequencePair r;
        r.context = "a b c d e f g";
        std::vector<std::string> words(i, "w");
        r.target = join(words, " ");
        r.label = static_cast<int>(i % 2);
        r.group = "g";
        ds.records.push_back(std::move(r));
    }
    const auto [ctx99, tgt99] = suggest_max_lengths(ds, 99.0);
    CHECK(ctx99 == 7);
    CHECK(tgt99 == 99);
    const auto [ctx100, tgt100] = suggest_max_lengths(ds, 100.0);
    CHECK(ctx100 == 7);
    CHECK(tgt100 == 100);
    const auto [ctx1, tgt1] = suggest_max_lengths(ds, 1.0);
    CHECK(ctx1 == 7);
    CHECK(tgt1 == 1);
    CHECK_THROWS_AS(suggest_max_lengths(ds, 0.0), InputError);
    CHECK_THROWS_AS(suggest_max_lengths(ds, 101.0), InputError);
    CHECK_THROWS_AS(suggest_max_lengths(Dataset{}, 99.0), InputError);
}

TEST_CASE("grid expansion only touches the relevant axes") {
    ModelSpec rnn_only = tiny_rnn_spec();
    const GridEnumeration a = enumerate_grid(rnn_only, GridSpace{});
    CHECK(a.cells.size() == 2 * 7 * 3);
    CHECK(a.excluded == 0);
    for (const auto& spec : a.cells) {
        CHECK(spec.filter_windows == rnn_only.filter_windows);
        CHECK(spec.num_filters == rnn_only.num_filters);
        CHECK(spec.l2_coeff == rnn_only.l2_coeff);
    }

    ModelSpec cnn_only = tiny_rnn_spec();
    cnn_only.context_encoder = EncoderKind::Cbow;
    cnn_only.target_encoder = EncoderKind::Cnn;
    const GridEnumeration b = enumerate_grid(cnn_only, GridSpace{});
    CHECK(b.cells.size() == 4 * 5 * 4 * 3);
    CHECK(b.excluded == 0);
    for (const auto& spec : b.cells) CHECK(spec.cell == cnn_only.cell);
}

TEST_CASE("state-seeding cnn grids drop mismatched cells and report counts") {
    ModelSpec cond = tiny_rnn_spec();
    cond.combination = Combination::ConditionalState;
    cond.context_encoder = EncoderKind::Cnn;
    cond.target_encoder = EncoderKind::Rnn;

    // The default grid has no (filters, windows, rnn_size) combination with
    // filters * |windows| == rnn_size, so everything is excluded.
    CHECK_THROWS_AS(enumerate_grid(cond, GridSpace{}), ConfigError);

    GridSpace space;
    space.rnn_sizes = {120};
    space.window_sets = {{3}, {3, 4, 5}};
    space.filter_counts = {40, 64};
    const GridEnumeration e = enumerate_grid(cond, space);
    CHECK(e.cells.size() == 2 * 4 * 3);
    CHECK(e.excluded == 2 * 2 * 2 * 4 * 3 - e.cells.size());
    for (const auto& spec : e.cells) {
        CHECK(spec.rnn_size == 120);
        CHECK(spec.num_filters * spec.filter_windows.size() == 120);
    }
    CHECK(!e.exclusion_samples.empty());
}

TEST_CASE("a one-cell grid trains exactly one model") {
    const Dataset ds = make_containment_dataset(120, 6, 30, 3);
    const Splits sp = split_dataset(ds, {0.6, 0.1, 0.3}, 5);
    GridSpace space;
    space.cells = {CellKind::Gru};
    space.rnn_sizes = {8};
    space.learning_rates = {0.005};
    const GridResult r = grid_search(ds, sp, tiny_rnn_spec(), space, quick_options());
    REQUIRE(r.rows.size() == 1);
    CHECK(r.winner_cell == 0);
    CHECK(r.rows[0].valid_value == r.winner_valid);
    REQUIRE(r.rows[0].test_value);
    CHECK(*r.rows[0].test_value == r.winner_test);
    CHECK(r.selection == "avgp");
}

TEST_CASE("the grid winner is chosen by validation metric") {
    const Dataset ds = make_containment_dataset(160, 8, 30, 3);
    const Splits sp = split_dataset(ds, {0.6, 0.1, 0.3}, 5);
    GridSpace space;
    space.cells = {CellKind::Gru};
    space.rnn_sizes = {8};
    space.learning_rates = {0.005, 1e-9};
    RunOptions opt = quick_options();
    opt.train.max_epochs = 6;
    opt.train.patience = 6;
    const GridResult r = grid_search(ds, sp, tiny_rnn_spec(), space, opt);
    REQUIRE(r.rows.size() == 2);
    // Rows come back sorted by valid metric, so the winner is on top.
    CHECK(r.rows[0].valid_value >= r.rows[1].valid_value);
    CHECK(r.rows[0].spec.learning_rate == 0.005);
    CHECK(r.winner_model.spec.learning_rate == 0.005);
    REQUIRE(r.rows[0].test_value);
    // Only the winner was scored on test.
    CHECK(!r.rows[1].test_value);

    RunOptions full = opt;
    full.full_table = true;
    const GridResult r2 = grid_search(ds, sp, tiny_rnn_spec(), space, full);
    CHECK(r2.rows[0].test_value);
    CHECK(r2.rows[1].test_value);
}

TEST_CASE("grid persistence is byte-identical across reruns and worker counts") {
    const Dataset ds = make_containment_dataset(120, 6, 30, 3);
    const Splits sp = split_dataset(ds, {0.6, 0.1, 0.3}, 5);
    GridSpace space;
    space.cells = {CellKind::Gru};
    space.rnn_sizes = {8};
    space.learning_rates = {0.01, 0.001};

    TempDir d1("biseq_grid1"), d2("biseq_grid2"), d3("biseq_grid3");
    RunOptions opt = quick_options();
    opt.out_dir = d1.path.string();
    grid_search(ds, sp, tiny_rnn_spec(), space, opt);
    opt.out_dir = d2.path.string();
    grid_search(ds, sp, tiny_rnn_spec(), space, opt);
    opt.out_dir = d3.path.string();
    opt.workers = 2;
    grid_search(ds, sp, tiny_rnn_spec(), space, opt);

    const std::string csv1 = slurp(d1.path / "results.csv");
    CHECK(csv1 == slurp(d2.path / "results.csv"));
    CHECK(csv1 == slurp(d3.path / "results.csv"));
    CHECK(slurp(d1.path / "manifest.json") == slurp(d2.path / "manifest.json"));
    CHECK(std::filesystem::exists(d1.path / "history_000.jsonl"));
    CHECK(std::filesystem::exists(d1.path / "history_001.jsonl"));

    // Split groups in the manifest stay disjoint between train and test.
    const auto manifest = nlohmann::json::parse(slurp(d1.path / "manifest.json"));
    std::set<std::string> train(manifest["split_groups"]["train"].begin(),
                                manifest["split_groups"]["train"].end());
    for (const auto& g : manifest["split_groups"]["test"])
        CHECK(!train.count(g.get<std::string>()));
    CHECK(manifest["winner"]["cell_index"].get<std::size_t>() < 2);
}

TEST_CASE("lomo trains one fold per group and stays group-disjoint") {
    const Dataset ds = make_containment_dataset(150, 5, 30, 3);
    RunOptions opt = quick_options();
    opt.embed_dim = 16;
    opt.train.max_epochs = 40;
    opt.train.patience = 40;
    ModelSpec spec = tiny_rnn_spec();
    spec.rnn_size = 16;
    spec.learning_rate = 0.005;
    const LomoResult r = lomo_evaluate(ds, spec, opt);
    REQUIRE(r.folds.size() == 5);
    std::set<std::string> fold_groups;
    for (const auto& f : r.folds) {
        fold_groups.insert(f.group);
        for (const auto& g : f.train_groups) CHECK(g != f.group);
        for (const auto& g : f.valid_groups) CHECK(g != f.group);
        CHECK(f.n_test == 30);
        CHECK(f.report.n == 30);
    }
    CHECK(fold_groups.size() == 5);
    REQUIRE(r.macro.per_group.size() == 5);
    REQUIRE(r.macro.macro.auc);
    CHECK(*r.macro.macro.auc > 0.9);
}

TEST_CASE("lomo is deterministic and persists fold tables") {
    const Dataset ds = make_containment_dataset(60, 3, 30, 9);
    RunOptions opt = quick_options();
    opt.train.max_epochs = 4;
    opt.train.patience = 4;
    TempDir d1("biseq_lomo1"), d2("biseq_lomo2");
    opt.out_dir = d1.path.string();
    const LomoResult a = lomo_evaluate(ds, tiny_rnn_spec(), opt);
    opt.out_dir = d2.path.string();
    opt.workers = 3;
    const LomoResult b = lomo_evaluate(ds, tiny_rnn_spec(), opt);
    REQUIRE(a.macro.macro.auc);
    REQUIRE(b.macro.macro.auc);
    CHECK(*a.macro.macro.auc == *b.macro.macro.auc);
    CHECK(slurp(d1.path / "results.csv") == slurp(d2.path / "results.csv"));

    const std::string csv = slurp(d1.path / "results.csv");
    CHECK(csv.find("macro,") != std::string::npos);
    const auto manifest = nlohmann::json::parse(slurp(d1.path / "manifest.json"));
    REQUIRE(manifest["folds"].size() == 3);
    for (const auto& fold : manifest["folds"]) {
        const std::string test_group = fold["test_group"];
        for (const auto& g : fold["train_groups"])
            CHECK(g.get<std::string>() != test_group);
    }
    CHECK(std::filesystem::exists(d1.path / "history_fold_002.jsonl"));
}

TEST_CASE("lomo falls back to record-level holdout for two groups") {
    const Dataset ds = make_containment_dataset(80, 2, 30, 5);
    RunOptions opt = quick_options();
    const LomoResult r = lomo_evaluate(ds, tiny_rnn_spec(), opt);
    REQUIRE(r.folds.size() == 2);
    for (const auto& f : r.folds) {
        REQUIRE(f.train_groups.size() == 1);
        CHECK(f.train_groups == f.valid_groups);
        CHECK(f.train_groups[0] != f.group);
    }
}

TEST_CASE("lomo validates its inputs") {
    RunOptions opt = quick_options();
    const Dataset one = make_containment_dataset(20, 1, 30, 5);
    CHECK_THROWS_AS(lomo_evaluate(one, tiny_rnn_spec(), opt), InputError);
    Dataset multi = make_containment_dataset(20, 2, 30, 5);
    multi.num_classes = 3;
    CHECK_THROWS_AS(lomo_evaluate(multi, tiny_rnn_spec(), opt), UsageError);
}

TEST_CASE("the worker pool propagates task failures") {
    const auto boom = [](std::size_t i) -> int {
        if (i >= 2) throw InputError("task " + std::to_string(i) + " failed");
        return static_cast<int>(i);
    };
    CHECK_THROWS_AS(harness_detail::parallel_map(4, 2, boom), InputError);
    const auto ok = [](std::size_t i) { return static_cast<int>(i * i); };
    const auto out = harness_detail::parallel_map(5, 3, ok);
    CHECK(out == std::vector<int>{0, 1, 4, 9, 16});
}

TEST_CASE("cancellation stops dispatch and keeps finished slots") {
    request_cancel(false);
    const auto fn = [](std::size_t i) -> int {
        if (i == 1) request_cancel();
        return static_cast<int>(i);
    };
    const auto slots = harness_detail::parallel_map_partial(5, 1, fn);
    REQUIRE(slots.size() == 5);
    CHECK(slots[0]);
    CHECK(slots[1]);
    CHECK(!slots[2]);
    CHECK(!slots[3]);
    request_cancel(false);
    CHECK_THROWS_AS(harness_detail::parallel_map(3, 1,
                                                 [](std::size_t i) {
                                                     request_cancel();
                                                     return i;
                                                 }),
                    CancelledError);
    request_cancel(false);

    const Dataset ds = make_containment_dataset(60, 3, 30, 9);
    const ModelSpec spec = tiny_rnn_spec();
    request_cancel();
    CHECK_THROWS_AS(lomo_evaluate(ds, spec, quick_options()), CancelledError);
    const Splits sp = split_dataset(ds, {0.6, 0.1, 0.3}, 5);
    GridSpace space;
    space.cells = {CellKind::Gru};
    space.rnn_sizes = {8};
    space.learning_rates = {0.005};
    CHECK_THROWS_AS(grid_search(ds, sp, spec, space, quick_options()),
                    CancelledError);
    request_cancel(false);
}
