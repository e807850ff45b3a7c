#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "biseq/train.hpp"
#include "support.hpp"

using namespace biseq;

namespace {

// Label 1 iff the single context token occurs in the target. Negatives never
// contain any key token, so every architecture family can separate the task.
std::vector<EncodedPair> containment(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> key(3, 7), filler(8, 32), len(6, 10);
    std::uniform_int_distribution<int> coin(0, 1);
    std::vector<EncodedPair> out;
    for (std::size_t i = 0; i < n; ++i) {
        EncodedPair p;
        const int k = key(rng);
        p.ctx = {k};
        const int tgt_len = len(rng);
        for (int j = 0; j < tgt_len; ++j) p.tgt.push_back(filler(rng));
        p.label = coin(rng);
        if (p.label == 1)
            p.tgt[static_cast<std::size_t>(rng() % p.tgt.size())] = k;
        out.push_back(std::move(p));
    }
    return out;
}

ModelSpec overfit_spec() {
    ModelSpec spec;
    spec.combination = Combination::Concat;
    spec.context_encoder = EncoderKind::Rnn;
    spec.target_encoder = EncoderKind::Rnn;
    spec.rnn_size = 16;
    spec.max_ctx_len = 4;
    spec.max_tgt_len = 12;
    return spec;
}

TrainResult run_containment(const TrainConfig& cfg) {
    const auto train = containment(200, 4);
    const auto valid = containment(60, 5);
    const Vocabulary v = biseq::testing::tiny_vocab(30);
    return train_model(overfit_spec(), train, valid, v,
                       random_embedding(v, 16, 9), cfg);
}

} // namespace

TEST_CASE("pad_batch pads short rows and masks the tail") {
    std::vector<EncodedPair> pairs = {{{5, 6}, {7}, 1}};
    const Batch b = pad_batch(pairs, 4, 3);
    CHECK(b.ctx[0] == std::vector<int>{5, 6, 0, 0});
    CHECK(b.ctx_mask[0].valid() == 2);
    CHECK(b.ctx_mask[0].size() == 4);
    CHECK(b.tgt[0] == std::vector<int>{7, 0, 0});
    CHECK(b.tgt_mask[0].valid() == 1);
    CHECK(b.labels == std::vector<int>{1});
}

TEST_CASE("pad_batch truncates from the right") {
    std::vector<int> long_ids(70);
    std::iota(long_ids.begin(), long_ids.end(), 100);
    std::vector<EncodedPair> pairs = {{long_ids, {3}, 0}};
    const Batch b = pad_batch(pairs, 60, 3);
    REQUIRE(b.ctx[0].size() == 60);
    CHECK(b.ctx[0].front() == 100);
    CHECK(b.ctx[0].back() == 159);
    CHECK(b.ctx_mask[0].valid() == 60);
}

TEST_CASE("pad_batch produces rectangular matrices for mixed lengths") {
    std::vector<EncodedPair> pairs = {{{3, 4, 5}, {6}, 0}, {{7}, {8, 9}, 1}};
    const Batch b = pad_batch(pairs, 5, 5);
    for (const auto& row : b.ctx) CHECK(row.size() == 5);
    for (const auto& row : b.tgt) CHECK(row.size() == 5);
    CHECK(b.ctx_mask[0].valid() == 3);
    CHECK(b.ctx_mask[1].valid() == 1);
    CHECK(b.tgt_mask[1].valid() == 2);
}

TEST_CASE("pad_batch names the offending record") {
    std::vector<EncodedPair> pairs = {{{3}, {4}, 0}, {{}, {4}, 0}};
    try {
        pad_batch(pairs, 4, 4);
        FAIL("expected InputError");
    } catch (const InputError& e) {
        CHECK(std::string(e.what()).find("record 1") != std::string::npos);
        CHECK(std::string(e.what()).find("context") != std::string::npos);
    }
    std::vector<EncodedPair> no_tgt = {{{3}, {}, 0}};
    CHECK_THROWS_AS(pad_batch(no_tgt, 4, 4), InputError);
    CHECK_THROWS_AS(pad_batch(std::vector<EncodedPair>{}, 4, 4), InputError);
}

TEST_CASE("padding preserves the kept prefix exactly") {
    std::mt19937_64 rng(17);
    for (int round = 0; round < 40; ++round) {
        const std::size_t len = 1 + rng() % 20, cap = 1 + rng() % 20;
        std::vector<int> ids(len);
        for (int& x : ids) x = 3 + static_cast<int>(rng() % 50);
        std::vector<EncodedPair> pairs = {{ids, {3}, 0}};
        const Batch b = pad_batch(pairs, cap, 4);
        const std::size_t keep = std::min(len, cap);
        for (std::size_t i = 0; i < keep; ++i) REQUIRE(b.ctx[0][i] == ids[i]);
        for (std::size_t i = keep; i < cap; ++i) REQUIRE(b.ctx[0][i] == 0);
        REQUIRE(b.ctx_mask[0].valid() == keep);
    }
}

TEST_CASE("adam leaves parameters alone under zero gradient") {
    Tensor p = Tensor::row({0.5, -0.25, 3.0});
    const Tensor before = p;
    AdamState st;
    adam_step({&p}, {Tensor(p.shape)}, st, 0.001);
    CHECK(p.data == before.data);
    CHECK(st.t == 1);
}

TEST_CASE("first adam step moves each weight by about lr in the gradient direction") {
    Tensor p = Tensor::row({0.5, -0.25, 3.0, 0.0});
    Tensor g = Tensor::row({0.2, -0.4, 0.001, 1.5});
    const Tensor before = p;
    AdamState st;
    adam_step({&p}, {g}, st, 0.001);
    for (std::size_t i = 0; i < p.data.size(); ++i) {
        const double step = p.data[i] - before.data[i];
        const double expected = -0.001 * g.data[i] /
                                (std::abs(g.data[i]) + AdamState::kEpsilon);
        CHECK(step == Catch::Approx(expected).margin(1e-12));
    }
}

TEST_CASE("constant gradient never grows the adam step") {
    Tensor p = Tensor::row({1.0, -2.0});
    Tensor g = Tensor::row({0.3, -0.7});
    AdamState st;
    Tensor prev = p;
    adam_step({&p}, {g}, st, 0.01);
    double step1[2] = {std::abs(p.data[0] - prev.data[0]),
                       std::abs(p.data[1] - prev.data[1])};
    prev = p;
    adam_step({&p}, {g}, st, 0.01);
    for (std::size_t i = 0; i < 2; ++i) {
        const double step2 = std::abs(p.data[i] - prev.data[i]);
        CHECK(step2 <= step1[i] * (1.0 + 1e-9));
    }
}

TEST_CASE("one adam step descends a quadratic") {
    std::mt19937_64 rng(29);
    Tensor p({6});
    for (double& x : p.data) x = uniform_in(rng, -2.0, 2.0);
    const auto loss = [&]() {
        double s = 0;
        for (double x : p.data) s += 0.5 * x * x;
        return s;
    };
    const double before = loss();
    AdamState st;
    adam_step({&p}, {p}, st, 1e-3);
    CHECK(loss() < before);
}

TEST_CASE("adam validates before touching anything") {
    Tensor p = Tensor::row({1.0, 2.0});
    const Tensor before = p;
    AdamState st;
    Tensor bad = Tensor::row({0.1, std::nan("")});
    CHECK_THROWS_AS(adam_step({&p}, {bad}, st, 0.001), NumericError);
    CHECK(p.data == before.data);
    CHECK(st.t == 0);
    Tensor wrong_shape({3});
    CHECK_THROWS_AS(adam_step({&p}, {wrong_shape}, st, 0.001), DimensionError);
    CHECK_THROWS_AS(adam_step({&p}, {}, st, 0.001), DimensionError);
    CHECK_THROWS_AS(adam_step({&p}, {before}, st, -1.0), ConfigError);
}

TEST_CASE("adam state rejects a changed parameter list") {
    Tensor p = Tensor::row({1.0});
    Tensor q = Tensor::row({2.0});
    AdamState st;
    adam_step({&p}, {Tensor(p.shape)}, st, 0.001);
    CHECK_THROWS_AS(adam_step({&p, &q}, {Tensor(p.shape), Tensor(q.shape)}, st, 0.001),
                    DimensionError);
}

TEST_CASE("early stopping keeps the best epoch under strict improvement") {
    EarlyStopping es(3);
    const double values[] = {0.1, 0.5, 0.3, 0.2, 0.1};
    std::size_t stopped_at = 0;
    for (std::size_t e = 1; e <= 5; ++e) {
        es.observe(values[e - 1], e);
        if (es.should_stop(e)) {
            stopped_at = e;
            break;
        }
    }
    CHECK(stopped_at == 5);
    CHECK(es.best_epoch() == 2);
    CHECK(es.best() == 0.5);
}

TEST_CASE("patience one with a worsening metric stops after two epochs") {
    EarlyStopping es(1);
    CHECK(es.observe(0.9, 1));
    CHECK(!es.should_stop(1));
    CHECK(!es.observe(0.8, 2));
    CHECK(es.should_stop(2));
}

TEST_CASE("a tie is not an improvement") {
    EarlyStopping es(2);
    CHECK(es.observe(0.4, 1));
    CHECK(!es.observe(0.4, 2));
    CHECK(es.best_epoch() == 1);
    CHECK_THROWS_AS(EarlyStopping(0), ConfigError);
    CHECK_THROWS_AS(EarlyStopping(2).best(), UsageError);
}

TEST_CASE("train config validation lists every violation") {
    TrainConfig c;
    c.learning_rate = -1;
    c.batch_size = 0;
    c.patience = 99;
    c.selection = "f2";
    try {
        validate_train_config(c, 2);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("learning_rate") != std::string::npos);
        CHECK(msg.find("batch_size") != std::string::npos);
        CHECK(msg.find("patience") != std::string::npos);
        CHECK(msg.find("selection") != std::string::npos);
    }
    TrainConfig ranked;
    ranked.selection = "avgp";
    CHECK_THROWS_AS(validate_train_config(ranked, 3), ConfigError);
    validate_train_config(ranked, 2);
}

TEST_CASE("training overfits the containment task") {
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.max_epochs = 50;
    cfg.patience = 50;
    cfg.seed = 9;
    const TrainResult r = run_containment(cfg);
    CHECK(r.selection == "avgp");
    CHECK(r.best_value > 0.99);

    const auto train = containment(200, 4);
    std::vector<int> labels;
    for (const auto& p : train) labels.push_back(p.label);
    Model best = r.model;
    CHECK(accuracy(score_dataset(best, train), labels) == 1.0);

    std::vector<ScoredLabel> items;
    const auto scores = positive_scores(best, train);
    for (std::size_t i = 0; i < train.size(); ++i)
        items.push_back({scores[i], train[i].label, ""});
    CHECK(roc_auc(items) > 0.95);
}

TEST_CASE("training is deterministic in the seed") {
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.max_epochs = 4;
    cfg.patience = 4;
    cfg.seed = 21;
    const TrainResult a = run_containment(cfg);
    const TrainResult b = run_containment(cfg);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].valid_value == b.history[i].valid_value);
    }
    Model ma = a.model, mb = b.model;
    CHECK(ma.head->weight.data == mb.head->weight.data);
    CHECK(ma.embedding.matrix.data == mb.embedding.matrix.data);
    CHECK(ma.target_rnn->w[0].data == mb.target_rnn->w[0].data);
}

TEST_CASE("zero learning rate leaves the initialization untouched") {
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.batch_size = 64;
    cfg.max_epochs = 3;
    cfg.patience = 3;
    cfg.seed = 33;
    const TrainResult r = run_containment(cfg);
    for (const auto& rec : r.history)
        CHECK(rec.valid_value == r.history[0].valid_value);

    const Vocabulary v = biseq::testing::tiny_vocab(30);
    std::mt19937_64 init_rng(derive_seed(cfg.seed, "init"));
    Model fresh = Model::init(overfit_spec(), v, random_embedding(v, 16, 9), init_rng);
    Model trained = r.model;
    CHECK(trained.head->weight.data == fresh.head->weight.data);
    CHECK(trained.embedding.matrix.data == fresh.embedding.matrix.data);
    CHECK(trained.context_rnn->u[1].data == fresh.context_rnn->u[1].data);
}

TEST_CASE("the returned model reproduces the best recorded validation value") {
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.max_epochs = 8;
    cfg.patience = 8;
    cfg.seed = 14;
    const TrainResult r = run_containment(cfg);
    double best = 0;
    std::size_t best_epoch = 0;
    for (const auto& rec : r.history)
        if (rec.valid_value > best) {
            best = rec.valid_value;
            best_epoch = rec.epoch;
        }
    CHECK(r.best_epoch == best_epoch);
    CHECK(r.best_value == best);

    const auto valid = containment(60, 5);
    Model m = r.model;
    const auto scores = positive_scores(m, valid);
    std::vector<ScoredLabel> items;
    for (std::size_t i = 0; i < valid.size(); ++i)
        items.push_back({scores[i], valid[i].label, ""});
    CHECK(average_precision(items) == r.best_value);
}

TEST_CASE("the pad row of a trainable embedding never moves") {
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.max_epochs = 3;
    cfg.patience = 3;
    cfg.seed = 51;
    const TrainResult r = run_containment(cfg);
    Model m = r.model;
    for (std::size_t j = 0; j < m.embedding.matrix.cols(); ++j)
        CHECK(m.embedding.matrix.at(Vocabulary::kPadId, j) == 0.0);
}

TEST_CASE("a poisoned embedding aborts with epoch context and no history") {
    const auto train = containment(40, 4);
    const auto valid = containment(20, 5);
    const Vocabulary v = biseq::testing::tiny_vocab(30);
    EmbeddingTable emb = random_embedding(v, 16, 9);
    emb.matrix.at(5, 0) = std::numeric_limits<double>::quiet_NaN();
    TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.patience = 3;
    std::vector<EpochRecord> sink;
    try {
        train_model(overfit_spec(), train, valid, v, emb, cfg, {}, &sink);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
    }
    CHECK(sink.empty());
}

TEST_CASE("the history sink mirrors the returned history") {
    TrainConfig cfg;
    cfg.batch_size = 64;
    cfg.max_epochs = 3;
    cfg.patience = 3;
    cfg.seed = 2;
    const auto train = containment(80, 4);
    const auto valid = containment(30, 5);
    const Vocabulary v = biseq::testing::tiny_vocab(30);
    std::vector<EpochRecord> sink;
    std::size_t callbacks = 0;
    const TrainResult r = train_model(
        overfit_spec(), train, valid, v, random_embedding(v, 16, 9), cfg,
        [&](const EpochRecord&) { ++callbacks; }, &sink);
    REQUIRE(sink.size() == r.history.size());
    CHECK(callbacks == r.history.size());
    for (std::size_t i = 0; i < sink.size(); ++i) {
        CHECK(sink[i].epoch == r.history[i].epoch);
        CHECK(sink[i].train_loss == r.history[i].train_loss);
    }
}

TEST_CASE("train_model rejects bad labels and empty splits") {
    const Vocabulary v = biseq::testing::tiny_vocab(30);
    const auto good = containment(10, 4);
    std::vector<EncodedPair> bad = good;
    bad[0].label = 7;
    TrainConfig cfg;
    CHECK_THROWS_AS(train_model(overfit_spec(), bad, good, v,
                                random_embedding(v, 16, 9), cfg),
                    InputError);
    CHECK_THROWS_AS(train_model(overfit_spec(), std::vector<EncodedPair>{}, good, v,
                                random_embedding(v, 16, 9), cfg),
                    InputError);
    CHECK_THROWS_AS(train_model(overfit_spec(), good, std::vector<EncodedPair>{}, v,
                                random_embedding(v, 16, 9), cfg),
                    InputError);
}

TEST_CASE("a three-class run selects on accuracy by default") {
    std::mt19937_64 rng(64);
    std::vector<EncodedPair> data;
    for (int i = 0; i < 60; ++i) {
        EncodedPair p;
        p.ctx = biseq::testing::random_ids(rng, 3, 20);
        p.tgt = biseq::testing::random_ids(rng, 3, 20);
        p.label = i % 3;
        data.push_back(std::move(p));
    }
    ModelSpec spec = overfit_spec();
    spec.num_classes = 3;
    spec.rnn_size = 8;
    const Vocabulary v = biseq::testing::tiny_vocab(17);
    TrainConfig cfg;
    cfg.max_epochs = 2;
    cfg.patience = 2;
    const TrainResult r =
        train_model(spec, data, data, v, random_embedding(v, 8, 3), cfg);
    CHECK(r.selection == "accuracy");
    Model m = r.model;
    const auto rows = score_dataset(m, data);
    REQUIRE(rows.size() == data.size());
    for (const auto& row : rows) {
        REQUIRE(row.size() == 3);
        double sum = 0;
        for (double x : row) {
            CHECK(x >= 0.0);
            CHECK(x <= 1.0);
            sum += x;
        }
        CHECK(sum == Catch::Approx(1.0).margin(1e-12));
    }
    CHECK_THROWS_AS(positive_scores(m, data), UsageError);
}

TEST_CASE("scoring is deterministic and order preserving") {
    TrainConfig cfg;
    cfg.batch_size = 64;
    cfg.max_epochs = 2;
    cfg.patience = 2;
    const TrainResult r = run_containment(cfg);
    Model m = r.model;
    std::vector<EncodedPair> pairs = containment(6, 77);
    pairs.push_back(pairs[0]);
    const auto rows = score_dataset(m, pairs);
    REQUIRE(rows.size() == 7);
    CHECK(rows.front() == rows.back());
    CHECK(score_dataset(m, std::vector<EncodedPair>{}).empty());
}
