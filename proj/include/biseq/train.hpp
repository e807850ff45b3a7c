#pragma once

// Mini-batch training with Adam, optional L2 on CNN filter weights, gradient
// clipping at a global norm, and early stopping on a validation metric. A run
// is fully determined by (spec, data, config): shuffles and the model init
// derive from config.seed, so reruns are bit-identical.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "biseq/error.hpp"
#include "biseq/metrics.hpp"
#include "biseq/model.hpp"
#include "biseq/util.hpp"

namespace biseq {

// One example at the id level, already encoded against a vocabulary.
struct EncodedPair {
    std::vector<int> ctx;
    std::vector<int> tgt;
    int label = 0;
};

struct Batch {
    std::vector<std::vector<int>> ctx;   // rectangular [B x max_ctx_len]
    std::vector<Mask> ctx_mask;
    std::vector<std::vector<int>> tgt;   // rectangular [B x max_tgt_len]
    std::vector<Mask> tgt_mask;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

// Truncates each sequence from the right to the maximum length, pads with the
// PAD id and records the valid prefix in the mask.
inline Batch pad_batch(std::span<const EncodedPair> pairs, std::size_t max_ctx_len,
                       std::size_t max_tgt_len) {
    if (pairs.empty()) throw InputError("pad_batch: empty batch");
    if (max_ctx_len == 0 || max_tgt_len == 0)
        throw InputError("pad_batch: maximum lengths must be positive");
    Batch b;
    const auto fit = [](const std::vector<int>& ids, std::size_t cap,
                        std::vector<std::vector<int>>& out_ids,
                        std::vector<Mask>& out_masks) {
        const std::size_t keep = std::min(ids.size(), cap);
        std::vector<int> row(ids.begin(), ids.begin() + static_cast<long>(keep));
        row.resize(cap, Vocabulary::kPadId);
        out_ids.push_back(std::move(row));
        out_masks.push_back(Mask::prefix(keep, cap));
    };
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (pairs[i].ctx.empty())
            throw InputError("pad_batch: record " + std::to_string(i) +
                             " has an empty context");
        if (pairs[i].tgt.empty())
            throw InputError("pad_batch: record " + std::to_string(i) +
                             " has an empty target");
        fit(pairs[i].ctx, max_ctx_len, b.ctx, b.ctx_mask);
        fit(pairs[i].tgt, max_tgt_len, b.tgt, b.tgt_mask);
        b.labels.push_back(pairs[i].label);
    }
    return b;
}

// Adam moments, one slot per parameter tensor, plus the shared step counter.
struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::uint64_t t = 0;

    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEpsilon = 1e-8;
};

// One Adam update over aligned parameter and gradient lists. Everything is
// validated before any parameter is touched so a bad gradient aborts the step
// cleanly.
inline void adam_step(const std::vector<Tensor*>& params,
                      const std::vector<Tensor>& grads, AdamState& state,
                      double lr) {
    if (params.size() != grads.size())
        throw DimensionError("adam_step: " + std::to_string(params.size()) +
                             " params vs " + std::to_string(grads.size()) +
                             " grads");
    if (!std::isfinite(lr) || lr < 0)
        throw ConfigError("adam_step: learning rate must be finite and >= 0");
    if (state.m.empty()) {
        for (const Tensor* p : params) {
            state.m.emplace_back(p->shape);
            state.v.emplace_back(p->shape);
        }
    }
    if (state.m.size() != params.size())
        throw DimensionError("adam_step: state tracks " +
                             std::to_string(state.m.size()) + " params, got " +
                             std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i]->same_shape(grads[i]) || !params[i]->same_shape(state.m[i]))
            throw DimensionError("adam_step: shape mismatch at param " +
                                 std::to_string(i));
        for (double g : grads[i].data)
            if (!std::isfinite(g))
                throw NumericError("adam_step: non-finite gradient at param " +
                                   std::to_string(i) + ", step aborted");
    }
    state.t += 1;
    const double c1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads[i];
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            m.data[j] = AdamState::kBeta1 * m.data[j] +
                        (1.0 - AdamState::kBeta1) * g.data[j];
            v.data[j] = AdamState::kBeta2 * v.data[j] +
                        (1.0 - AdamState::kBeta2) * g.data[j] * g.data[j];
            const double mhat = m.data[j] / c1;
            const double vhat = v.data[j] / c2;
            p.data[j] -= lr * mhat / (std::sqrt(vhat) + AdamState::kEpsilon);
        }
    }
}

struct TrainConfig {
    double learning_rate = 0.001;
    std::size_t batch_size = 64;
    std::size_t max_epochs = 50;
    std::size_t patience = 5;
    double l2_coeff = 0.0;
    std::uint64_t seed = 1;
    std::string selection;        // avgp | auc | accuracy; empty picks by class count
    double clip_norm = 5.0;       // global gradient norm cap, 0 disables
    double positive_weight = 1.0; // extra weight on label-1 losses
};

inline TrainConfig config_from_spec(const ModelSpec& spec) {
    TrainConfig c;
    c.learning_rate = spec.learning_rate;
    c.l2_coeff = spec.l2_coeff;
    c.seed = spec.seed;
    return c;
}

inline void validate_train_config(const TrainConfig& c, std::size_t num_classes) {
    std::vector<std::string> bad;
    if (!std::isfinite(c.learning_rate) || c.learning_rate < 0)
        bad.push_back("learning_rate must be >= 0");
    if (c.batch_size == 0) bad.push_back("batch_size must be positive");
    if (c.max_epochs == 0) bad.push_back("max_epochs must be positive");
    if (c.patience == 0 || c.patience > c.max_epochs)
        bad.push_back("patience must be in [1, max_epochs]");
    if (!std::isfinite(c.l2_coeff) || c.l2_coeff < 0)
        bad.push_back("l2_coeff must be >= 0");
    if (!std::isfinite(c.clip_norm) || c.clip_norm < 0)
        bad.push_back("clip_norm must be >= 0");
    if (!std::isfinite(c.positive_weight) || c.positive_weight <= 0)
        bad.push_back("positive_weight must be > 0");
    if (c.selection != "" && c.selection != "avgp" && c.selection != "auc" &&
        c.selection != "accuracy")
        bad.push_back("selection must be avgp, auc or accuracy");
    if ((c.selection == "avgp" || c.selection == "auc") && num_classes != 2)
        bad.push_back("selection " + c.selection + " needs binary labels, have " +
                      std::to_string(num_classes) + " classes");
    if (!bad.empty()) throw ConfigError("train config: " + join(bad, "; "));
}

// Tracks the best validation value seen so far under strict improvement.
class EarlyStopping {
  public:
    explicit EarlyStopping(std::size_t patience) : patience_(patience) {
        if (patience == 0) throw ConfigError("early stopping: patience must be >= 1");
    }

    // Returns true when `value` strictly improves on the best so far.
    bool observe(double value, std::size_t epoch) {
        if (seen_ && value <= best_) return false;
        seen_ = true;
        best_ = value;
        best_epoch_ = epoch;
        return true;
    }

    bool should_stop(std::size_t epoch) const {
        return seen_ && epoch - best_epoch_ >= patience_;
    }

    double best() const {
        if (!seen_) throw UsageError("early stopping: nothing observed yet");
        return best_;
    }
    std::size_t best_epoch() const {
        if (!seen_) throw UsageError("early stopping: nothing observed yet");
        return best_epoch_;
    }

  private:
    std::size_t patience_;
    bool seen_ = false;
    double best_ = 0.0;
    std::size_t best_epoch_ = 0;
};

// Class-probability rows for every pair, in input order. Each row comes from
// its own inference graph, so scoring never touches gradients.
inline std::vector<std::vector<double>> score_dataset(
    Model& model, std::span<const EncodedPair> pairs) {
    std::vector<std::vector<double>> rows;
    rows.reserve(pairs.size());
    for (const auto& p : pairs) rows.push_back(predict_proba(model, p.ctx, p.tgt));
    return rows;
}

// Positive-class score per pair; binary models only.
inline std::vector<double> positive_scores(Model& model,
                                           std::span<const EncodedPair> pairs) {
    if (model.spec.num_classes != 2)
        throw UsageError("positive_scores: model has " +
                         std::to_string(model.spec.num_classes) +
                         " classes, need 2");
    std::vector<double> out;
    out.reserve(pairs.size());
    for (const auto& row : score_dataset(model, pairs)) out.push_back(row[1]);
    return out;
}

namespace train_detail {

inline double selection_value(Model& model, std::span<const EncodedPair> valid,
                              const std::string& metric) {
    if (metric == "accuracy") {
        std::vector<int> labels;
        labels.reserve(valid.size());
        for (const auto& p : valid) labels.push_back(p.label);
        return accuracy(score_dataset(model, valid), labels);
    }
    std::vector<ScoredLabel> items;
    const std::vector<double> scores = positive_scores(model, valid);
    for (std::size_t i = 0; i < valid.size(); ++i)
        items.push_back({scores[i], valid[i].label, ""});
    return metric == "avgp" ? average_precision(items) : roc_auc(items);
}

} // namespace train_detail

struct EpochRecord {
    std::size_t epoch = 0;     // 1-based
    double train_loss = 0.0;
    double valid_value = 0.0;
    double seconds = 0.0;
};

struct TrainResult {
    Model model;               // parameters of the best validation epoch
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_value = 0.0;
    std::string selection;
};

// Runs the full loop: seeded shuffles, mean cross-entropy plus optional CNN
// filter L2, Adam with global-norm clipping, per-epoch validation, snapshot of
// the best epoch, stop after `patience` epochs without improvement. A numeric
// error aborts the run; epochs finished so far are preserved through
// `history_sink` when one is supplied.
inline TrainResult train_model(const ModelSpec& spec,
                               std::span<const EncodedPair> train,
                               std::span<const EncodedPair> valid,
                               Vocabulary vocab, EmbeddingTable embedding,
                               const TrainConfig& config,
                               const std::function<void(const EpochRecord&)>& on_epoch = {},
                               std::vector<EpochRecord>* history_sink = nullptr) {
    require_valid(spec);
    validate_train_config(config, spec.num_classes);
    if (train.empty()) throw InputError("train_model: empty training set");
    if (valid.empty()) throw InputError("train_model: empty validation set");
    for (std::span<const EncodedPair> part : {train, valid})
        for (const auto& p : part)
            if (p.label < 0 || static_cast<std::size_t>(p.label) >= spec.num_classes)
                throw InputError("train_model: label " + std::to_string(p.label) +
                                 " out of range for " +
                                 std::to_string(spec.num_classes) + " classes");

    std::mt19937_64 init_rng(derive_seed(config.seed, "init"));
    Model model = Model::init(spec, std::move(vocab), std::move(embedding), init_rng);

    const std::string selection =
        !config.selection.empty() ? config.selection
        : spec.num_classes == 2  ? std::string("avgp")
                                 : std::string("accuracy");

    TrainResult result;
    result.selection = selection;
    EarlyStopping stopper(config.patience);
    AdamState adam;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        std::mt19937_64 shuffle_rng(derive_seed(config.seed, "shuffle", epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t at = 0; at < order.size(); at += config.batch_size) try {
            const std::size_t take = std::min(config.batch_size, order.size() - at);
            std::vector<EncodedPair> rows;
            rows.reserve(take);
            for (std::size_t i = 0; i < take; ++i) rows.push_back(train[order[at + i]]);
            const Batch batch = pad_batch(rows, spec.max_ctx_len, spec.max_tgt_len);

            Graph g;
            Tensor sink(model.embedding.matrix.shape);
            ModelBinding bound =
                bind_model(g, model, model.embedding.trainable ? &sink : nullptr);

            std::vector<Node*> weighted;
            double weight_sum = 0.0;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                Node* logits = forward_pair_masked(g, bound, batch.ctx[i],
                                                   batch.ctx_mask[i], batch.tgt[i],
                                                   batch.tgt_mask[i]);
                Node* ce = g.softmax_cross_entropy(
                    logits, static_cast<std::size_t>(batch.labels[i]));
                const double w = batch.labels[i] == 1 ? config.positive_weight : 1.0;
                weighted.push_back(w == 1.0 ? ce : g.scale(ce, w));
                weight_sum += w;
            }
            Node* loss = g.scale(g.add_list(weighted), 1.0 / weight_sum);
            if (config.l2_coeff > 0.0) {
                std::vector<Node*> penalties;
                for (const auto& [ref, node] : bound.leaves)
                    if (ref.is_cnn_filter) penalties.push_back(g.sum_squares(node));
                if (!penalties.empty())
                    loss = g.add(loss,
                                 g.scale(g.add_list(penalties), config.l2_coeff));
            }
            g.backward(loss);
            loss_sum += loss->value.data[0] * static_cast<double>(take);
            seen += take;

            std::vector<Tensor*> params;
            std::vector<Tensor> grads;
            if (model.embedding.trainable) {
                params.push_back(&model.embedding.matrix);
                grads.push_back(sink);
            }
            for (const auto& [ref, node] : bound.leaves) {
                params.push_back(ref.tensor);
                grads.push_back(node->grad.shape.empty() ? Tensor(ref.tensor->shape)
                                                         : node->grad);
            }
            if (config.clip_norm > 0.0) {
                double sq = 0.0;
                for (const Tensor& g2 : grads)
                    for (double x : g2.data) sq += x * x;
                const double norm = std::sqrt(sq);
                if (norm > config.clip_norm) {
                    const double f = config.clip_norm / norm;
                    for (Tensor& g2 : grads)
                        for (double& x : g2.data) x *= f;
                }
            }
            adam_step(params, grads, adam, config.learning_rate);
        } catch (const NumericError& e) {
            throw NumericError("epoch " + std::to_string(epoch) + ", batch at " +
                               std::to_string(at) + ": " + e.what());
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(seen);
        rec.valid_value = train_detail::selection_value(model, valid, selection);
        rec.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
                .count();
        result.history.push_back(rec);
        if (history_sink) history_sink->push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (stopper.observe(rec.valid_value, epoch)) {
            result.model = model;
            result.best_epoch = epoch;
            result.best_value = rec.valid_value;
        }
        if (stopper.should_stop(epoch)) break;
    }
    return result;
}

} // namespace biseq
