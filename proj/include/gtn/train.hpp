#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "autodiff.hpp"
#include "graph.hpp"
#include "model.hpp"

namespace gtn {

struct TrainConfig {
    double learning_rate = 0.005;
    double weight_decay = 0.001;
    int max_epochs = 100;
    int patience = 20; // epochs without val macro-F1 improvement before stopping
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const {
        detail::require(learning_rate >= 0.0, "train config: negative learning rate");
        detail::require(weight_decay >= 0.0, "train config: negative weight decay");
        detail::require(max_epochs >= 1, "train config: max_epochs must be >= 1");
        detail::require(patience >= 1 && patience <= max_epochs,
                        "train config: patience must be in [1, max_epochs]");
    }
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    std::map<std::string, DenseMatrix> m;
    std::map<std::string, DenseMatrix> v;
    long step = 0;

    void init(const std::vector<ParamRef>& params) {
        for (const ParamRef& p : params) {
            m.emplace(p.name, DenseMatrix(p.tensor->n_rows, p.tensor->n_cols));
            v.emplace(p.name, DenseMatrix(p.tensor->n_rows, p.tensor->n_cols));
        }
        step = 0;
    }
};

/// One Adam update with bias correction. Weight decay is decoupled and only
/// applied to tensors flagged in their ParamRef (dense/GCN weights).
inline void adam_step(const std::vector<ParamRef>& params, const Gradients& grads, AdamState& state,
                      const TrainConfig& cfg) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (const ParamRef& p : params) {
        const DenseMatrix& g = grads.at(p.name);
        detail::require(g.same_shape(*p.tensor), "adam: gradient shape mismatch for " + p.name);
        DenseMatrix& m = state.m.at(p.name);
        DenseMatrix& v = state.v.at(p.name);
        for (std::size_t k = 0; k < g.values.size(); ++k) {
            const double gk = g.values[k];
            if (!std::isfinite(gk))
                throw std::runtime_error("adam: non-finite gradient in parameter " + p.name);
            m.values[k] = cfg.beta1 * m.values[k] + (1.0 - cfg.beta1) * gk;
            v.values[k] = cfg.beta2 * v.values[k] + (1.0 - cfg.beta2) * gk * gk;
            const double update =
                (m.values[k] / bc1) / (std::sqrt(v.values[k] / bc2) + cfg.epsilon);
            const double decay = p.decay ? cfg.weight_decay * p.tensor->values[k] : 0.0;
            p.tensor->values[k] -= cfg.learning_rate * (update + decay);
        }
    }
}

// ---------------------------------------------------------------------------
// F1 evaluation
// ---------------------------------------------------------------------------

/// Macro and micro F1 over argmax predictions for the given node set.
/// Macro averages per-class F1 across all classes; micro pools counts (equal
/// to accuracy in this single-label setting).
inline std::pair<double, double> evaluate_f1(const DenseMatrix& logits, const std::vector<int>& labels,
                                             const std::vector<std::size_t>& node_set, int num_classes) {
    detail::require(!node_set.empty(), "evaluate_f1: empty node set");
    detail::require(num_classes >= 1, "evaluate_f1: no classes");
    std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    std::size_t correct = 0;
    for (std::size_t node : node_set) {
        const auto row = logits.row(node);
        std::size_t pred = 0;
        for (std::size_t c = 1; c < row.size(); ++c)
            if (row[c] > row[pred]) pred = c;
        const int truth = labels.at(node);
        detail::require(truth >= 0 && truth < num_classes, "evaluate_f1: node without valid label");
        if (static_cast<int>(pred) == truth) {
            ++tp[truth];
            ++correct;
        } else {
            ++fp[pred];
            ++fn[truth];
        }
    }
    double macro = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        const double prec_den = static_cast<double>(tp[c] + fp[c]);
        const double rec_den = static_cast<double>(tp[c] + fn[c]);
        const double prec = prec_den > 0.0 ? tp[c] / prec_den : 0.0;
        const double rec = rec_den > 0.0 ? tp[c] / rec_den : 0.0;
        macro += (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    }
    macro /= static_cast<double>(num_classes);
    const double micro = static_cast<double>(correct) / static_cast<double>(node_set.size());
    return {macro, micro};
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_macro_f1 = 0.0;
    double val_micro_f1 = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    double best_val_macro_f1 = 0.0;
    double test_macro_f1 = 0.0;
    double test_micro_f1 = 0.0;
    bool diverged = false;
};

/// One line of JSON per epoch, for plotting.
inline std::string history_to_jsonl(const TrainHistory& h) {
    std::ostringstream out;
    for (const EpochRecord& r : h.epochs) {
        nlohmann::json j{{"epoch", r.epoch},
                         {"train_loss", r.train_loss},
                         {"val_loss", r.val_loss},
                         {"val_macro_f1", r.val_macro_f1},
                         {"val_micro_f1", r.val_micro_f1}};
        out << j.dump() << '\n';
    }
    return out.str();
}

struct TrainResult {
    GtnParams params; // from the best validation epoch
    TrainHistory history;
};

/// Full-batch training with Adam, early stopping on the validation macro-F1
/// plateau, and model selection by best validation macro-F1 (ties broken by
/// lower validation loss, so the checkpoint keeps tracking sharper models
/// once the F1 saturates). Deterministic for a fixed seed. A non-finite
/// training loss aborts and returns the history collected so far with
/// `diverged` set.
inline TrainResult train(const HeteroGraph& graph, const LabeledSplit& split,
                         const GtnConfig& gtn_config, const TrainConfig& train_config) {
    train_config.validate();
    validate_split(graph, split);
    detail::require(!split.train.empty() && !split.val.empty(), "train: empty train or val split");

    TrainResult result;
    GtnParams params = init_params(gtn_config, graph.num_candidates(), graph.features.n_cols,
                                   split.num_classes, train_config.seed);
    const std::vector<ParamRef> refs = param_refs(params);
    AdamState state;
    state.init(refs);

    GtnParams best = params;
    double best_macro = -1.0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int stall = 0;

    for (int epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
        TapedForward fwd = gtn_forward(graph, params, gtn_config);
        const NodeId ln = loss_node(fwd, split);
        const double train_loss = fwd.tape.dense_value(ln).at(0, 0);
        if (!std::isfinite(train_loss)) {
            result.history.diverged = true;
            break;
        }
        const Gradients grads = fwd.tape.backward(ln);
        adam_step(refs, grads, state, train_config);

        const TapedForward eval = gtn_forward(graph, params, gtn_config);
        const double val_loss =
            cross_entropy_loss(eval.output.logits, split.val, split.labels_for(split.val));
        const auto [val_macro, val_micro] =
            evaluate_f1(eval.output.logits, split.labels, split.val, split.num_classes);
        result.history.epochs.push_back({epoch, train_loss, val_loss, val_macro, val_micro});

        if (val_macro > best_macro || (val_macro == best_macro && val_loss < best_val_loss)) {
            best_macro = val_macro;
            best_val_loss = val_loss;
            best_epoch = epoch;
            best = params;
            stall = 0;
        } else if (++stall >= train_config.patience) {
            break;
        }
    }

    result.history.best_epoch = best_epoch;
    result.history.best_val_macro_f1 = std::max(best_macro, 0.0);
    if (best_epoch > 0 && !split.test.empty()) {
        const TapedForward final_eval = gtn_forward(graph, best, gtn_config);
        const auto [test_macro, test_micro] =
            evaluate_f1(final_eval.output.logits, split.labels, split.test, split.num_classes);
        result.history.test_macro_f1 = test_macro;
        result.history.test_micro_f1 = test_micro;
    }
    result.params = std::move(best);
    return result;
}

// ---------------------------------------------------------------------------
// Homogeneous-GCN baseline (all edge types merged into one graph)
// ---------------------------------------------------------------------------

struct GcnBaselineParams {
    DenseMatrix gcn_weight; // D x d
    DenseMatrix dense1_w;
    DenseMatrix dense1_b;
    DenseMatrix dense2_w;
    DenseMatrix dense2_b;
};

inline std::vector<ParamRef> baseline_param_refs(GcnBaselineParams& p) {
    return {{"gcn_weight", &p.gcn_weight, true},
            {"dense1.weight", &p.dense1_w, true},
            {"dense1.bias", &p.dense1_b, false},
            {"dense2.weight", &p.dense2_w, true},
            {"dense2.bias", &p.dense2_b, false}};
}

struct BaselineForward {
    Tape tape;
    NodeId logits = 0;
};

inline BaselineForward gcn_baseline_forward(const CsrMatrix& merged, const DenseMatrix& features,
                                            const GcnBaselineParams& params) {
    BaselineForward fwd;
    Tape& tape = fwd.tape;
    const NodeId adj = tape.row_normalize_op(tape.add_identity_op(tape.leaf_sparse(merged)));
    const NodeId x = tape.leaf_dense(features);
    const NodeId w = tape.leaf_dense(params.gcn_weight, true, "gcn_weight");
    const NodeId h = tape.relu_op(tape.matmul_op(tape.spmm_sd_op(adj, x), w));
    const NodeId hidden = tape.relu_op(
        tape.add_bias_op(tape.matmul_op(h, tape.leaf_dense(params.dense1_w, true, "dense1.weight")),
                         tape.leaf_dense(params.dense1_b, true, "dense1.bias")));
    fwd.logits = tape.add_bias_op(
        tape.matmul_op(hidden, tape.leaf_dense(params.dense2_w, true, "dense2.weight")),
        tape.leaf_dense(params.dense2_b, true, "dense2.bias"));
    return fwd;
}

struct BaselineResult {
    GcnBaselineParams params;
    TrainHistory history;
};

/// Same loop and head as the GTN but convolving once over the merged binary
/// adjacency. Used as the single-homogeneous-graph reference point.
inline BaselineResult train_gcn_baseline(const HeteroGraph& graph, const LabeledSplit& split,
                                         std::size_t hidden_dim, std::size_t classifier_hidden,
                                         const TrainConfig& train_config) {
    train_config.validate();
    detail::require(!split.train.empty() && !split.val.empty(), "train: empty train or val split");
    const CsrMatrix merged = merge_edge_types(graph);

    Rng rng(train_config.seed);
    auto glorot = [&rng](std::size_t rows, std::size_t cols) {
        DenseMatrix w(rows, cols);
        const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
        for (double& v : w.values) v = rng.uniform(-bound, bound);
        return w;
    };
    BaselineResult result;
    GcnBaselineParams params;
    params.gcn_weight = glorot(graph.features.n_cols, hidden_dim);
    params.dense1_w = glorot(hidden_dim, classifier_hidden);
    params.dense1_b = DenseMatrix(1, classifier_hidden);
    params.dense2_w = glorot(classifier_hidden, split.num_classes);
    params.dense2_b = DenseMatrix(1, split.num_classes);

    const std::vector<ParamRef> refs = baseline_param_refs(params);
    AdamState state;
    state.init(refs);

    GcnBaselineParams best = params;
    double best_macro = -1.0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int stall = 0;
    for (int epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
        BaselineForward fwd = gcn_baseline_forward(merged, graph.features, params);
        const NodeId ln =
            fwd.tape.cross_entropy_op(fwd.logits, split.train, split.labels_for(split.train));
        const double train_loss = fwd.tape.dense_value(ln).at(0, 0);
        if (!std::isfinite(train_loss)) {
            result.history.diverged = true;
            break;
        }
        adam_step(refs, fwd.tape.backward(ln), state, train_config);

        BaselineForward eval = gcn_baseline_forward(merged, graph.features, params);
        const DenseMatrix& logits = eval.tape.dense_value(eval.logits);
        const double val_loss = cross_entropy_loss(logits, split.val, split.labels_for(split.val));
        const auto [val_macro, val_micro] = evaluate_f1(logits, split.labels, split.val, split.num_classes);
        result.history.epochs.push_back({epoch, train_loss, val_loss, val_macro, val_micro});
        if (val_macro > best_macro || (val_macro == best_macro && val_loss < best_val_loss)) {
            best_macro = val_macro;
            best_val_loss = val_loss;
            best_epoch = epoch;
            best = params;
            stall = 0;
        } else if (++stall >= train_config.patience) {
            break;
        }
    }
    result.history.best_epoch = best_epoch;
    result.history.best_val_macro_f1 = std::max(best_macro, 0.0);
    if (best_epoch > 0 && !split.test.empty()) {
        BaselineForward final_eval = gcn_baseline_forward(merged, graph.features, best);
        const auto [test_macro, test_micro] = evaluate_f1(final_eval.tape.dense_value(final_eval.logits),
                                                          split.labels, split.test, split.num_classes);
        result.history.test_macro_f1 = test_macro;
        result.history.test_micro_f1 = test_micro;
    }
    result.params = std::move(best);
    return result;
}

} // namespace gtn
