#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "graph.hpp"
#include "rng.hpp"
#include "sparse.hpp"

namespace gtn {

/// Where degree normalization is applied along the layer chain.
/// `consumption` keeps layer outputs unnormalized and normalizes the left
/// operand of the next composition (and the GCN input); `output` normalizes
/// each layer's product immediately instead.
enum class NormalizeAt { consumption, output };

struct GtnConfig {
    std::size_t num_layers = 2;   // L, number of GT layers
    std::size_t num_channels = 2; // C
    std::size_t hidden_dim = 64;  // d, GCN embedding width
    std::size_t classifier_hidden = 64;
    bool include_identity = true;
    NormalizeAt normalize_at = NormalizeAt::consumption;
    bool detach_degrees = false;

    /// Selector slots per channel: layer 1 consumes two, each further layer one.
    std::size_t num_selectors() const { return num_layers + 1; }

    void validate() const {
        detail::require(num_layers >= 1, "config: num_layers must be >= 1");
        detail::require(num_channels >= 1, "config: num_channels must be >= 1");
        detail::require(hidden_dim >= 1, "config: hidden_dim must be >= 1");
        detail::require(classifier_hidden >= 1, "config: classifier_hidden must be >= 1");
    }
};

/// All trainable tensors. Selector logits are 1 x K rows, one per channel and
/// selector slot; the GCN weight is shared across channels.
struct GtnParams {
    std::vector<std::vector<DenseMatrix>> selectors; // [channel][slot], each 1 x K
    DenseMatrix gcn_weight;                          // D x d
    DenseMatrix dense1_w;                            // (C*d) x classifier_hidden
    DenseMatrix dense1_b;                            // 1 x classifier_hidden
    DenseMatrix dense2_w;                            // classifier_hidden x num_classes
    DenseMatrix dense2_b;                            // 1 x num_classes
};

inline std::string selector_param_name(std::size_t channel, std::size_t slot) {
    return "selector.c" + std::to_string(channel) + ".s" + std::to_string(slot);
}

/// Canonical flat view of the parameters. Order is fixed; `decay` marks the
/// tensors subject to weight decay (dense/GCN weights, not selectors, not
/// biases).
inline std::vector<ParamRef> param_refs(GtnParams& p) {
    std::vector<ParamRef> refs;
    for (std::size_t c = 0; c < p.selectors.size(); ++c)
        for (std::size_t s = 0; s < p.selectors[c].size(); ++s)
            refs.push_back({selector_param_name(c, s), &p.selectors[c][s], false});
    refs.push_back({"gcn_weight", &p.gcn_weight, true});
    refs.push_back({"dense1.weight", &p.dense1_w, true});
    refs.push_back({"dense1.bias", &p.dense1_b, false});
    refs.push_back({"dense2.weight", &p.dense2_w, true});
    refs.push_back({"dense2.bias", &p.dense2_b, false});
    return refs;
}

/// Seeded initialization: selector logits start at a constant (uniform
/// attention) with a +-0.01 perturbation to break channel symmetry; dense
/// weights use the usual uniform fan-in/fan-out range, biases start at zero.
inline GtnParams init_params(const GtnConfig& config, std::size_t num_candidates,
                             std::size_t feature_dim, std::size_t num_classes, std::uint64_t seed) {
    config.validate();
    detail::require(num_candidates >= 1, "init_params: no candidate matrices");
    Rng rng(seed);
    GtnParams p;
    p.selectors.resize(config.num_channels);
    for (std::size_t c = 0; c < config.num_channels; ++c) {
        p.selectors[c].reserve(config.num_selectors());
        for (std::size_t s = 0; s < config.num_selectors(); ++s) {
            DenseMatrix w(1, num_candidates);
            for (double& v : w.values) v = rng.uniform(-0.01, 0.01);
            p.selectors[c].push_back(std::move(w));
        }
    }
    auto glorot = [&rng](std::size_t rows, std::size_t cols) {
        DenseMatrix w(rows, cols);
        const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
        for (double& v : w.values) v = rng.uniform(-bound, bound);
        return w;
    };
    p.gcn_weight = glorot(feature_dim, config.hidden_dim);
    p.dense1_w = glorot(config.num_channels * config.hidden_dim, config.classifier_hidden);
    p.dense1_b = DenseMatrix(1, config.classifier_hidden);
    p.dense2_w = glorot(config.classifier_hidden, num_classes);
    p.dense2_b = DenseMatrix(1, num_classes);
    return p;
}

struct ForwardOutput {
    DenseMatrix logits;                                  // N x num_classes
    DenseMatrix embeddings;                              // N x (C*d)
    std::vector<CsrMatrix> metapath_adj;                 // per channel A^(L)
    std::vector<std::vector<std::vector<double>>> alphas; // [channel][slot][candidate]
};

// ---------------------------------------------------------------------------
// Pure (tape-free) layer operations
// ---------------------------------------------------------------------------

/// First GT layer at the attention level: Q1 Q2 with given convex weights.
/// The product is returned unnormalized; callers normalize at consumption.
inline CsrMatrix gt_layer_first_alpha(const HeteroGraph& graph, std::span<const double> alpha0,
                                      std::span<const double> alpha1) {
    return spmm_ss(convex_combine(graph.adj, alpha0), convex_combine(graph.adj, alpha1));
}

/// Subsequent GT layer at the attention level: normalize the running
/// meta-path matrix by its degrees and extend it with one more factor.
inline CsrMatrix gt_layer_next_alpha(const CsrMatrix& prev, const HeteroGraph& graph,
                                     std::span<const double> alpha) {
    return spmm_ss(row_normalize(prev), convex_combine(graph.adj, alpha));
}

/// First GT layer for one channel, selectors given as logits.
inline CsrMatrix gt_layer_first(const HeteroGraph& graph, std::span<const double> sel0_logits,
                                std::span<const double> sel1_logits) {
    detail::require(sel0_logits.size() == graph.num_candidates() &&
                        sel1_logits.size() == graph.num_candidates(),
                    "gt_layer_first: selector length != candidate count");
    return gt_layer_first_alpha(graph, softmax_vec(sel0_logits), softmax_vec(sel1_logits));
}

/// Subsequent GT layer, selector given as logits.
inline CsrMatrix gt_layer_next(const CsrMatrix& prev, const HeteroGraph& graph,
                               std::span<const double> sel_logits) {
    detail::require(sel_logits.size() == graph.num_candidates(),
                    "gt_layer_next: selector length != candidate count");
    return gt_layer_next_alpha(prev, graph, softmax_vec(sel_logits));
}

/// Per-channel graph convolution: relu(D^-1 (A + I) X W).
inline DenseMatrix gcn_channel(const CsrMatrix& a, const DenseMatrix& x, const DenseMatrix& w) {
    const CsrMatrix norm = row_normalize(add_identity(a));
    return relu(matmul(spmm_sd(norm, x), w));
}

// ---------------------------------------------------------------------------
// Taped forward
// ---------------------------------------------------------------------------

/// A recorded forward pass: the tape owns every intermediate value. Gradients
/// come from tape.backward on a loss node built with `loss_node`.
struct TapedForward {
    Tape tape;
    NodeId logits = 0;
    ForwardOutput output;
};

inline TapedForward gtn_forward(const HeteroGraph& graph, const GtnParams& params,
                                const GtnConfig& config) {
    config.validate();
    detail::require(graph.includes_identity == config.include_identity,
                    "gtn_forward: graph identity flag does not match config");
    const std::size_t k = graph.num_candidates();
    detail::require(params.selectors.size() == config.num_channels,
                    "gtn_forward: channel count mismatch");
    for (const auto& chan : params.selectors) {
        detail::require(chan.size() == config.num_selectors(), "gtn_forward: selector slot mismatch");
        for (const auto& w : chan)
            detail::require(w.n_rows == 1 && w.n_cols == k, "gtn_forward: selector width != candidates");
    }
    detail::require(params.gcn_weight.n_rows == graph.features.n_cols,
                    "gtn_forward: gcn weight rows != feature dim");
    detail::require(params.dense1_w.n_rows == config.num_channels * config.hidden_dim,
                    "gtn_forward: dense1 input width mismatch");

    TapedForward fwd;
    Tape& tape = fwd.tape;

    std::vector<NodeId> candidates;
    candidates.reserve(k);
    for (const CsrMatrix& a : graph.adj) candidates.push_back(tape.leaf_sparse(a));
    const NodeId x = tape.leaf_dense(graph.features);
    const NodeId w_gcn = tape.leaf_dense(params.gcn_weight, true, "gcn_weight");
    const NodeId d1w = tape.leaf_dense(params.dense1_w, true, "dense1.weight");
    const NodeId d1b = tape.leaf_dense(params.dense1_b, true, "dense1.bias");
    const NodeId d2w = tape.leaf_dense(params.dense2_w, true, "dense2.weight");
    const NodeId d2b = tape.leaf_dense(params.dense2_b, true, "dense2.bias");

    fwd.output.alphas.resize(config.num_channels);
    std::vector<NodeId> channel_embeddings;
    for (std::size_t c = 0; c < config.num_channels; ++c) {
        std::vector<NodeId> alphas;
        for (std::size_t s = 0; s < config.num_selectors(); ++s) {
            const NodeId logits =
                tape.leaf_dense(params.selectors[c][s], true, selector_param_name(c, s));
            alphas.push_back(tape.row_softmax_op(logits));
            fwd.output.alphas[c].push_back(tape.dense_value(alphas.back()).values);
        }

        NodeId chain = tape.spmm_ss_op(tape.convex_combine_op(candidates, alphas[0]),
                                       tape.convex_combine_op(candidates, alphas[1]));
        if (config.normalize_at == NormalizeAt::output)
            chain = tape.row_normalize_op(chain, config.detach_degrees);
        for (std::size_t s = 2; s < config.num_selectors(); ++s) {
            const NodeId q = tape.convex_combine_op(candidates, alphas[s]);
            if (config.normalize_at == NormalizeAt::consumption) {
                chain = tape.spmm_ss_op(tape.row_normalize_op(chain, config.detach_degrees), q);
            } else {
                chain = tape.row_normalize_op(tape.spmm_ss_op(chain, q), config.detach_degrees);
            }
        }
        fwd.output.metapath_adj.push_back(tape.sparse_value(chain));

        const NodeId gcn_adj = tape.row_normalize_op(tape.add_identity_op(chain), config.detach_degrees);
        const NodeId h = tape.relu_op(tape.matmul_op(tape.spmm_sd_op(gcn_adj, x), w_gcn));
        channel_embeddings.push_back(h);
    }

    const NodeId z = tape.concat_cols_op(channel_embeddings);
    const NodeId hidden = tape.relu_op(tape.add_bias_op(tape.matmul_op(z, d1w), d1b));
    fwd.logits = tape.add_bias_op(tape.matmul_op(hidden, d2w), d2b);

    fwd.output.embeddings = tape.dense_value(z);
    fwd.output.logits = tape.dense_value(fwd.logits);
    return fwd;
}

/// Appends the training loss node (mean cross-entropy over training nodes).
inline NodeId loss_node(TapedForward& fwd, const LabeledSplit& split) {
    detail::require(!split.train.empty(), "loss: empty training set");
    return fwd.tape.cross_entropy_op(fwd.logits, split.train, split.labels_for(split.train));
}

/// Mean cross-entropy of a finished forward over the training nodes.
inline double loss(const ForwardOutput& output, const LabeledSplit& split) {
    detail::require(!split.train.empty(), "loss: empty training set");
    const std::vector<int> labels = split.labels_for(split.train);
    return cross_entropy_loss(output.logits, split.train, labels);
}

} // namespace gtn
