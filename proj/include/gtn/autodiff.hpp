#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sparse.hpp"

namespace gtn {

using NodeId = std::size_t;

enum class OpKind {
    leaf_dense,
    leaf_sparse,
    row_softmax,
    convex_combine, // inputs: [alpha (1xK dense), mat_0 ... mat_{K-1} (sparse)]
    spmm_ss,
    spmm_sd,
    row_normalize, // inverse-degree mode
    add_identity,
    matmul,
    relu,
    add_bias,
    concat_cols,
    cross_entropy // inputs: [logits]; node carries (node id, label) pairs
};

/// Gradients for every registered parameter, keyed by parameter name.
struct Gradients {
    std::map<std::string, DenseMatrix> by_name;

    const DenseMatrix& at(const std::string& name) const {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::invalid_argument("gradients: unknown parameter " + name);
        return it->second;
    }
};

/// Named handle to a parameter tensor owned elsewhere. `decay` marks tensors
/// subject to weight decay in the optimizer.
struct ParamRef {
    std::string name;
    DenseMatrix* tensor = nullptr;
    bool decay = false;
};

/// Define-by-run reverse-mode tape over the fixed op set above. Forward
/// values are cached per node; backward replays the record in reverse.
/// A tape is single-owner; build a fresh one per forward pass.
class Tape {
public:
    struct Node {
        OpKind kind;
        std::vector<NodeId> inputs;
        bool is_sparse = false;
        bool requires_grad = false;
        DenseMatrix dense;
        CsrMatrix sparse;
        // op extras
        bool detach_degrees = false;           // row_normalize
        std::vector<double> degrees;           // row_normalize forward degrees
        std::vector<std::size_t> loss_nodes;   // cross_entropy
        std::vector<int> loss_labels;          // cross_entropy
    };

    NodeId leaf_dense(DenseMatrix value, bool requires_grad = false, std::string name = {}) {
        Node n;
        n.kind = OpKind::leaf_dense;
        n.dense = std::move(value);
        n.requires_grad = requires_grad;
        const NodeId id = push(std::move(n));
        if (requires_grad) {
            if (name.empty()) throw std::invalid_argument("tape: parameter leaf needs a name");
            for (const auto& [existing, _] : params_)
                if (existing == name) throw std::invalid_argument("tape: duplicate parameter " + name);
            params_.emplace_back(std::move(name), id);
        }
        return id;
    }

    NodeId leaf_sparse(CsrMatrix value, bool requires_grad = false) {
        Node n;
        n.kind = OpKind::leaf_sparse;
        n.is_sparse = true;
        n.sparse = std::move(value);
        n.requires_grad = requires_grad;
        return push(std::move(n));
    }

    /// Generic entry point: runs the forward op and appends a tape entry.
    /// Ops that need extra arguments (cross_entropy) have typed methods only.
    NodeId record(OpKind kind, const std::vector<NodeId>& inputs) {
        switch (kind) {
            case OpKind::row_softmax: return row_softmax_op(one(inputs, "row_softmax"));
            case OpKind::relu: return relu_op(one(inputs, "relu"));
            case OpKind::add_identity: return add_identity_op(one(inputs, "add_identity"));
            case OpKind::row_normalize: return row_normalize_op(one(inputs, "row_normalize"));
            case OpKind::spmm_ss: return spmm_ss_op(two(inputs, "spmm_ss").first, two(inputs, "spmm_ss").second);
            case OpKind::spmm_sd: return spmm_sd_op(two(inputs, "spmm_sd").first, two(inputs, "spmm_sd").second);
            case OpKind::matmul: return matmul_op(two(inputs, "matmul").first, two(inputs, "matmul").second);
            case OpKind::add_bias: return add_bias_op(two(inputs, "add_bias").first, two(inputs, "add_bias").second);
            case OpKind::concat_cols: return concat_cols_op(inputs);
            case OpKind::convex_combine: {
                if (inputs.size() < 2) throw std::invalid_argument("convex_combine: needs alpha and matrices");
                return convex_combine_op(std::vector<NodeId>(inputs.begin() + 1, inputs.end()), inputs[0]);
            }
            default: throw std::invalid_argument("record: unsupported op kind");
        }
    }

    NodeId row_softmax_op(NodeId x) {
        Node n = unary(OpKind::row_softmax, x);
        n.dense = gtn::row_softmax(dense_value(x));
        return push(std::move(n));
    }

    NodeId relu_op(NodeId x) {
        Node n = unary(OpKind::relu, x);
        n.dense = gtn::relu(dense_value(x));
        return push(std::move(n));
    }

    NodeId matmul_op(NodeId a, NodeId b) {
        Node n = binary(OpKind::matmul, a, b);
        n.dense = gtn::matmul(dense_value(a), dense_value(b));
        return push(std::move(n));
    }

    NodeId add_bias_op(NodeId x, NodeId bias) {
        Node n = binary(OpKind::add_bias, x, bias);
        n.dense = gtn::add_bias(dense_value(x), dense_value(bias));
        return push(std::move(n));
    }

    NodeId concat_cols_op(const std::vector<NodeId>& xs) {
        Node n;
        n.kind = OpKind::concat_cols;
        n.inputs = xs;
        std::vector<const DenseMatrix*> ptrs;
        for (NodeId x : xs) {
            ptrs.push_back(&dense_value(x));
            n.requires_grad = n.requires_grad || nodes_[x].requires_grad;
        }
        n.dense = gtn::concat_cols(ptrs);
        return push(std::move(n));
    }

    /// mats are sparse nodes, alpha a 1xK dense node.
    NodeId convex_combine_op(const std::vector<NodeId>& mats, NodeId alpha) {
        const DenseMatrix& a = dense_value(alpha);
        if (a.n_rows != 1 || a.n_cols != mats.size())
            throw std::invalid_argument("convex_combine: alpha must be 1 x |mats|");
        Node n;
        n.kind = OpKind::convex_combine;
        n.is_sparse = true;
        n.inputs.push_back(alpha);
        n.requires_grad = nodes_[alpha].requires_grad;
        std::vector<const CsrMatrix*> ptrs;
        for (NodeId m : mats) {
            n.inputs.push_back(m);
            ptrs.push_back(&sparse_value(m));
            n.requires_grad = n.requires_grad || nodes_[m].requires_grad;
        }
        n.sparse = gtn::convex_combine(std::span<const CsrMatrix* const>(ptrs), a.values);
        return push(std::move(n));
    }

    NodeId spmm_ss_op(NodeId a, NodeId b) {
        Node n = binary(OpKind::spmm_ss, a, b);
        n.is_sparse = true;
        n.sparse = gtn::spmm_ss(sparse_value(a), sparse_value(b));
        return push(std::move(n));
    }

    NodeId spmm_sd_op(NodeId a, NodeId x) {
        Node n = binary(OpKind::spmm_sd, a, x);
        n.dense = gtn::spmm_sd(sparse_value(a), dense_value(x));
        return push(std::move(n));
    }

    NodeId row_normalize_op(NodeId a, bool detach_degrees = false) {
        Node n = unary(OpKind::row_normalize, a);
        n.is_sparse = true;
        n.detach_degrees = detach_degrees;
        n.sparse = gtn::row_normalize(sparse_value(a));
        n.degrees = gtn::row_degrees(sparse_value(a)).values;
        return push(std::move(n));
    }

    NodeId add_identity_op(NodeId a) {
        Node n = unary(OpKind::add_identity, a);
        n.is_sparse = true;
        n.sparse = gtn::add_identity(sparse_value(a));
        return push(std::move(n));
    }

    /// Mean cross-entropy of softmax(logits) over the listed (node, label)
    /// pairs; returns a 1x1 node.
    NodeId cross_entropy_op(NodeId logits, std::vector<std::size_t> node_ids, std::vector<int> labels) {
        if (node_ids.empty()) throw std::invalid_argument("cross_entropy: empty node set");
        if (node_ids.size() != labels.size())
            throw std::invalid_argument("cross_entropy: node/label count mismatch");
        const DenseMatrix& z = dense_value(logits);
        Node n = unary(OpKind::cross_entropy, logits);
        n.loss_nodes = std::move(node_ids);
        n.loss_labels = std::move(labels);
        double loss = 0.0;
        for (std::size_t k = 0; k < n.loss_nodes.size(); ++k) {
            const std::size_t row = n.loss_nodes[k];
            const int label = n.loss_labels[k];
            if (row >= z.n_rows || label < 0 || static_cast<std::size_t>(label) >= z.n_cols)
                throw std::invalid_argument("cross_entropy: node or label out of range");
            loss += log_sum_exp(z.row(row)) - z.at(row, static_cast<std::size_t>(label));
        }
        n.dense = DenseMatrix(1, 1, loss / static_cast<double>(n.loss_nodes.size()));
        return push(std::move(n));
    }

    const DenseMatrix& dense_value(NodeId id) const {
        const Node& n = nodes_.at(id);
        if (n.is_sparse) throw std::invalid_argument("tape: node is sparse, dense value requested");
        return n.dense;
    }

    const CsrMatrix& sparse_value(NodeId id) const {
        const Node& n = nodes_.at(id);
        if (!n.is_sparse) throw std::invalid_argument("tape: node is dense, sparse value requested");
        return n.sparse;
    }

    const std::vector<std::pair<std::string, NodeId>>& parameters() const { return params_; }
    std::size_t size() const { return nodes_.size(); }

    /// Reverse traversal from a scalar loss node. Every registered parameter
    /// receives an entry (zero if the loss does not depend on it).
    Gradients backward(NodeId loss) const {
        const Node& loss_node = nodes_.at(loss);
        if (loss_node.is_sparse || loss_node.dense.n_rows != 1 || loss_node.dense.n_cols != 1)
            throw std::invalid_argument("backward: loss node is not scalar");

        std::vector<std::vector<double>> adj(nodes_.size());
        touch(adj, loss)[0] = 1.0;

        for (NodeId id = loss + 1; id-- > 0;) {
            const Node& n = nodes_[id];
            if (!n.requires_grad || adj[id].empty()) continue;
            propagate(id, n, adj);
        }

        Gradients g;
        for (const auto& [name, id] : params_) {
            const DenseMatrix& value = nodes_[id].dense;
            DenseMatrix grad(value.n_rows, value.n_cols);
            if (!adj[id].empty()) grad.values = adj[id];
            g.by_name.emplace(name, std::move(grad));
        }
        return g;
    }

    /// Generalized vector-Jacobian product: seeds `out` with an arbitrary
    /// cotangent and returns the adjoint value arrays of the `wrt` nodes
    /// (dense: row-major; sparse: aligned with the node's stored values).
    std::vector<std::vector<double>> vjp(NodeId out, std::span<const double> seed,
                                         std::span<const NodeId> wrt) const {
        const Node& out_node = nodes_.at(out);
        const std::size_t out_len = out_node.is_sparse ? out_node.sparse.nnz() : out_node.dense.values.size();
        if (seed.size() != out_len) throw std::invalid_argument("vjp: seed length mismatch");

        std::vector<std::vector<double>> adj(nodes_.size());
        touch(adj, out);
        std::copy(seed.begin(), seed.end(), adj[out].begin());
        for (NodeId id = out + 1; id-- > 0;) {
            const Node& n = nodes_[id];
            if (!n.requires_grad || adj[id].empty()) continue;
            propagate(id, n, adj);
        }

        std::vector<std::vector<double>> result;
        for (NodeId id : wrt) {
            const Node& n = nodes_.at(id);
            const std::size_t len = n.is_sparse ? n.sparse.nnz() : n.dense.values.size();
            result.push_back(adj[id].empty() ? std::vector<double>(len, 0.0) : adj[id]);
        }
        return result;
    }

private:
    std::vector<Node> nodes_;
    std::vector<std::pair<std::string, NodeId>> params_;

    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    Node unary(OpKind kind, NodeId x) {
        Node n;
        n.kind = kind;
        n.inputs = {x};
        n.requires_grad = nodes_.at(x).requires_grad;
        return n;
    }

    Node binary(OpKind kind, NodeId a, NodeId b) {
        Node n;
        n.kind = kind;
        n.inputs = {a, b};
        n.requires_grad = nodes_.at(a).requires_grad || nodes_.at(b).requires_grad;
        return n;
    }

    static NodeId one(const std::vector<NodeId>& in, const char* op) {
        if (in.size() != 1) throw std::invalid_argument(std::string(op) + ": expects one input");
        return in[0];
    }

    static std::pair<NodeId, NodeId> two(const std::vector<NodeId>& in, const char* op) {
        if (in.size() != 2) throw std::invalid_argument(std::string(op) + ": expects two inputs");
        return {in[0], in[1]};
    }

    static double log_sum_exp(std::span<const double> row) {
        double m = -std::numeric_limits<double>::infinity();
        for (double v : row) m = std::max(m, v);
        double s = 0.0;
        for (double v : row) s += std::exp(v - m);
        return m + std::log(s);
    }

    std::vector<double>& touch(std::vector<std::vector<double>>& adj, NodeId id) const {
        if (adj[id].empty()) {
            const Node& n = nodes_[id];
            adj[id].assign(n.is_sparse ? n.sparse.nnz() : n.dense.values.size(), 0.0);
        }
        return adj[id];
    }

    bool wants_grad(NodeId id) const { return nodes_[id].requires_grad; }

    // Dot product of sorted sparse rows a[i,:] and b[j,:].
    static double sparse_row_dot(const CsrMatrix& a, std::size_t i, std::span<const double> a_vals,
                                 const CsrMatrix& b, std::size_t j, std::span<const double> b_vals) {
        std::size_t ka = a.row_begin(i), kb = b.row_begin(j);
        const std::size_t ea = a.row_end(i), eb = b.row_end(j);
        double s = 0.0;
        while (ka < ea && kb < eb) {
            const std::size_t ca = a.col_indices[ka], cb = b.col_indices[kb];
            if (ca == cb) {
                s += a_vals[ka] * b_vals[kb];
                ++ka;
                ++kb;
            } else if (ca < cb) {
                ++ka;
            } else {
                ++kb;
            }
        }
        return s;
    }

    // Calls fn(k_sub, k_sup) for positions shared by sub[i,:] and sup[i,:].
    template <typename Fn>
    static void for_each_common(const CsrMatrix& sub, const CsrMatrix& sup, std::size_t i, Fn&& fn) {
        std::size_t ks = sub.row_begin(i), kp = sup.row_begin(i);
        const std::size_t es = sub.row_end(i), ep = sup.row_end(i);
        while (ks < es && kp < ep) {
            const std::size_t cs = sub.col_indices[ks], cp = sup.col_indices[kp];
            if (cs == cp) {
                fn(ks, kp);
                ++ks;
                ++kp;
            } else if (cs < cp) {
                ++ks;
            } else {
                ++kp;
            }
        }
    }

    void propagate(NodeId id, const Node& n, std::vector<std::vector<double>>& adj) const {
        const std::vector<double>& g = adj[id];
        switch (n.kind) {
            case OpKind::leaf_dense:
            case OpKind::leaf_sparse:
                return;

            case OpKind::row_softmax: {
                const NodeId x = n.inputs[0];
                if (!wants_grad(x)) return;
                const DenseMatrix& y = n.dense;
                auto& dx = touch(adj, x);
                for (std::size_t i = 0; i < y.n_rows; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < y.n_cols; ++j)
                        dot += g[i * y.n_cols + j] * y.at(i, j);
                    for (std::size_t j = 0; j < y.n_cols; ++j) {
                        const std::size_t k = i * y.n_cols + j;
                        dx[k] += y.values[k] * (g[k] - dot);
                    }
                }
                return;
            }

            case OpKind::relu: {
                const NodeId xid = n.inputs[0];
                if (!wants_grad(xid)) return;
                const DenseMatrix& x = nodes_[xid].dense;
                auto& dx = touch(adj, xid);
                for (std::size_t k = 0; k < x.values.size(); ++k)
                    if (x.values[k] > 0.0) dx[k] += g[k]; // subgradient 0 at exactly 0
                return;
            }

            case OpKind::matmul: {
                const NodeId aid = n.inputs[0], bid = n.inputs[1];
                const DenseMatrix& a = nodes_[aid].dense;
                const DenseMatrix& b = nodes_[bid].dense;
                DenseMatrix gm(a.n_rows, b.n_cols);
                gm.values = g;
                if (wants_grad(aid)) {
                    const DenseMatrix da = gtn::matmul(gm, dense_transpose(b));
                    auto& acc = touch(adj, aid);
                    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += da.values[k];
                }
                if (wants_grad(bid)) {
                    const DenseMatrix db = gtn::matmul(dense_transpose(a), gm);
                    auto& acc = touch(adj, bid);
                    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += db.values[k];
                }
                return;
            }

            case OpKind::add_bias: {
                const NodeId xid = n.inputs[0], bid = n.inputs[1];
                const DenseMatrix& out = n.dense;
                if (wants_grad(xid)) {
                    auto& dx = touch(adj, xid);
                    for (std::size_t k = 0; k < dx.size(); ++k) dx[k] += g[k];
                }
                if (wants_grad(bid)) {
                    auto& db = touch(adj, bid);
                    for (std::size_t i = 0; i < out.n_rows; ++i)
                        for (std::size_t j = 0; j < out.n_cols; ++j) db[j] += g[i * out.n_cols + j];
                }
                return;
            }

            case OpKind::concat_cols: {
                const DenseMatrix& out = n.dense;
                std::size_t off = 0;
                for (NodeId xid : n.inputs) {
                    const DenseMatrix& x = nodes_[xid].dense;
                    if (wants_grad(xid)) {
                        auto& dx = touch(adj, xid);
                        for (std::size_t i = 0; i < x.n_rows; ++i)
                            for (std::size_t j = 0; j < x.n_cols; ++j)
                                dx[i * x.n_cols + j] += g[i * out.n_cols + off + j];
                    }
                    off += x.n_cols;
                }
                return;
            }

            case OpKind::convex_combine: {
                const NodeId alpha_id = n.inputs[0];
                const DenseMatrix& alpha = nodes_[alpha_id].dense;
                for (std::size_t k = 0; k + 1 < n.inputs.size(); ++k) {
                    const NodeId mid = n.inputs[k + 1];
                    const CsrMatrix& m = nodes_[mid].sparse;
                    const bool want_alpha = wants_grad(alpha_id);
                    const bool want_mat = wants_grad(mid);
                    if (!want_alpha && !want_mat) continue;
                    double dalpha_k = 0.0;
                    std::vector<double>* dm = want_mat ? &touch(adj, mid) : nullptr;
                    for (std::size_t i = 0; i < m.n_rows; ++i)
                        for_each_common(m, n.sparse, i, [&](std::size_t km, std::size_t ko) {
                            dalpha_k += m.values[km] * g[ko];
                            if (dm) (*dm)[km] += alpha.values[k] * g[ko];
                        });
                    if (want_alpha) touch(adj, alpha_id)[k] += dalpha_k;
                }
                return;
            }

            case OpKind::spmm_ss: {
                const NodeId aid = n.inputs[0], bid = n.inputs[1];
                const CsrMatrix& a = nodes_[aid].sparse;
                const CsrMatrix& b = nodes_[bid].sparse;
                const CsrMatrix& out = n.sparse;
                if (wants_grad(aid)) {
                    // dA[i,k] = sum_j G[i,j] B[k,j], on A's pattern.
                    auto& da = touch(adj, aid);
                    for (std::size_t i = 0; i < a.n_rows; ++i)
                        for (std::size_t ka = a.row_begin(i); ka < a.row_end(i); ++ka)
                            da[ka] += sparse_row_dot(out, i, g, b, a.col_indices[ka], b.values);
                }
                if (wants_grad(bid)) {
                    // dB[k,j] = sum_i A[i,k] G[i,j], on B's pattern.
                    const CsrMatrix at = gtn::transpose(a);
                    CsrMatrix gt = out;
                    gt.values = g;
                    gt = gtn::transpose(gt);
                    auto& db = touch(adj, bid);
                    for (std::size_t k = 0; k < b.n_rows; ++k)
                        for (std::size_t kb = b.row_begin(k); kb < b.row_end(k); ++kb)
                            db[kb] += sparse_row_dot(at, k, at.values, gt, b.col_indices[kb], gt.values);
                }
                return;
            }

            case OpKind::spmm_sd: {
                const NodeId aid = n.inputs[0], xid = n.inputs[1];
                const CsrMatrix& a = nodes_[aid].sparse;
                const DenseMatrix& x = nodes_[xid].dense;
                DenseMatrix gm(a.n_rows, x.n_cols);
                gm.values = g;
                if (wants_grad(xid)) {
                    const DenseMatrix dx = gtn::spmm_sd(gtn::transpose(a), gm);
                    auto& acc = touch(adj, xid);
                    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += dx.values[k];
                }
                if (wants_grad(aid)) {
                    auto& da = touch(adj, aid);
                    for (std::size_t i = 0; i < a.n_rows; ++i)
                        for (std::size_t ka = a.row_begin(i); ka < a.row_end(i); ++ka) {
                            const std::size_t col = a.col_indices[ka];
                            double s = 0.0;
                            for (std::size_t j = 0; j < x.n_cols; ++j)
                                s += gm.at(i, j) * x.at(col, j);
                            da[ka] += s;
                        }
                }
                return;
            }

            case OpKind::row_normalize: {
                const NodeId aid = n.inputs[0];
                if (!wants_grad(aid)) return;
                const CsrMatrix& out = n.sparse; // same pattern as the input
                auto& da = touch(adj, aid);
                for (std::size_t i = 0; i < out.n_rows; ++i) {
                    const double d = n.degrees[i];
                    if (d == 0.0) continue;
                    double s = 0.0;
                    if (!n.detach_degrees)
                        for (std::size_t k = out.row_begin(i); k < out.row_end(i); ++k)
                            s += g[k] * out.values[k];
                    for (std::size_t k = out.row_begin(i); k < out.row_end(i); ++k)
                        da[k] += (g[k] - s) / d;
                }
                return;
            }

            case OpKind::add_identity: {
                const NodeId aid = n.inputs[0];
                if (!wants_grad(aid)) return;
                const CsrMatrix& a = nodes_[aid].sparse;
                auto& da = touch(adj, aid);
                for (std::size_t i = 0; i < a.n_rows; ++i)
                    for_each_common(a, n.sparse, i, [&](std::size_t ka, std::size_t ko) { da[ka] += g[ko]; });
                return;
            }

            case OpKind::cross_entropy: {
                const NodeId zid = n.inputs[0];
                if (!wants_grad(zid)) return;
                const DenseMatrix& z = nodes_[zid].dense;
                auto& dz = touch(adj, zid);
                const double scale = g[0] / static_cast<double>(n.loss_nodes.size());
                for (std::size_t k = 0; k < n.loss_nodes.size(); ++k) {
                    const std::size_t row = n.loss_nodes[k];
                    const auto probs = gtn::softmax_vec(z.row(row));
                    for (std::size_t c = 0; c < z.n_cols; ++c) {
                        double p = probs[c];
                        if (c == static_cast<std::size_t>(n.loss_labels[k])) p -= 1.0;
                        dz[row * z.n_cols + c] += scale * p;
                    }
                }
                return;
            }
        }
    }
};

/// Plain (tape-free) mean cross-entropy, for evaluation passes.
inline double cross_entropy_loss(const DenseMatrix& logits, std::span<const std::size_t> node_ids,
                                 std::span<const int> labels) {
    if (node_ids.empty()) throw std::invalid_argument("cross_entropy: empty node set");
    double loss = 0.0;
    for (std::size_t k = 0; k < node_ids.size(); ++k) {
        const auto row = logits.row(node_ids[k]);
        double m = row[0];
        for (double v : row) m = std::max(m, v);
        double s = 0.0;
        for (double v : row) s += std::exp(v - m);
        loss += m + std::log(s) - logits.at(node_ids[k], static_cast<std::size_t>(labels[k]));
    }
    return loss / static_cast<double>(node_ids.size());
}

/// Central-difference gradient check. Perturbs each coordinate of each
/// referenced tensor in place, evaluates `f`, and compares against the
/// analytic gradients. Returns the max over coordinates of
/// |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
inline double finite_diff_check(const std::function<double()>& f, const Gradients& analytic,
                                const std::vector<ParamRef>& params, double epsilon = 1e-5,
                                std::string* worst_param = nullptr) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("finite_diff_check: epsilon must be positive");
    double max_rel = 0.0;
    for (const ParamRef& p : params) {
        const DenseMatrix& grad = analytic.at(p.name);
        if (!grad.same_shape(*p.tensor))
            throw std::invalid_argument("finite_diff_check: gradient shape mismatch for " + p.name);
        for (std::size_t k = 0; k < p.tensor->values.size(); ++k) {
            const double saved = p.tensor->values[k];
            p.tensor->values[k] = saved + epsilon;
            const double up = f();
            p.tensor->values[k] = saved - epsilon;
            const double down = f();
            p.tensor->values[k] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw std::runtime_error("finite_diff_check: non-finite loss at " + p.name);
            const double fd = (up - down) / (2.0 * epsilon);
            const double ad = grad.values[k];
            const double rel = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
            if (rel > max_rel) {
                max_rel = rel;
                if (worst_param) *worst_param = p.name + "[" + std::to_string(k) + "]";
            }
        }
    }
    return max_rel;
}

} // namespace gtn
