#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparse.hpp"

namespace gtn {

struct NodeType {
    std::string name;
    std::size_t count = 0;
    std::size_t offset = 0; // first node id of this type
};

struct EdgeType {
    std::string name;
    std::size_t src_type = 0;
    std::size_t dst_type = 0;
};

/// Node and edge type registries. Node ids share one global space; each node
/// type owns the contiguous id range [offset, offset + count).
struct TypeRegistry {
    std::vector<NodeType> node_types;
    std::vector<EdgeType> edge_types;

    std::size_t num_nodes() const {
        return node_types.empty() ? 0 : node_types.back().offset + node_types.back().count;
    }

    void assign_offsets() {
        std::size_t off = 0;
        for (NodeType& t : node_types) {
            t.offset = off;
            off += t.count;
        }
    }

    std::size_t node_type_of(std::size_t node) const {
        for (std::size_t t = 0; t < node_types.size(); ++t)
            if (node < node_types[t].offset + node_types[t].count) return t;
        throw std::invalid_argument("registry: node id " + std::to_string(node) + " out of range");
    }

    std::size_t find_node_type(const std::string& name) const {
        for (std::size_t t = 0; t < node_types.size(); ++t)
            if (node_types[t].name == name) return t;
        throw std::invalid_argument("registry: unknown node type " + name);
    }

    std::size_t find_edge_type(const std::string& name) const {
        for (std::size_t k = 0; k < edge_types.size(); ++k)
            if (edge_types[k].name == name) return k;
        throw std::invalid_argument("registry: unknown edge type " + name);
    }

    bool in_type(std::size_t node, std::size_t type) const {
        const NodeType& t = node_types[type];
        return node >= t.offset && node < t.offset + t.count;
    }
};

/// Heterogeneous graph: one N x N adjacency matrix per edge type plus node
/// features. adj[k][i, j] != 0 records a type-k edge from node j to node i.
/// When includes_identity is set, adj[0] is the identity matrix and the edge
/// type list describes adj[1..].
struct HeteroGraph {
    TypeRegistry registry;
    std::vector<CsrMatrix> adj;
    DenseMatrix features;
    bool includes_identity = false;

    std::size_t num_nodes() const { return registry.num_nodes(); }
    std::size_t num_candidates() const { return adj.size(); }

    /// Name of candidate matrix k, accounting for a prepended identity.
    std::string candidate_name(std::size_t k) const {
        if (includes_identity) return k == 0 ? std::string("identity") : registry.edge_types[k - 1].name;
        return registry.edge_types[k].name;
    }

    /// Edge type index of candidate k, or npos for the identity slot.
    static constexpr std::size_t identity_slot = static_cast<std::size_t>(-1);
    std::size_t candidate_edge_type(std::size_t k) const {
        if (includes_identity) return k == 0 ? identity_slot : k - 1;
        return k;
    }
};

struct LabeledSplit {
    std::vector<int> labels; // per node; -1 marks unlabeled nodes
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
    int num_classes = 0;
    std::size_t target_type = 0;

    std::vector<int> labels_for(const std::vector<std::size_t>& nodes) const {
        std::vector<int> out;
        out.reserve(nodes.size());
        for (std::size_t n : nodes) out.push_back(labels.at(n));
        return out;
    }
};

/// Structural validation: adjacency endpoints must respect the declared
/// (src, dst) node types of each edge type.
inline void validate_graph(const HeteroGraph& g) {
    const std::size_t n = g.num_nodes();
    const std::size_t expected = g.registry.edge_types.size() + (g.includes_identity ? 1 : 0);
    detail::require(g.adj.size() == expected, "graph: adjacency count does not match edge types");
    detail::require(g.features.n_rows == n, "graph: feature row count != node count");
    for (std::size_t k = 0; k < g.adj.size(); ++k) {
        const CsrMatrix& a = g.adj[k];
        detail::require(a.n_rows == n && a.n_cols == n, "graph: adjacency must be N x N");
        csr_validate(a);
        const std::size_t et = g.candidate_edge_type(k);
        if (et == HeteroGraph::identity_slot) {
            detail::require(a.nnz() == n, "graph: identity slot is not the identity");
            for (std::size_t i = 0; i < n; ++i)
                detail::require(a.row_begin(i) + 1 == a.row_end(i) && a.col_indices[a.row_begin(i)] == i &&
                                    a.values[a.row_begin(i)] == 1.0,
                                "graph: identity slot is not the identity");
            continue;
        }
        const EdgeType& e = g.registry.edge_types[et];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = a.row_begin(i); p < a.row_end(i); ++p) {
                detail::require(g.registry.in_type(i, e.dst_type),
                                "graph: edge type " + e.name + " has a row outside its dst type");
                detail::require(g.registry.in_type(a.col_indices[p], e.src_type),
                                "graph: edge type " + e.name + " has a column outside its src type");
            }
    }
}

inline void validate_split(const HeteroGraph& g, const LabeledSplit& s) {
    detail::require(s.labels.size() == g.num_nodes(), "split: label vector length != node count");
    detail::require(s.num_classes >= 1, "split: no classes");
    std::vector<char> seen(g.num_nodes(), 0);
    for (const auto* part : {&s.train, &s.val, &s.test})
        for (std::size_t node : *part) {
            detail::require(node < g.num_nodes(), "split: node id out of range");
            detail::require(!seen[node], "split: train/val/test sets overlap");
            seen[node] = 1;
            detail::require(s.labels[node] >= 0, "split: split node has no label");
            detail::require(g.registry.in_type(node, s.target_type), "split: node outside target type");
        }
    for (std::size_t node = 0; node < s.labels.size(); ++node)
        if (s.labels[node] >= 0)
            detail::require(s.labels[node] < s.num_classes, "split: label out of class range");
}

/// Copy of the graph with the identity matrix prepended as candidate 0.
inline HeteroGraph with_identity(const HeteroGraph& g) {
    detail::require(!g.includes_identity, "with_identity: identity already present");
    HeteroGraph out = g;
    out.includes_identity = true;
    out.adj.insert(out.adj.begin(), csr_identity(g.num_nodes()));
    return out;
}

/// Binary union of all edge-type matrices, ignoring a prepended identity.
/// This is the single-graph view used by the homogeneous-GCN baseline.
inline CsrMatrix merge_edge_types(const HeteroGraph& g) {
    const std::size_t n = g.num_nodes();
    std::vector<std::tuple<std::size_t, std::size_t, double>> trips;
    for (std::size_t k = g.includes_identity ? 1 : 0; k < g.adj.size(); ++k) {
        const CsrMatrix& a = g.adj[k];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = a.row_begin(i); p < a.row_end(i); ++p)
                trips.emplace_back(i, a.col_indices[p], 1.0);
    }
    CsrMatrix merged = csr_from_triplets(n, n, std::move(trips));
    for (double& v : merged.values) v = 1.0; // duplicates collapse to binary
    return merged;
}

} // namespace gtn
