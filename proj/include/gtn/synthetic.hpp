#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "graph.hpp"
#include "rng.hpp"
#include "sparse.hpp"

namespace gtn {

// Planted-meta-path benchmark generator. Every node gets a latent group; the
// edge types along the planted path connect only same-group endpoints, so the
// group of a target node is recoverable exactly by walking the planted path.
// Features expose the group one-hot only at the far endpoint type, which
// keeps single-hop models blind to the labels.

struct SyntheticNodeType {
    std::string name;
    std::size_t count = 0;
};

struct SyntheticEdgeType {
    std::string name;
    std::string src;
    std::string dst;
    double density = 0.05;
};

struct SyntheticSpec {
    std::vector<SyntheticNodeType> node_types;
    std::vector<SyntheticEdgeType> edge_types;
    std::vector<std::string> planted_path; // edge-type names, walked from the target type outward
    int num_classes = 3;
    double noise = 0.0; // corruption rate of training labels; val/test labels stay clean
    std::uint64_t seed = 0;
    double train_fraction = 0.3;
    double val_fraction = 0.2;
};

struct SyntheticGroundTruth {
    std::vector<std::string> planted_path;  // as specified: target -> ... -> far
    std::vector<std::string> reverse_path;  // mirror types, far -> ... -> target (the
                                            // aggregation direction a model must select)
    std::vector<int> latent_groups;         // per node
};

namespace synth_detail {

inline void infeasible(const std::string& why) {
    throw std::invalid_argument("synthetic spec infeasible: " + why);
}

template <typename T>
inline void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_index(i)]);
}

} // namespace synth_detail

inline std::tuple<HeteroGraph, LabeledSplit, SyntheticGroundTruth>
generate_synthetic(const SyntheticSpec& spec) {
    using synth_detail::infeasible;

    if (spec.node_types.empty()) infeasible("no node types");
    if (spec.edge_types.empty()) infeasible("no edge types");
    if (spec.planted_path.empty()) infeasible("no planted meta-path");
    if (spec.num_classes < 2) infeasible("need at least two classes");
    if (!(spec.noise >= 0.0 && spec.noise < 1.0)) infeasible("noise rate must be in [0,1)");

    HeteroGraph g;
    for (const auto& nt : spec.node_types) {
        if (nt.count == 0) infeasible("node type " + nt.name + " has zero nodes");
        g.registry.node_types.push_back({nt.name, nt.count, 0});
    }
    g.registry.assign_offsets();
    for (const auto& et : spec.edge_types)
        g.registry.edge_types.push_back(
            {et.name, g.registry.find_node_type(et.src), g.registry.find_node_type(et.dst)});
    const std::size_t n = g.num_nodes();
    const std::size_t num_types = g.registry.edge_types.size();

    // Planted path must chain type-consistently starting at the target type.
    std::vector<std::size_t> planted;
    for (const auto& name : spec.planted_path) planted.push_back(g.registry.find_edge_type(name));
    for (std::size_t h = 0; h + 1 < planted.size(); ++h)
        if (g.registry.edge_types[planted[h]].dst_type != g.registry.edge_types[planted[h + 1]].src_type)
            infeasible("planted path is not type-consistent at hop " + std::to_string(h + 1));
    const std::size_t target_type = g.registry.edge_types[planted.front()].src_type;
    const std::size_t far_type = g.registry.edge_types[planted.back()].dst_type;

    Rng rng(spec.seed);

    // Balanced latent groups per type so every group is populated everywhere.
    std::vector<int> group(n, 0);
    for (const NodeType& t : g.registry.node_types) {
        if (t.count < static_cast<std::size_t>(spec.num_classes))
            infeasible("node type " + t.name + " smaller than the class count");
        std::vector<std::size_t> order(t.count);
        std::iota(order.begin(), order.end(), t.offset);
        synth_detail::shuffle(order, rng);
        for (std::size_t k = 0; k < order.size(); ++k)
            group[order[k]] = static_cast<int>(k % spec.num_classes);
    }
    std::vector<std::vector<std::vector<std::size_t>>> members(g.registry.node_types.size());
    for (std::size_t t = 0; t < g.registry.node_types.size(); ++t) {
        members[t].resize(spec.num_classes);
        const NodeType& nt = g.registry.node_types[t];
        for (std::size_t v = nt.offset; v < nt.offset + nt.count; ++v)
            members[t][group[v]].push_back(v);
    }

    // Edge materialization. Planted types connect same-group pairs with at
    // least one edge per source; a non-planted type whose signature reverses
    // a planted one mirrors its transpose; everything else is plain random.
    std::vector<std::vector<std::tuple<std::size_t, std::size_t, double>>> edges(num_types);
    auto is_planted = [&](std::size_t k) {
        return std::find(planted.begin(), planted.end(), k) != planted.end();
    };
    for (std::size_t k = 0; k < num_types; ++k) {
        if (!is_planted(k)) continue;
        const EdgeType& et = g.registry.edge_types[k];
        const double density = spec.edge_types[k].density;
        const NodeType& st = g.registry.node_types[et.src_type];
        for (std::size_t u = st.offset; u < st.offset + st.count; ++u) {
            const auto& pool = members[et.dst_type][group[u]];
            bool any = false;
            for (std::size_t v : pool)
                if (rng.bernoulli(density)) {
                    edges[k].emplace_back(v, u, 1.0);
                    any = true;
                }
            if (!any) edges[k].emplace_back(pool[rng.uniform_index(pool.size())], u, 1.0);
        }
    }
    for (std::size_t k = 0; k < num_types; ++k) {
        if (is_planted(k)) continue;
        const EdgeType& et = g.registry.edge_types[k];
        bool mirrored = false;
        for (std::size_t p : planted) {
            const EdgeType& pe = g.registry.edge_types[p];
            if (pe.src_type == et.dst_type && pe.dst_type == et.src_type) {
                for (const auto& [dst, src, w] : edges[p]) edges[k].emplace_back(src, dst, w);
                mirrored = true;
            }
        }
        if (mirrored) continue;
        const NodeType& st = g.registry.node_types[et.src_type];
        const NodeType& dt = g.registry.node_types[et.dst_type];
        const double density = spec.edge_types[k].density;
        for (std::size_t u = st.offset; u < st.offset + st.count; ++u)
            for (std::size_t v = dt.offset; v < dt.offset + dt.count; ++v)
                if (rng.bernoulli(density)) edges[k].emplace_back(v, u, 1.0);
    }
    for (std::size_t k = 0; k < num_types; ++k) {
        CsrMatrix a = csr_from_triplets(n, n, std::move(edges[k]));
        for (double& v : a.values) v = 1.0; // overlapping mirrors collapse to unit edges
        g.adj.push_back(std::move(a));
    }

    // Features: a constant column plus the group one-hot on far-type nodes.
    g.features = DenseMatrix(n, static_cast<std::size_t>(spec.num_classes) + 1);
    for (std::size_t v = 0; v < n; ++v) {
        g.features.at(v, 0) = 1.0;
        if (g.registry.in_type(v, far_type)) g.features.at(v, 1 + group[v]) = 1.0;
    }

    // Labels: majority group over far nodes reached along the planted path,
    // weighted by walk counts; ties break by a node-seeded draw.
    LabeledSplit split;
    split.labels.assign(n, -1);
    split.num_classes = spec.num_classes;
    split.target_type = target_type;
    const NodeType& tt = g.registry.node_types[target_type];
    for (std::size_t t = tt.offset; t < tt.offset + tt.count; ++t) {
        std::vector<double> frontier(n, 0.0);
        frontier[t] = 1.0;
        for (std::size_t hop : planted) {
            std::vector<double> next(n, 0.0);
            const CsrMatrix& a = g.adj[hop];
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = a.row_begin(i); p < a.row_end(i); ++p)
                    if (frontier[a.col_indices[p]] != 0.0)
                        next[i] += a.values[p] * frontier[a.col_indices[p]];
            frontier = std::move(next);
        }
        std::vector<double> mass(spec.num_classes, 0.0);
        for (std::size_t v = 0; v < n; ++v)
            if (frontier[v] != 0.0) mass[group[v]] += frontier[v];
        const double best = *std::max_element(mass.begin(), mass.end());
        std::vector<int> tied;
        for (int c = 0; c < spec.num_classes; ++c)
            if (mass[c] == best) tied.push_back(c);
        Rng tie_rng(spec.seed ^ (0x9e3779b97f4a7c15ULL * (t + 1)));
        split.labels[t] = tied[tie_rng.uniform_index(tied.size())];
    }

    // Splits over the target type, then label noise on train/val only.
    std::vector<std::size_t> order(tt.count);
    std::iota(order.begin(), order.end(), tt.offset);
    synth_detail::shuffle(order, rng);
    const std::size_t n_train = static_cast<std::size_t>(spec.train_fraction * tt.count);
    const std::size_t n_val = static_cast<std::size_t>(spec.val_fraction * tt.count);
    if (n_train == 0 || n_val == 0 || n_train + n_val >= tt.count)
        infeasible("split fractions leave an empty train/val/test set");
    split.train.assign(order.begin(), order.begin() + n_train);
    split.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    split.test.assign(order.begin() + n_train + n_val, order.end());

    if (spec.noise > 0.0) {
        for (std::size_t node : split.train)
            if (rng.bernoulli(spec.noise)) {
                const int shift = 1 + static_cast<int>(rng.uniform_index(spec.num_classes - 1));
                split.labels[node] = (split.labels[node] + shift) % spec.num_classes;
            }
    }

    SyntheticGroundTruth truth;
    truth.planted_path = spec.planted_path;
    truth.latent_groups = group;
    for (std::size_t h = planted.size(); h-- > 0;) {
        const EdgeType& pe = g.registry.edge_types[planted[h]];
        for (std::size_t k = 0; k < num_types; ++k) {
            const EdgeType& et = g.registry.edge_types[k];
            if (!is_planted(k) && et.src_type == pe.dst_type && et.dst_type == pe.src_type) {
                truth.reverse_path.push_back(et.name);
                break;
            }
        }
    }

    validate_graph(g);
    validate_split(g, split);
    return {std::move(g), std::move(split), std::move(truth)};
}

} // namespace gtn
