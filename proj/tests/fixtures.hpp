#pragma once

// Small deterministic heterogeneous graphs shared by the test suites.

#include <gtn/graph.hpp>
#include <gtn/rng.hpp>
#include <gtn/sparse.hpp>

#include <cstdint>
#include <tuple>
#include <vector>

namespace fixtures {

using gtn::CsrMatrix;
using gtn::DenseMatrix;
using gtn::HeteroGraph;
using gtn::LabeledSplit;

/// Three node types T/M/F of equal size with edge types TM (T->M), MT, FM.
/// Every source node gets at least one edge so degree normalization stays
/// smooth. Features are positive and seeded; labels live on type T.
inline std::pair<HeteroGraph, LabeledSplit> tri_type_graph(std::size_t per_type, std::uint64_t seed,
                                                           std::size_t feature_dim = 4,
                                                           int num_classes = 3) {
    gtn::Rng rng(seed);
    HeteroGraph g;
    g.registry.node_types = {{"T", per_type, 0}, {"M", per_type, 0}, {"F", per_type, 0}};
    g.registry.assign_offsets();
    g.registry.edge_types = {{"TM", 0, 1}, {"MT", 1, 0}, {"FM", 2, 1}};
    const std::size_t n = g.num_nodes();

    auto random_bipartite = [&](std::size_t src_type, std::size_t dst_type, double density) {
        const auto& st = g.registry.node_types[src_type];
        const auto& dt = g.registry.node_types[dst_type];
        std::vector<std::tuple<std::size_t, std::size_t, double>> trips;
        for (std::size_t s = 0; s < st.count; ++s) {
            bool any = false;
            for (std::size_t d = 0; d < dt.count; ++d)
                if (rng.bernoulli(density)) {
                    trips.emplace_back(dt.offset + d, st.offset + s, 1.0);
                    any = true;
                }
            if (!any) trips.emplace_back(dt.offset + rng.uniform_index(dt.count), st.offset + s, 1.0);
        }
        return gtn::csr_from_triplets(n, n, std::move(trips));
    };

    g.adj.push_back(random_bipartite(0, 1, 0.4));
    g.adj.push_back(random_bipartite(1, 0, 0.4));
    g.adj.push_back(random_bipartite(2, 1, 0.4));

    g.features = DenseMatrix(n, feature_dim);
    for (double& v : g.features.values) v = rng.uniform(0.05, 1.0);

    LabeledSplit split;
    split.labels.assign(n, -1);
    split.num_classes = num_classes;
    split.target_type = 0;
    for (std::size_t t = 0; t < per_type; ++t) split.labels[t] = static_cast<int>(t % num_classes);
    for (std::size_t t = 0; t < per_type; ++t) {
        if (t + 1 == per_type)
            split.val.push_back(t);
        else
            split.train.push_back(t);
    }
    return {g, split};
}

} // namespace fixtures
