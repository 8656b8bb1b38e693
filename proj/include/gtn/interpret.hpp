#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "graph.hpp"
#include "model.hpp"

namespace gtn {

// Expands trained selector attention into ranked meta-paths. A raw selection
// assigns one candidate per selector slot in composition order (t_0 ... t_L,
// the order the adjacency factors are multiplied); its weight is the product
// of the attention values. Identity picks are elided, so raw selections that
// reduce to the same effective meta-path pool their weights. The walk reads
// the composition order in reverse: the node-type string starts at the walk
// source and ends at the aggregating (row) type.

struct MetaPathDescriptor {
    std::vector<std::size_t> edge_type_sequence; // registry indices, composition order, identity elided
    std::vector<std::string> edge_type_names;    // same order
    std::string node_type_string;                // walk order; "(identity)" for the empty path
    double weight = 0.0;
    std::string src_type; // walk start ("*" for the identity path)
    std::string dst_type; // walk end / aggregating type
};

struct EnumerateResult {
    std::vector<MetaPathDescriptor> descriptors; // weight descending, ties by node string
    double raw_weight_total = 0.0;               // sum over all raw selections before filtering
    bool exhaustive = true;                      // false once beam search kicks in
};

struct AttentionRow {
    std::size_t channel = 0;
    std::size_t slot = 0;
    std::vector<std::pair<std::string, double>> alpha; // (candidate name, attention)
};

namespace interpret_detail {

constexpr std::size_t beam_width = 10000;
constexpr double exhaustive_limit = 1e6;

inline bool chains(const TypeRegistry& reg, std::size_t left, std::size_t right) {
    // factor order A_left * A_right: the inner dimension pairs left's source
    // columns with right's destination rows.
    return reg.edge_types[left].src_type == reg.edge_types[right].dst_type;
}

inline std::string join_types(const TypeRegistry& reg, const std::vector<std::size_t>& type_chain) {
    bool single = true;
    for (std::size_t t : type_chain) single = single && reg.node_types[t].name.size() == 1;
    std::string out;
    for (std::size_t i = 0; i < type_chain.size(); ++i) {
        if (!single && i) out += '-';
        out += reg.node_types[type_chain[i]].name;
    }
    return out;
}

inline MetaPathDescriptor describe(const TypeRegistry& reg, const std::vector<std::size_t>& effective,
                                   double weight) {
    MetaPathDescriptor d;
    d.edge_type_sequence = effective;
    d.weight = weight;
    for (std::size_t e : effective) d.edge_type_names.push_back(reg.edge_types[e].name);
    if (effective.empty()) {
        d.node_type_string = "(identity)";
        d.src_type = "*";
        d.dst_type = "*";
        return d;
    }
    std::vector<std::size_t> chain;
    for (std::size_t i = effective.size(); i-- > 0;) chain.push_back(reg.edge_types[effective[i]].src_type);
    chain.push_back(reg.edge_types[effective.front()].dst_type);
    d.node_type_string = join_types(reg, chain);
    d.src_type = reg.node_types[reg.edge_types[effective.back()].src_type].name;
    d.dst_type = reg.node_types[reg.edge_types[effective.front()].dst_type].name;
    return d;
}

// Raw selections travel as mixed-radix codes (slot s holds digit code / K^s
// mod K) so the frontier stays flat in memory near the exhaustive limit.
struct RawSelection {
    std::uint64_t code = 0;
    double weight = 1.0;
};

} // namespace interpret_detail

/// Expands one channel's attention vectors (alphas[slot][candidate]) into
/// ranked effective meta-paths with weight >= min_weight after pooling.
/// Exhaustive up to 10^6 raw selections, then beam search with a bounded
/// frontier (flagged in the result).
inline EnumerateResult enumerate_metapaths(const std::vector<std::vector<double>>& alphas,
                                           const TypeRegistry& registry, bool includes_identity,
                                           double min_weight = 0.0) {
    using namespace interpret_detail;
    detail::require(!alphas.empty(), "enumerate_metapaths: no selector slots");
    const std::size_t k = registry.edge_types.size() + (includes_identity ? 1 : 0);
    for (const auto& alpha : alphas)
        detail::require(alpha.size() == k, "enumerate_metapaths: alpha width != candidate count");
    detail::require(min_weight >= 0.0 && min_weight <= 1.0,
                    "enumerate_metapaths: min_weight outside [0,1]");

    const std::size_t slots = alphas.size();
    detail::require(static_cast<double>(slots) * std::log2(static_cast<double>(k)) < 63.0,
                    "enumerate_metapaths: selection space exceeds the encodable range");
    EnumerateResult result;
    result.exhaustive = std::pow(static_cast<double>(k), static_cast<double>(slots)) <= exhaustive_limit;

    std::vector<RawSelection> frontier{{0, 1.0}};
    std::uint64_t radix = 1;
    for (std::size_t s = 0; s < slots; ++s) {
        std::vector<RawSelection> next;
        next.reserve(frontier.size() * k);
        for (const RawSelection& sel : frontier)
            for (std::size_t c = 0; c < k; ++c)
                next.push_back({sel.code + radix * c, sel.weight * alphas[s][c]});
        if (!result.exhaustive && next.size() > beam_width) {
            std::partial_sort(next.begin(), next.begin() + beam_width, next.end(),
                              [](const RawSelection& a, const RawSelection& b) { return a.weight > b.weight; });
            next.resize(beam_width);
        }
        frontier = std::move(next);
        radix *= k;
    }

    std::map<std::vector<std::size_t>, double> pooled;
    for (const RawSelection& sel : frontier) {
        result.raw_weight_total += sel.weight;
        std::vector<std::size_t> effective;
        bool consistent = true;
        std::uint64_t rem = sel.code;
        for (std::size_t s = 0; s < slots; ++s, rem /= k) {
            const std::size_t c = static_cast<std::size_t>(rem % k);
            if (includes_identity && c == 0) continue; // identity elided
            const std::size_t e = includes_identity ? c - 1 : c;
            if (!effective.empty() && !chains(registry, effective.back(), e)) {
                consistent = false;
                break;
            }
            effective.push_back(e);
        }
        if (consistent) pooled[effective] += sel.weight;
    }

    for (const auto& [effective, weight] : pooled) {
        if (weight < min_weight || weight == 0.0) continue;
        result.descriptors.push_back(describe(registry, effective, weight));
    }
    std::sort(result.descriptors.begin(), result.descriptors.end(),
              [](const MetaPathDescriptor& a, const MetaPathDescriptor& b) {
                  if (a.weight != b.weight) return a.weight > b.weight;
                  if (a.node_type_string != b.node_type_string)
                      return a.node_type_string < b.node_type_string;
                  return a.edge_type_names < b.edge_type_names;
              });
    return result;
}

/// Channel rankings averaged with uniform channel weights into one combined
/// ranking. alphas_per_channel is ForwardOutput::alphas.
inline EnumerateResult
enumerate_combined(const std::vector<std::vector<std::vector<double>>>& alphas_per_channel,
                   const TypeRegistry& registry, bool includes_identity, double min_weight = 0.0) {
    detail::require(!alphas_per_channel.empty(), "enumerate_combined: no channels");
    std::map<std::vector<std::size_t>, double> pooled;
    EnumerateResult combined;
    combined.raw_weight_total = 0.0;
    for (const auto& alphas : alphas_per_channel) {
        EnumerateResult chan = enumerate_metapaths(alphas, registry, includes_identity, 0.0);
        combined.exhaustive = combined.exhaustive && chan.exhaustive;
        combined.raw_weight_total += chan.raw_weight_total / alphas_per_channel.size();
        for (const MetaPathDescriptor& d : chan.descriptors)
            pooled[d.edge_type_sequence] += d.weight / alphas_per_channel.size();
    }
    for (const auto& [effective, weight] : pooled) {
        if (weight < min_weight || weight == 0.0) continue;
        combined.descriptors.push_back(interpret_detail::describe(registry, effective, weight));
    }
    std::sort(combined.descriptors.begin(), combined.descriptors.end(),
              [](const MetaPathDescriptor& a, const MetaPathDescriptor& b) {
                  if (a.weight != b.weight) return a.weight > b.weight;
                  if (a.node_type_string != b.node_type_string)
                      return a.node_type_string < b.node_type_string;
                  return a.edge_type_names < b.edge_type_names;
              });
    return combined;
}

/// Highest-weight meta-paths whose walk starts and ends at `target_type`.
/// The identity path is excluded; fewer than k results is fine.
inline std::vector<MetaPathDescriptor> top_k_between(const std::vector<MetaPathDescriptor>& descriptors,
                                                     const std::string& target_type, std::size_t k) {
    detail::require(k >= 1, "top_k_between: k must be >= 1");
    std::vector<MetaPathDescriptor> out;
    for (const MetaPathDescriptor& d : descriptors) {
        if (d.edge_type_sequence.empty()) continue;
        if (d.src_type == target_type && d.dst_type == target_type) out.push_back(d);
        if (out.size() == k) break;
    }
    return out;
}

/// Per-layer, per-channel attention over named candidates; C*(L+1) rows.
inline std::vector<AttentionRow> attention_report(const GtnParams& params, const TypeRegistry& registry,
                                                  bool includes_identity) {
    std::vector<AttentionRow> rows;
    for (std::size_t c = 0; c < params.selectors.size(); ++c)
        for (std::size_t s = 0; s < params.selectors[c].size(); ++s) {
            const auto alpha = softmax_vec(params.selectors[c][s].values);
            AttentionRow row;
            row.channel = c;
            row.slot = s;
            for (std::size_t i = 0; i < alpha.size(); ++i) {
                std::string name;
                if (includes_identity)
                    name = i == 0 ? "identity" : registry.edge_types[i - 1].name;
                else
                    name = registry.edge_types[i].name;
                row.alpha.emplace_back(std::move(name), alpha[i]);
            }
            rows.push_back(std::move(row));
        }
    return rows;
}

/// One JSON record per descriptor: {channel, sequence, path_string, weight}.
inline std::string report_jsonl(const std::vector<EnumerateResult>& per_channel,
                                const EnumerateResult& combined) {
    std::string out;
    auto emit = [&out](const std::string& channel, const EnumerateResult& r) {
        for (const MetaPathDescriptor& d : r.descriptors) {
            nlohmann::json j{{"channel", channel},
                             {"sequence", d.edge_type_names},
                             {"path_string", d.node_type_string},
                             {"weight", d.weight}};
            out += j.dump();
            out += '\n';
        }
    };
    for (std::size_t c = 0; c < per_channel.size(); ++c) emit(std::to_string(c), per_channel[c]);
    emit("combined", combined);
    return out;
}

} // namespace gtn
