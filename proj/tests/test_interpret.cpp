#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <gtn/interpret.hpp>
#include <gtn/model.hpp>
#include <gtn/rng.hpp>

#include "oracles.hpp"

#include <cmath>

using namespace gtn;

namespace {

TypeRegistry dblp_registry() {
    TypeRegistry reg;
    reg.node_types = {{"A", 10, 0}, {"P", 10, 0}, {"C", 10, 0}};
    reg.assign_offsets();
    reg.edge_types = {{"PA", 1, 0}, {"AP", 0, 1}, {"PC", 1, 2}, {"CP", 2, 1}};
    return reg;
}

const MetaPathDescriptor* find_path(const EnumerateResult& r, const std::string& node_string) {
    for (const auto& d : r.descriptors)
        if (d.node_type_string == node_string) return &d;
    return nullptr;
}

} // namespace

TEST_CASE("single edge type without identity yields exactly one meta-path") {
    TypeRegistry reg;
    reg.node_types = {{"A", 5, 0}};
    reg.assign_offsets();
    reg.edge_types = {{"AA", 0, 0}};
    const std::vector<std::vector<double>> alphas{{1.0}, {1.0}};
    const EnumerateResult r = enumerate_metapaths(alphas, reg, false);
    REQUIRE(r.descriptors.size() == 1);
    CHECK(r.descriptors[0].weight == doctest::Approx(1.0));
    CHECK(r.descriptors[0].node_type_string == "AAA");
    CHECK(r.raw_weight_total == doctest::Approx(1.0));
}

TEST_CASE("raw weights over all selections sum to one before filtering") {
    Rng rng(81);
    TypeRegistry reg = dblp_registry();
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t slots = 2 + rng.uniform_index(3);
        std::vector<std::vector<double>> alphas(slots);
        for (auto& alpha : alphas) {
            std::vector<double> logits(5);
            for (double& v : logits) v = rng.uniform(-2.0, 2.0);
            alpha = softmax_vec(logits);
        }
        const EnumerateResult r = enumerate_metapaths(alphas, reg, true);
        CHECK(std::abs(r.raw_weight_total - 1.0) <= 1e-9);
    }

    // two slots, K = 2 without identity: the four raw products sum to one
    TypeRegistry two;
    two.node_types = {{"X", 3, 0}, {"Y", 3, 0}};
    two.assign_offsets();
    two.edge_types = {{"XY", 0, 1}, {"YX", 1, 0}};
    const std::vector<std::vector<double>> alphas{{0.3, 0.7}, {0.6, 0.4}};
    const EnumerateResult r = enumerate_metapaths(alphas, two, false);
    CHECK(r.raw_weight_total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("identity elision pools weights and keeps endpoints") {
    TypeRegistry reg;
    reg.node_types = {{"T", 4, 0}, {"M", 4, 0}, {"F", 4, 0}};
    reg.assign_offsets();
    reg.edge_types = {{"MT", 1, 0}, {"FM", 2, 1}};
    // candidates: [identity, MT, FM]; three slots
    const std::vector<double> a0{0.10, 0.80, 0.10};
    const std::vector<double> a1{0.20, 0.10, 0.70};
    const std::vector<double> a2{0.60, 0.15, 0.25};
    const EnumerateResult r = enumerate_metapaths({a0, a1, a2}, reg, true);

    const MetaPathDescriptor* fmt = find_path(r, "FMT");
    REQUIRE(fmt != nullptr);
    // every identity placement of the effective (MT, FM) composition
    const double expected = 0.80 * 0.70 * 0.60   // (MT, FM, I)
                            + 0.80 * 0.20 * 0.25 // (MT, I, FM)
                            + 0.10 * 0.10 * 0.25; // (I, MT, FM)
    CHECK(fmt->weight == doctest::Approx(expected).epsilon(1e-12));
    CHECK(fmt->src_type == "F");
    CHECK(fmt->dst_type == "T");
    CHECK(fmt->edge_type_names == std::vector<std::string>{"MT", "FM"});

    const MetaPathDescriptor* identity = find_path(r, "(identity)");
    REQUIRE(identity != nullptr);
    CHECK(identity->weight == doctest::Approx(0.10 * 0.20 * 0.60).epsilon(1e-12));
    CHECK(std::abs(r.raw_weight_total - 1.0) <= 1e-12);
}

TEST_CASE("dblp-like attention ranks CPCPA first and APCPA among the top") {
    TypeRegistry reg = dblp_registry();
    // candidate order: [identity, PA, AP, PC, CP]
    const std::vector<std::vector<double>> alphas{{0.05, 0.60, 0.05, 0.05, 0.25},
                                                  {0.05, 0.05, 0.05, 0.10, 0.75},
                                                  {0.10, 0.05, 0.05, 0.70, 0.10},
                                                  {0.05, 0.05, 0.35, 0.05, 0.50}};
    const EnumerateResult r = enumerate_metapaths(alphas, reg, true);
    REQUIRE(!r.descriptors.empty());
    CHECK(r.descriptors[0].node_type_string == "CPCPA");
    CHECK(r.descriptors[0].weight == doctest::Approx(0.60 * 0.75 * 0.70 * 0.50).epsilon(1e-9));
    bool apcpa_in_top3 = false;
    for (std::size_t i = 0; i < 3 && i < r.descriptors.size(); ++i)
        apcpa_in_top3 = apcpa_in_top3 || r.descriptors[i].node_type_string == "APCPA";
    CHECK(apcpa_in_top3);

    // between authors: exactly APCPA, APA, APAPA in weight order
    const auto between = top_k_between(r.descriptors, "A", 3);
    REQUIRE(between.size() == 3);
    CHECK(between[0].node_type_string == "APCPA");
    CHECK(between[1].node_type_string == "APA");
    CHECK(between[2].node_type_string == "APAPA");

    // k exceeding the available paths returns everything, sorted
    const auto all_between = top_k_between(r.descriptors, "A", 50);
    CHECK(all_between.size() == 3);

    // a type with no closed meta-path yields an empty list
    TypeRegistry one;
    one.node_types = {{"T", 3, 0}, {"M", 3, 0}};
    one.assign_offsets();
    one.edge_types = {{"TM", 0, 1}};
    const EnumerateResult none = enumerate_metapaths({{0.5, 0.5}, {0.5, 0.5}}, one, true);
    CHECK(top_k_between(none.descriptors, "T", 3).empty());
}

TEST_CASE("reconstruction: pooled descriptors rebuild the layer output") {
    // K = 3 candidates (identity + 2 edge types), L = 2 layers
    HeteroGraph g;
    g.registry.node_types = {{"X", 4, 0}, {"Y", 4, 0}};
    g.registry.assign_offsets();
    g.registry.edge_types = {{"XY", 0, 1}, {"YX", 1, 0}};
    Rng edge_rng(91);
    std::vector<std::tuple<std::size_t, std::size_t, double>> xy, yx;
    for (std::size_t x = 0; x < 4; ++x) {
        xy.emplace_back(4 + edge_rng.uniform_index(4), x, 1.0);
        xy.emplace_back(4 + edge_rng.uniform_index(4), x, 1.0);
        yx.emplace_back(edge_rng.uniform_index(4), 4 + x, 1.0);
        yx.emplace_back(edge_rng.uniform_index(4), 4 + x, 1.0);
    }
    g.adj.push_back(csr_from_triplets(8, 8, xy));
    g.adj.push_back(csr_from_triplets(8, 8, yx));
    g.features = DenseMatrix(8, 3, 0.5);
    const HeteroGraph gi = with_identity(g);

    GtnConfig cfg;
    cfg.num_layers = 2;
    cfg.num_channels = 1;
    cfg.hidden_dim = 4;
    cfg.classifier_hidden = 4;
    GtnParams params = init_params(cfg, gi.num_candidates(), 3, 2, 17);
    Rng rng(18);
    for (auto& sel : params.selectors[0])
        for (double& v : sel.values) v = rng.uniform(-1.0, 1.0);
    const TapedForward fwd = gtn_forward(gi, params, cfg);
    const auto& alphas = fwd.output.alphas[0];

    const EnumerateResult r = enumerate_metapaths(alphas, gi.registry, true);

    // candidate matrices in enumeration's registry indexing
    std::vector<DenseMatrix> edge_dense;
    for (const CsrMatrix& a : g.adj) edge_dense.push_back(csr_to_dense(a));
    DenseMatrix eye(8, 8);
    for (std::size_t i = 0; i < 8; ++i) eye.at(i, i) = 1.0;

    DenseMatrix weighted(8, 8);
    for (const MetaPathDescriptor& d : r.descriptors) {
        DenseMatrix prod = eye;
        for (std::size_t e : d.edge_type_sequence) prod = oracle::matmul(prod, edge_dense[e]);
        for (std::size_t k = 0; k < prod.values.size(); ++k)
            weighted.values[k] += d.weight * prod.values[k];
    }

    // interleaved degree prefactor from the two-slot prefix expansion
    std::vector<DenseMatrix> cand = {eye, edge_dense[0], edge_dense[1]};
    DenseMatrix prefix(8, 8);
    for (std::size_t c0 = 0; c0 < 3; ++c0)
        for (std::size_t c1 = 0; c1 < 3; ++c1) {
            const DenseMatrix prod = oracle::matmul(cand[c0], cand[c1]);
            for (std::size_t k = 0; k < prod.values.size(); ++k)
                prefix.values[k] += alphas[0][c0] * alphas[1][c1] * prod.values[k];
        }
    const auto deg = oracle::row_sums(prefix);
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j)
            weighted.at(i, j) = deg[i] > 0.0 ? weighted.at(i, j) / deg[i] : 0.0;

    CHECK(oracle::max_abs_diff(fwd.output.metapath_adj[0], weighted) <= 1e-6);
}

TEST_CASE("combined ranking averages channels uniformly") {
    TypeRegistry reg;
    reg.node_types = {{"T", 4, 0}, {"M", 4, 0}};
    reg.assign_offsets();
    reg.edge_types = {{"TM", 0, 1}, {"MT", 1, 0}};
    // channel 0 committed to (MT), channel 1 committed to the identity
    const std::vector<std::vector<std::vector<double>>> per_channel{
        {{0.0, 0.0, 1.0}, {1.0, 0.0, 0.0}},
        {{1.0, 0.0, 0.0}, {1.0, 0.0, 0.0}}};
    const EnumerateResult combined = enumerate_combined(per_channel, reg, true);
    const MetaPathDescriptor* mt = find_path(combined, "MT");
    REQUIRE(mt != nullptr);
    CHECK(mt->weight == doctest::Approx(0.5));
    const MetaPathDescriptor* id = find_path(combined, "(identity)");
    REQUIRE(id != nullptr);
    CHECK(id->weight == doctest::Approx(0.5)); // only channel 1 selects it
}

TEST_CASE("attention report: constant selectors give uniform rows, C*(L+1) rows") {
    TypeRegistry reg = dblp_registry();
    GtnConfig cfg;
    cfg.num_layers = 3;
    cfg.num_channels = 2;
    cfg.hidden_dim = 4;
    cfg.classifier_hidden = 4;
    GtnParams params;
    params.selectors.assign(2, std::vector<DenseMatrix>(4, DenseMatrix(1, 5, 0.0)));
    const auto rows = attention_report(params, reg, true);
    CHECK(rows.size() == 2 * 4);
    for (const AttentionRow& row : rows) {
        CHECK(row.alpha.size() == 5);
        CHECK(row.alpha[0].first == "identity");
        CHECK(row.alpha[1].first == "PA");
        for (const auto& [name, a] : row.alpha) CHECK(a == doctest::Approx(0.2).epsilon(1e-12));
    }
}

TEST_CASE("large selection spaces fall back to beam search") {
    TypeRegistry reg;
    reg.node_types = {{"A", 3, 0}};
    reg.assign_offsets();
    for (int e = 0; e < 10; ++e) reg.edge_types.push_back({"e" + std::to_string(e), 0, 0});
    Rng rng(93);
    std::vector<std::vector<double>> alphas(7); // 10^7 raw selections
    for (auto& alpha : alphas) {
        std::vector<double> logits(10);
        for (double& v : logits) v = rng.uniform(-1.0, 1.0);
        alpha = softmax_vec(logits);
    }
    const EnumerateResult r = enumerate_metapaths(alphas, reg, false);
    CHECK_FALSE(r.exhaustive);
    CHECK(!r.descriptors.empty());
    CHECK(r.raw_weight_total <= 1.0 + 1e-9); // beam keeps a subset of the mass
    CHECK(r.descriptors[0].weight > 0.0);
}

TEST_CASE("alpha width must match the candidate count") {
    TypeRegistry reg = dblp_registry();
    CHECK_THROWS_AS(enumerate_metapaths({{0.5, 0.5}}, reg, true), std::invalid_argument);
    CHECK_THROWS_AS(enumerate_metapaths({}, reg, true), std::invalid_argument);
}

TEST_CASE("report_jsonl emits per-channel and combined records") {
    TypeRegistry reg;
    reg.node_types = {{"T", 4, 0}, {"M", 4, 0}};
    reg.assign_offsets();
    reg.edge_types = {{"TM", 0, 1}, {"MT", 1, 0}};
    const std::vector<std::vector<std::vector<double>>> per_channel{
        {{0.2, 0.3, 0.5}, {0.6, 0.2, 0.2}}};
    const EnumerateResult chan = enumerate_metapaths(per_channel[0], reg, true);
    const EnumerateResult combined = enumerate_combined(per_channel, reg, true);
    const std::string jsonl = report_jsonl({chan}, combined);

    std::istringstream in(jsonl);
    std::string line;
    std::size_t lines = 0, combined_lines = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        ++lines;
        CHECK(j.contains("channel"));
        CHECK(j.contains("sequence"));
        CHECK(j.contains("path_string"));
        CHECK(j.contains("weight"));
        if (j.at("channel") == "combined") ++combined_lines;
    }
    CHECK(lines == chan.descriptors.size() + combined.descriptors.size());
    CHECK(combined_lines == combined.descriptors.size());
}

TEST_CASE("L=3 with identity covers length-4 meta-paths like APCPA") {
    TypeRegistry reg = dblp_registry();
    // four selector slots (three GT layers) with mild attention everywhere
    std::vector<std::vector<double>> alphas(4, std::vector<double>(5, 0.2));
    const EnumerateResult r = enumerate_metapaths(alphas, reg, true);
    CHECK(find_path(r, "APCPA") != nullptr); // length 4
    CHECK(find_path(r, "APA") != nullptr);   // shorter paths via identity
    CHECK(find_path(r, "CP") != nullptr);
}
