#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <gtn/checkpoint.hpp>
#include <gtn/model.hpp>
#include <gtn/rng.hpp>

#include "fixtures.hpp"
#include "oracles.hpp"

#include <cmath>
#include <filesystem>

using namespace gtn;

namespace {

std::vector<double> onehot(std::size_t k, std::size_t size) {
    std::vector<double> v(size, 0.0);
    v[k] = 1.0;
    return v;
}

DenseMatrix dense_relu(const DenseMatrix& x) {
    DenseMatrix y = x;
    for (double& v : y.values) v = v > 0.0 ? v : 0.0;
    return y;
}

std::vector<double> dense_softmax_row(std::span<const double> row) {
    double m = row[0];
    for (double v : row) m = std::max(m, v);
    double total = 0.0;
    std::vector<double> out(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) {
        out[j] = std::exp(row[j] - m);
        total += out[j];
    }
    for (double& v : out) v /= total;
    return out;
}

/// Fully dense, independently coded reference of the GTN forward pass
/// (consumption-mode normalization).
DenseMatrix reference_forward(const HeteroGraph& g, const GtnParams& p, const GtnConfig& cfg) {
    const std::size_t n = g.num_nodes();
    std::vector<DenseMatrix> cand;
    for (const CsrMatrix& a : g.adj) cand.push_back(csr_to_dense(a));

    std::vector<DenseMatrix> channel_h;
    for (std::size_t c = 0; c < cfg.num_channels; ++c) {
        std::vector<std::vector<double>> alphas;
        for (const DenseMatrix& sel : p.selectors[c]) alphas.push_back(dense_softmax_row(sel.values));
        auto mix = [&](const std::vector<double>& alpha) {
            DenseMatrix q(n, n);
            for (std::size_t k = 0; k < cand.size(); ++k)
                for (std::size_t e = 0; e < q.values.size(); ++e)
                    q.values[e] += alpha[k] * cand[k].values[e];
            return q;
        };
        DenseMatrix chain = oracle::matmul(mix(alphas[0]), mix(alphas[1]));
        for (std::size_t s = 2; s < alphas.size(); ++s)
            chain = oracle::matmul(oracle::row_normalize(chain), mix(alphas[s]));
        DenseMatrix tilde = chain;
        for (std::size_t i = 0; i < n; ++i) tilde.at(i, i) += 1.0;
        const DenseMatrix h =
            dense_relu(oracle::matmul(oracle::matmul(oracle::row_normalize(tilde), g.features), p.gcn_weight));
        channel_h.push_back(h);
    }
    DenseMatrix z(n, cfg.num_channels * cfg.hidden_dim);
    for (std::size_t c = 0; c < channel_h.size(); ++c)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < cfg.hidden_dim; ++j)
                z.at(i, c * cfg.hidden_dim + j) = channel_h[c].at(i, j);

    DenseMatrix hidden = oracle::matmul(z, p.dense1_w);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < hidden.n_cols; ++j) hidden.at(i, j) += p.dense1_b.at(0, j);
    hidden = dense_relu(hidden);
    DenseMatrix logits = oracle::matmul(hidden, p.dense2_w);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < logits.n_cols; ++j) logits.at(i, j) += p.dense2_b.at(0, j);
    return logits;
}

} // namespace

TEST_CASE("gt_layer_first: one-hot identity selectors give the identity") {
    auto [g0, split] = fixtures::tri_type_graph(3, 50);
    const HeteroGraph g = with_identity(g0);
    const auto e0 = onehot(0, g.num_candidates());
    const CsrMatrix out = gt_layer_first_alpha(g, e0, e0);
    const CsrMatrix i9 = csr_identity(g.num_nodes());
    CHECK(out.col_indices == i9.col_indices);
    CHECK(out.values == i9.values);
}

TEST_CASE("gt_layer_first: one-hot pair equals brute-force 2-hop path counts") {
    auto [g0, split] = fixtures::tri_type_graph(2, 51); // 6 nodes
    const HeteroGraph g = with_identity(g0);
    const std::size_t n = g.num_nodes();
    for (std::size_t s0 = 0; s0 < g.num_candidates(); ++s0)
        for (std::size_t s1 = 0; s1 < g.num_candidates(); ++s1) {
            const CsrMatrix out =
                gt_layer_first_alpha(g, onehot(s0, g.num_candidates()), onehot(s1, g.num_candidates()));
            const DenseMatrix expected = oracle::count_walks(g.adj, {s0, s1}, n);
            CHECK(oracle::max_abs_diff(out, expected) <= 1e-12);
        }
}

TEST_CASE("gt_layer_first: uniform selectors over K=2 give quarter of the squared sum") {
    HeteroGraph g;
    g.registry.node_types = {{"X", 3, 0}, {"Y", 3, 0}};
    g.registry.assign_offsets();
    g.registry.edge_types = {{"XY", 0, 1}, {"YX", 1, 0}};
    g.adj.push_back(csr_from_triplets(6, 6, {{3, 0, 1.0}, {4, 0, 1.0}, {5, 1, 1.0}, {3, 2, 1.0}}));
    g.adj.push_back(csr_from_triplets(6, 6, {{0, 3, 1.0}, {1, 4, 1.0}, {2, 4, 1.0}, {1, 5, 1.0}}));
    g.features = DenseMatrix(6, 2, 1.0);

    const std::vector<double> uniform{0.5, 0.5};
    const CsrMatrix out = gt_layer_first_alpha(g, uniform, uniform);

    DenseMatrix sum(6, 6);
    for (const CsrMatrix& a : g.adj) {
        const DenseMatrix d = csr_to_dense(a);
        for (std::size_t k = 0; k < 36; ++k) sum.values[k] += d.values[k];
    }
    DenseMatrix expected = oracle::matmul(sum, sum);
    for (double& v : expected.values) v *= 0.25;
    CHECK(oracle::max_abs_diff(out, expected) <= 1e-12);

    // logits route: equal logits produce exactly uniform attention
    const std::vector<double> logits{0.7, 0.7};
    const CsrMatrix via_logits = gt_layer_first(g, logits, logits);
    CHECK(oracle::max_abs_diff(via_logits, expected) <= 1e-12);
}

TEST_CASE("gt_layer_next: identity selection only renormalizes") {
    auto [g0, split] = fixtures::tri_type_graph(3, 52);
    const HeteroGraph g = with_identity(g0);
    const CsrMatrix prev = gt_layer_first_alpha(g, onehot(1, 4), onehot(2, 4));
    const CsrMatrix out = gt_layer_next_alpha(prev, g, onehot(0, 4));
    const CsrMatrix expected = row_normalize(prev);
    CHECK(out.col_indices == expected.col_indices);
    CHECK(oracle::max_abs_diff(out, csr_to_dense(expected)) <= 1e-15);
}

TEST_CASE("two one-hot layers equal brute-force normalized 3-hop path counts") {
    auto [g0, split] = fixtures::tri_type_graph(2, 53);
    const HeteroGraph g = with_identity(g0);
    const std::size_t k = g.num_candidates();
    for (std::size_t s0 = 0; s0 < k; ++s0)
        for (std::size_t s1 = 0; s1 < k; ++s1)
            for (std::size_t s2 = 0; s2 < k; ++s2) {
                const CsrMatrix first = gt_layer_first_alpha(g, onehot(s0, k), onehot(s1, k));
                const CsrMatrix second = gt_layer_next_alpha(first, g, onehot(s2, k));
                const DenseMatrix expected =
                    oracle::normalized_walk_counts(g.adj, {s0, s1, s2}, g.num_nodes());
                CHECK(oracle::max_abs_diff(second, expected) <= 1e-9);
            }
}

TEST_CASE("expansion identity: arbitrary alphas equal the exhaustive weighted sum") {
    auto [g0, split] = fixtures::tri_type_graph(3, 54);
    const std::size_t n = g0.num_nodes();
    const std::size_t k = 3; // K = 3, no identity candidate
    GtnConfig cfg;
    cfg.num_layers = 2;
    cfg.num_channels = 1;
    cfg.hidden_dim = 4;
    cfg.classifier_hidden = 4;
    cfg.include_identity = false;
    GtnParams params = init_params(cfg, k, g0.features.n_cols, split.num_classes, 99);
    Rng rng(123);
    for (auto& sel : params.selectors[0])
        for (double& v : sel.values) v = rng.uniform(-1.5, 1.5);

    TapedForward fwd = gtn_forward(g0, params, cfg);
    const auto& alphas = fwd.output.alphas[0];

    std::vector<DenseMatrix> cand;
    for (const CsrMatrix& a : g0.adj) cand.push_back(csr_to_dense(a));

    // prefix sum over (t0, t1) fixes the interleaved degree matrix
    DenseMatrix prefix(n, n);
    for (std::size_t t0 = 0; t0 < k; ++t0)
        for (std::size_t t1 = 0; t1 < k; ++t1) {
            const DenseMatrix prod = oracle::matmul(cand[t0], cand[t1]);
            const double w = alphas[0][t0] * alphas[1][t1];
            for (std::size_t e = 0; e < prod.values.size(); ++e)
                prefix.values[e] += w * prod.values[e];
        }
    const auto deg = oracle::row_sums(prefix);

    DenseMatrix expansion(n, n);
    double weight_total = 0.0;
    for (std::size_t t0 = 0; t0 < k; ++t0)
        for (std::size_t t1 = 0; t1 < k; ++t1)
            for (std::size_t t2 = 0; t2 < k; ++t2) {
                const double w = alphas[0][t0] * alphas[1][t1] * alphas[2][t2];
                weight_total += w;
                const DenseMatrix prod = oracle::matmul(oracle::matmul(cand[t0], cand[t1]), cand[t2]);
                for (std::size_t e = 0; e < prod.values.size(); ++e)
                    expansion.values[e] += w * prod.values[e];
            }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            expansion.at(i, j) = deg[i] > 0.0 ? expansion.at(i, j) / deg[i] : 0.0;

    CHECK(weight_total == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(oracle::max_abs_diff(fwd.output.metapath_adj[0], expansion) <= 1e-8);
}

TEST_CASE("identity trick: one-hot identity at layers >= 2 preserves the first layer") {
    auto [g0, split] = fixtures::tri_type_graph(3, 55);
    const HeteroGraph g = with_identity(g0);
    Rng rng(7);
    std::vector<double> a0(4), a1(4);
    for (double& v : a0) v = rng.uniform(0.1, 1.0);
    for (double& v : a1) v = rng.uniform(0.1, 1.0);
    double s0 = 0, s1 = 0;
    for (double v : a0) s0 += v;
    for (double v : a1) s1 += v;
    for (double& v : a0) v /= s0;
    for (double& v : a1) v /= s1;

    const CsrMatrix first = gt_layer_first_alpha(g, a0, a1);
    CsrMatrix chain = first;
    for (int l = 0; l < 2; ++l) chain = gt_layer_next_alpha(chain, g, onehot(0, 4));
    CHECK(oracle::max_abs_diff(chain, csr_to_dense(row_normalize(first))) <= 1e-12);
}

TEST_CASE("normalize_at=output scales every layer product immediately") {
    auto [g0, split] = fixtures::tri_type_graph(3, 56);
    const HeteroGraph g = with_identity(g0);
    GtnConfig cfg;
    cfg.num_layers = 2;
    cfg.num_channels = 1;
    cfg.hidden_dim = 4;
    cfg.classifier_hidden = 4;
    cfg.normalize_at = NormalizeAt::output;
    GtnParams params = init_params(cfg, g.num_candidates(), g.features.n_cols, split.num_classes, 42);
    Rng rng(43);
    for (auto& sel : params.selectors[0])
        for (double& v : sel.values) v = rng.uniform(-1.0, 1.0);

    const TapedForward fwd = gtn_forward(g, params, cfg);
    const auto& alphas = fwd.output.alphas[0];
    const CsrMatrix layer1 = row_normalize(gt_layer_first_alpha(g, alphas[0], alphas[1]));
    const CsrMatrix layer2 = row_normalize(spmm_ss(layer1, convex_combine(g.adj, alphas[2])));
    CHECK(oracle::max_abs_diff(fwd.output.metapath_adj[0], csr_to_dense(layer2)) <= 1e-12);

    // stored outputs have unit row sums in this mode
    const auto deg = row_degrees(fwd.output.metapath_adj[0]);
    for (double d : deg.values)
        if (d != 0.0) CHECK(d == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gcn_channel limits and dense oracle") {
    Rng rng(56);
    const std::size_t n = 5;
    const DenseMatrix x = oracle::random_dense(rng, n, 3, 0.0, 1.0);
    const CsrMatrix zero(n, n);

    // zero adjacency: tilde(A) = I, so the output is relu(X W)
    const DenseMatrix w = oracle::random_dense(rng, 3, 4);
    CHECK(oracle::max_abs_diff(gcn_channel(zero, x, w), dense_relu(oracle::matmul(x, w))) <= 1e-12);

    // identity weight on nonnegative features passes them through
    DenseMatrix eye(3, 3);
    for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    CHECK(oracle::max_abs_diff(gcn_channel(zero, x, eye), x) <= 1e-12);

    const CsrMatrix a = oracle::random_csr(rng, n, n, 0.4);
    DenseMatrix tilde = csr_to_dense(a);
    for (std::size_t i = 0; i < n; ++i) tilde.at(i, i) += 1.0;
    const DenseMatrix expected =
        dense_relu(oracle::matmul(oracle::matmul(oracle::row_normalize(tilde), x), w));
    CHECK(oracle::max_abs_diff(gcn_channel(a, x, w), expected) <= 1e-12);
}

TEST_CASE("gtn_forward shape law") {
    auto [g0, split] = fixtures::tri_type_graph(4, 57);
    const HeteroGraph g = with_identity(g0);
    GtnConfig cfg;
    cfg.num_layers = 2;
    cfg.num_channels = 2;
    cfg.hidden_dim = 64;
    cfg.classifier_hidden = 64;
    GtnParams params = init_params(cfg, g.num_candidates(), g.features.n_cols, split.num_classes, 1);
    const TapedForward fwd = gtn_forward(g, params, cfg);
    CHECK(fwd.output.embeddings.n_rows == g.num_nodes());
    CHECK(fwd.output.embeddings.n_cols == 2 * 64);
    CHECK(fwd.output.logits.n_rows == g.num_nodes());
    CHECK(fwd.output.logits.n_cols == static_cast<std::size_t>(split.num_classes));
    CHECK(fwd.output.metapath_adj.size() == 2);
    for (const auto& chan : fwd.output.alphas)
        for (const auto& alpha : chan) {
            double s = 0.0;
            for (double v : alpha) s += v;
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
}

TEST_CASE("gtn_forward matches the independent dense reference") {
    auto [g0, split] = fixtures::tri_type_graph(4, 58); // 12 nodes
    const HeteroGraph g = with_identity(g0);
    GtnConfig cfg;
    cfg.num_layers = 2;
    cfg.num_channels = 2;
    cfg.hidden_dim = 8;
    cfg.classifier_hidden = 8;
    GtnParams params = init_params(cfg, g.num_candidates(), g.features.n_cols, split.num_classes, 21);
    Rng rng(22);
    for (auto& chan : params.selectors)
        for (auto& sel : chan)
            for (double& v : sel.values) v = rng.uniform(-1.0, 1.0);

    const TapedForward fwd = gtn_forward(g, params, cfg);
    const DenseMatrix expected = reference_forward(g, params, cfg);
    CHECK(oracle::max_abs_diff(expected, fwd.output.logits) <= 1e-10);
}

TEST_CASE("channel permutation only permutes embedding blocks") {
    auto [g0, split] = fixtures::tri_type_graph(4, 59);
    const HeteroGraph g = with_identity(g0);
    GtnConfig cfg;
    cfg.num_layers = 2;
    cfg.num_channels = 2;
    cfg.hidden_dim = 6;
    cfg.classifier_hidden = 5;
    GtnParams params = init_params(cfg, g.num_candidates(), g.features.n_cols, split.num_classes, 31);
    Rng rng(32);
    for (auto& chan : params.selectors)
        for (auto& sel : chan)
            for (double& v : sel.values) v = rng.uniform(-1.0, 1.0);

    GtnParams swapped = params;
    std::swap(swapped.selectors[0], swapped.selectors[1]);
    const std::size_t d = cfg.hidden_dim;
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t col = 0; col < cfg.classifier_hidden; ++col)
            std::swap(swapped.dense1_w.at(r, col), swapped.dense1_w.at(d + r, col));

    const TapedForward a = gtn_forward(g, params, cfg);
    const TapedForward b = gtn_forward(g, swapped, cfg);
    CHECK(oracle::max_abs_diff(a.output.logits, b.output.logits) <= 1e-12);
    for (std::size_t i = 0; i < a.output.embeddings.n_rows; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            CHECK(a.output.embeddings.at(i, j) == b.output.embeddings.at(i, d + j));
            CHECK(a.output.embeddings.at(i, d + j) == b.output.embeddings.at(i, j));
        }
}

TEST_CASE("loss values") {
    auto [g0, split] = fixtures::tri_type_graph(4, 60);

    ForwardOutput out;
    out.logits = DenseMatrix(g0.num_nodes(), split.num_classes, 0.37);
    CHECK(loss(out, split) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

    // huge-margin correct logits drive the loss to zero
    for (std::size_t node : split.train) out.logits.at(node, split.labels[node]) = 60.0;
    CHECK(loss(out, split) <= 1e-20);

    // 5-sample hand case against the direct formula
    DenseMatrix z(5, 3);
    z.values = {2.0, 0.0, -1.0, 0.5, 0.5, 0.5, -2.0, 1.0, 0.0, 3.0, 2.0, 1.0, 0.0, 0.0, 4.0};
    const std::vector<std::size_t> nodes{0, 1, 2, 3, 4};
    const std::vector<int> labels{0, 1, 2, 0, 2};
    double expected = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
        double denom = 0.0;
        for (std::size_t c = 0; c < 3; ++c) denom += std::exp(z.at(i, c));
        expected += -std::log(std::exp(z.at(i, labels[i])) / denom);
    }
    expected /= 5.0;
    CHECK(cross_entropy_loss(z, nodes, labels) == doctest::Approx(expected).epsilon(1e-12));

    LabeledSplit empty = split;
    empty.train.clear();
    CHECK_THROWS_AS(loss(out, empty), std::invalid_argument);
}

TEST_CASE("checkpoint round-trip reproduces logits bit for bit") {
    auto [g0, split] = fixtures::tri_type_graph(4, 61);
    const HeteroGraph g = with_identity(g0);
    Checkpoint ckpt;
    ckpt.config.num_layers = 2;
    ckpt.config.num_channels = 2;
    ckpt.config.hidden_dim = 7;
    ckpt.config.classifier_hidden = 5;
    ckpt.seed = 1234;
    ckpt.num_candidates = g.num_candidates();
    ckpt.feature_dim = g.features.n_cols;
    ckpt.num_classes = split.num_classes;
    ckpt.params = init_params(ckpt.config, ckpt.num_candidates, ckpt.feature_dim, ckpt.num_classes, 1234);
    Rng rng(62);
    for (double& v : ckpt.params.gcn_weight.values) v = rng.uniform(-1.0, 1.0) * 0.3141592653589793;

    const auto path = std::filesystem::temp_directory_path() / "gtn_model_ckpt.json";
    save_checkpoint(path, ckpt);
    const Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.config.num_layers == 2);
    CHECK(loaded.seed == 1234);

    const DenseMatrix a = gtn_forward(g, ckpt.params, ckpt.config).output.logits;
    const DenseMatrix b = gtn_forward(g, loaded.params, loaded.config).output.logits;
    CHECK(a.values == b.values); // bit-identical

    check_compatible(loaded, g, split.num_classes);
    CHECK_THROWS_WITH_AS(check_compatible(loaded, g, split.num_classes + 1),
                         doctest::Contains("classes"), std::runtime_error);
    HeteroGraph shrunk = g;
    shrunk.features = DenseMatrix(g.num_nodes(), 2);
    CHECK_THROWS_WITH_AS(check_compatible(loaded, shrunk, split.num_classes),
                         doctest::Contains("feature dim"), std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("gtn_forward validates its inputs") {
    auto [g0, split] = fixtures::tri_type_graph(3, 63);
    GtnConfig cfg;
    cfg.num_layers = 1;
    cfg.num_channels = 1;
    cfg.hidden_dim = 4;
    cfg.include_identity = true; // graph lacks the identity candidate
    GtnParams params = init_params(cfg, g0.num_candidates() + 1, g0.features.n_cols, 3, 5);
    CHECK_THROWS_AS(gtn_forward(g0, params, cfg), std::invalid_argument);

    const HeteroGraph g = with_identity(g0);
    GtnParams bad = init_params(cfg, g.num_candidates() - 1, g.features.n_cols, 3, 5);
    CHECK_THROWS_AS(gtn_forward(g, bad, cfg), std::invalid_argument);
}
