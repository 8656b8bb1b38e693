#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "model.hpp"

namespace gtn {

/// Everything needed to rebuild a trained model: config, dimensions, seed,
/// and all parameter tensors. JSON on disk; doubles round-trip exactly, so
/// save -> load -> forward reproduces logits bit for bit.
struct Checkpoint {
    GtnConfig config;
    GtnParams params;
    std::uint64_t seed = 0;
    std::size_t num_candidates = 0;
    std::size_t feature_dim = 0;
    int num_classes = 0;
};

namespace ckpt_detail {

inline nlohmann::json dump_tensor(const DenseMatrix& m) {
    return {{"rows", m.n_rows}, {"cols", m.n_cols}, {"values", m.values}};
}

inline DenseMatrix parse_tensor(const nlohmann::json& j) {
    DenseMatrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    m.values = j.at("values").get<std::vector<double>>();
    if (m.values.size() != m.n_rows * m.n_cols)
        throw std::runtime_error("checkpoint: tensor value count does not match its shape");
    return m;
}

} // namespace ckpt_detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    nlohmann::json j;
    j["format"] = "gtn-checkpoint-v1";
    j["seed"] = ckpt.seed;
    j["num_candidates"] = ckpt.num_candidates;
    j["feature_dim"] = ckpt.feature_dim;
    j["num_classes"] = ckpt.num_classes;
    j["config"] = {{"num_layers", ckpt.config.num_layers},
                   {"num_channels", ckpt.config.num_channels},
                   {"hidden_dim", ckpt.config.hidden_dim},
                   {"classifier_hidden", ckpt.config.classifier_hidden},
                   {"include_identity", ckpt.config.include_identity},
                   {"normalize_at",
                    ckpt.config.normalize_at == NormalizeAt::consumption ? "consumption" : "output"},
                   {"detach_degrees", ckpt.config.detach_degrees}};
    nlohmann::json selectors = nlohmann::json::array();
    for (const auto& chan : ckpt.params.selectors) {
        nlohmann::json row = nlohmann::json::array();
        for (const auto& s : chan) row.push_back(s.values);
        selectors.push_back(row);
    }
    j["params"] = {{"selectors", selectors},
                   {"gcn_weight", ckpt_detail::dump_tensor(ckpt.params.gcn_weight)},
                   {"dense1_w", ckpt_detail::dump_tensor(ckpt.params.dense1_w)},
                   {"dense1_b", ckpt_detail::dump_tensor(ckpt.params.dense1_b)},
                   {"dense2_w", ckpt_detail::dump_tensor(ckpt.params.dense2_w)},
                   {"dense2_b", ckpt_detail::dump_tensor(ckpt.params.dense2_b)}};

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out << j.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    nlohmann::json j;
    in >> j;
    if (j.value("format", "") != "gtn-checkpoint-v1")
        throw std::runtime_error("checkpoint: unrecognized format in " + path.string());

    Checkpoint ckpt;
    ckpt.seed = j.at("seed").get<std::uint64_t>();
    ckpt.num_candidates = j.at("num_candidates").get<std::size_t>();
    ckpt.feature_dim = j.at("feature_dim").get<std::size_t>();
    ckpt.num_classes = j.at("num_classes").get<int>();
    const auto& c = j.at("config");
    ckpt.config.num_layers = c.at("num_layers").get<std::size_t>();
    ckpt.config.num_channels = c.at("num_channels").get<std::size_t>();
    ckpt.config.hidden_dim = c.at("hidden_dim").get<std::size_t>();
    ckpt.config.classifier_hidden = c.at("classifier_hidden").get<std::size_t>();
    ckpt.config.include_identity = c.at("include_identity").get<bool>();
    ckpt.config.normalize_at = c.at("normalize_at").get<std::string>() == "output"
                                   ? NormalizeAt::output
                                   : NormalizeAt::consumption;
    ckpt.config.detach_degrees = c.at("detach_degrees").get<bool>();

    const auto& p = j.at("params");
    for (const auto& chan : p.at("selectors")) {
        std::vector<DenseMatrix> row;
        for (const auto& s : chan) {
            DenseMatrix w(1, s.size());
            w.values = s.get<std::vector<double>>();
            row.push_back(std::move(w));
        }
        ckpt.params.selectors.push_back(std::move(row));
    }
    ckpt.params.gcn_weight = ckpt_detail::parse_tensor(p.at("gcn_weight"));
    ckpt.params.dense1_w = ckpt_detail::parse_tensor(p.at("dense1_w"));
    ckpt.params.dense1_b = ckpt_detail::parse_tensor(p.at("dense1_b"));
    ckpt.params.dense2_w = ckpt_detail::parse_tensor(p.at("dense2_w"));
    ckpt.params.dense2_b = ckpt_detail::parse_tensor(p.at("dense2_b"));
    return ckpt;
}

/// Shape compatibility between a checkpoint and a dataset; throws with a
/// pointed message on mismatch.
inline void check_compatible(const Checkpoint& ckpt, const HeteroGraph& graph, int num_classes) {
    if (ckpt.num_candidates != graph.num_candidates())
        throw std::runtime_error("checkpoint expects " + std::to_string(ckpt.num_candidates) +
                                 " candidate matrices, dataset has " +
                                 std::to_string(graph.num_candidates()));
    if (ckpt.feature_dim != graph.features.n_cols)
        throw std::runtime_error("checkpoint expects feature dim " + std::to_string(ckpt.feature_dim) +
                                 ", dataset has " + std::to_string(graph.features.n_cols));
    if (ckpt.num_classes != num_classes)
        throw std::runtime_error("checkpoint expects " + std::to_string(ckpt.num_classes) +
                                 " classes, dataset has " + std::to_string(num_classes));
}

} // namespace gtn
