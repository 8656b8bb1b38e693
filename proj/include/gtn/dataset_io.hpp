#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "graph.hpp"
#include "sparse.hpp"

namespace gtn {

// On-disk dataset layout: a JSON manifest next to TSV payload files.
//   manifest.json    {node_types, edge_types, features_file, labels_file, splits}
//   edge files       two integer columns "src<TAB>dst", stored as A[dst, src] = 1
//   features file    one row of D tab-separated reals per node
//   labels file      "node_id<TAB>class_id"
//   split files      one node id per line
// Loading and saving are exact inverses on valid datasets.

namespace io_detail {

inline std::runtime_error file_error(const std::filesystem::path& file, std::size_t line,
                                     const std::string& what) {
    return std::runtime_error(file.string() + ":" + std::to_string(line) + ": " + what);
}

inline std::ifstream open_input(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open " + file.string());
    return in;
}

inline std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == '\t' || ch == ' ') {
            if (!cur.empty()) fields.push_back(std::move(cur));
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) fields.push_back(std::move(cur));
    return fields;
}

inline std::size_t parse_index(const std::string& tok, const std::filesystem::path& file,
                               std::size_t line) {
    std::size_t v = 0;
    const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size())
        throw file_error(file, line, "expected a nonnegative integer, got '" + tok + "'");
    return v;
}

inline double parse_real(const std::string& tok, const std::filesystem::path& file, std::size_t line) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size())
        throw file_error(file, line, "expected a real number, got '" + tok + "'");
    return v;
}

inline std::string format_real(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline void reject_unknown_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                                const std::string& where) {
    for (const auto& [key, _] : obj.items())
        if (!allowed.count(key))
            throw std::runtime_error(where + ": unknown key '" + key + "'");
}

} // namespace io_detail

/// Reads a manifest and its referenced TSV files. Duplicate edges collapse to
/// a single unit entry. Identity prepending is the caller's concern.
inline std::pair<HeteroGraph, LabeledSplit> load_dataset(const std::filesystem::path& manifest_path) {
    namespace fs = std::filesystem;
    if (!fs::exists(manifest_path))
        throw std::runtime_error("manifest not found: " + manifest_path.string());
    const fs::path dir = manifest_path.parent_path();

    nlohmann::json manifest;
    {
        std::ifstream in = io_detail::open_input(manifest_path);
        in >> manifest;
    }
    io_detail::reject_unknown_keys(
        manifest, {"node_types", "edge_types", "features_file", "labels_file", "splits"},
        manifest_path.string());

    HeteroGraph g;
    for (const auto& nt : manifest.at("node_types")) {
        io_detail::reject_unknown_keys(nt, {"name", "count"}, "node_types");
        g.registry.node_types.push_back({nt.at("name").get<std::string>(), nt.at("count").get<std::size_t>(), 0});
    }
    g.registry.assign_offsets();
    const std::size_t n = g.num_nodes();
    detail::require(n > 0, "dataset: no nodes declared");

    std::vector<fs::path> edge_files;
    for (const auto& et : manifest.at("edge_types")) {
        io_detail::reject_unknown_keys(et, {"name", "src", "dst", "file"}, "edge_types");
        g.registry.edge_types.push_back({et.at("name").get<std::string>(),
                                         g.registry.find_node_type(et.at("src").get<std::string>()),
                                         g.registry.find_node_type(et.at("dst").get<std::string>())});
        edge_files.push_back(dir / et.at("file").get<std::string>());
    }

    for (std::size_t k = 0; k < edge_files.size(); ++k) {
        const fs::path& file = edge_files[k];
        std::ifstream in = io_detail::open_input(file);
        const EdgeType& et = g.registry.edge_types[k];
        std::set<std::pair<std::size_t, std::size_t>> entries; // (dst, src)
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto fields = io_detail::split_fields(line);
            if (fields.empty()) continue;
            if (fields.size() != 2)
                throw io_detail::file_error(file, lineno, "expected two columns (src, dst)");
            const std::size_t src = io_detail::parse_index(fields[0], file, lineno);
            const std::size_t dst = io_detail::parse_index(fields[1], file, lineno);
            if (src >= n || dst >= n)
                throw io_detail::file_error(file, lineno, "node id out of range (N=" + std::to_string(n) + ")");
            if (!g.registry.in_type(src, et.src_type))
                throw io_detail::file_error(file, lineno,
                                            "src node " + std::to_string(src) + " is not of type " +
                                                g.registry.node_types[et.src_type].name);
            if (!g.registry.in_type(dst, et.dst_type))
                throw io_detail::file_error(file, lineno,
                                            "dst node " + std::to_string(dst) + " is not of type " +
                                                g.registry.node_types[et.dst_type].name);
            entries.emplace(dst, src);
        }
        std::vector<std::tuple<std::size_t, std::size_t, double>> trips;
        trips.reserve(entries.size());
        for (const auto& [dst, src] : entries) trips.emplace_back(dst, src, 1.0);
        g.adj.push_back(csr_from_triplets(n, n, std::move(trips)));
    }

    // features
    {
        const fs::path file = dir / manifest.at("features_file").get<std::string>();
        std::ifstream in = io_detail::open_input(file);
        std::string line;
        std::size_t lineno = 0;
        std::vector<double> values;
        std::size_t dim = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto fields = io_detail::split_fields(line);
            if (fields.empty()) continue;
            if (dim == 0) dim = fields.size();
            if (fields.size() != dim)
                throw io_detail::file_error(file, lineno, "inconsistent feature dimension");
            for (const auto& tok : fields) values.push_back(io_detail::parse_real(tok, file, lineno));
        }
        if (values.size() != n * dim)
            throw std::runtime_error(file.string() + ": expected " + std::to_string(n) +
                                     " feature rows, got " + std::to_string(dim ? values.size() / dim : 0));
        g.features = DenseMatrix(n, dim);
        g.features.values = std::move(values);
    }

    LabeledSplit split;
    split.labels.assign(n, -1);
    {
        const fs::path file = dir / manifest.at("labels_file").get<std::string>();
        std::ifstream in = io_detail::open_input(file);
        std::string line;
        std::size_t lineno = 0;
        int max_class = -1;
        while (std::getline(in, line)) {
            ++lineno;
            const auto fields = io_detail::split_fields(line);
            if (fields.empty()) continue;
            if (fields.size() != 2)
                throw io_detail::file_error(file, lineno, "expected two columns (node_id, class_id)");
            const std::size_t node = io_detail::parse_index(fields[0], file, lineno);
            const std::size_t cls = io_detail::parse_index(fields[1], file, lineno);
            if (node >= n) throw io_detail::file_error(file, lineno, "node id out of range");
            split.labels[node] = static_cast<int>(cls);
            max_class = std::max(max_class, static_cast<int>(cls));
        }
        if (max_class < 0) throw std::runtime_error(file.string() + ": no labels");
        split.num_classes = max_class + 1;
        std::vector<std::size_t> counts(split.num_classes, 0);
        bool target_set = false;
        for (std::size_t node = 0; node < n; ++node) {
            if (split.labels[node] < 0) continue;
            ++counts[split.labels[node]];
            const std::size_t t = g.registry.node_type_of(node);
            if (!target_set) {
                split.target_type = t;
                target_set = true;
            } else if (t != split.target_type) {
                throw std::runtime_error(file.string() + ": labels span more than one node type");
            }
        }
        for (int c = 0; c < split.num_classes; ++c)
            if (counts[c] == 0)
                throw std::runtime_error(file.string() + ": class ids not dense, class " +
                                         std::to_string(c) + " unused");
    }

    const auto& splits = manifest.at("splits");
    io_detail::reject_unknown_keys(splits, {"train", "val", "test"}, "splits");
    auto read_split = [&](const std::string& key) {
        const fs::path file = dir / splits.at(key).get<std::string>();
        std::ifstream in = io_detail::open_input(file);
        std::vector<std::size_t> nodes;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto fields = io_detail::split_fields(line);
            if (fields.empty()) continue;
            if (fields.size() != 1) throw io_detail::file_error(file, lineno, "expected one node id");
            nodes.push_back(io_detail::parse_index(fields[0], file, lineno));
        }
        return nodes;
    };
    split.train = read_split("train");
    split.val = read_split("val");
    split.test = read_split("test");

    validate_graph(g);
    validate_split(g, split);
    return {std::move(g), std::move(split)};
}

/// Writes the dataset into `dir` and returns the manifest path. The graph
/// must be binary (unit edge values) and carry no prepended identity;
/// load_dataset(save_dataset(g)) reproduces the input exactly.
inline std::filesystem::path save_dataset(const HeteroGraph& g, const LabeledSplit& split,
                                          const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    detail::require(!g.includes_identity, "save_dataset: strip the identity candidate first");
    for (const CsrMatrix& a : g.adj)
        for (double v : a.values)
            detail::require(v == 1.0, "save_dataset: edge values must be 1");

    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());

    auto open_output = [](const fs::path& file) {
        std::ofstream out(file, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + file.string());
        return out;
    };

    nlohmann::json manifest;
    for (const NodeType& t : g.registry.node_types)
        manifest["node_types"].push_back({{"name", t.name}, {"count", t.count}});

    for (std::size_t k = 0; k < g.registry.edge_types.size(); ++k) {
        const EdgeType& et = g.registry.edge_types[k];
        const std::string fname = "edges_" + et.name + ".tsv";
        manifest["edge_types"].push_back({{"name", et.name},
                                          {"src", g.registry.node_types[et.src_type].name},
                                          {"dst", g.registry.node_types[et.dst_type].name},
                                          {"file", fname}});
        std::ofstream out = open_output(dir / fname);
        const CsrMatrix& a = g.adj[k];
        for (std::size_t i = 0; i < a.n_rows; ++i)
            for (std::size_t p = a.row_begin(i); p < a.row_end(i); ++p)
                out << a.col_indices[p] << '\t' << i << '\n'; // columns are (src, dst)
    }

    manifest["features_file"] = "features.tsv";
    {
        std::ofstream out = open_output(dir / "features.tsv");
        for (std::size_t i = 0; i < g.features.n_rows; ++i) {
            for (std::size_t j = 0; j < g.features.n_cols; ++j) {
                if (j) out << '\t';
                out << io_detail::format_real(g.features.at(i, j));
            }
            out << '\n';
        }
    }

    manifest["labels_file"] = "labels.tsv";
    {
        std::ofstream out = open_output(dir / "labels.tsv");
        for (std::size_t node = 0; node < split.labels.size(); ++node)
            if (split.labels[node] >= 0) out << node << '\t' << split.labels[node] << '\n';
    }

    manifest["splits"] = {{"train", "train.tsv"}, {"val", "val.tsv"}, {"test", "test.tsv"}};
    const std::pair<const char*, const std::vector<std::size_t>*> parts[] = {
        {"train.tsv", &split.train}, {"val.tsv", &split.val}, {"test.tsv", &split.test}};
    for (const auto& [fname, nodes] : parts) {
        std::ofstream out = open_output(dir / fname);
        for (std::size_t node : *nodes) out << node << '\n';
    }

    const fs::path manifest_path = dir / "manifest.json";
    std::ofstream out = open_output(manifest_path);
    out << manifest.dump(2) << '\n';
    return manifest_path;
}

} // namespace gtn
