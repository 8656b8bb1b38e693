// Command-line front end: dataset synthesis, training, evaluation,
// interpretation, and gradient checking over the manifest/TSV dataset format.

#include <CLI11.hpp>
#include <json.hpp>

#include <gtn/checkpoint.hpp>
#include <gtn/dataset_io.hpp>
#include <gtn/gradcheck.hpp>
#include <gtn/graph.hpp>
#include <gtn/interpret.hpp>
#include <gtn/model.hpp>
#include <gtn/synthetic.hpp>
#include <gtn/train.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_validation = 1;
constexpr int exit_numerical = 2;

struct ModelOptions {
    std::size_t layers = 2;
    std::size_t channels = 2;
    std::size_t hidden_dim = 64;
    std::size_t classifier_hidden = 64;
    bool include_identity = true;
    std::string normalize_at = "consumption";
    bool detach_degrees = false;
};

struct TrainOptions {
    double learning_rate = 0.005;
    double weight_decay = 0.001;
    int max_epochs = 100;
    int patience = 20;
    std::uint64_t seed = 0;
};

gtn::GtnConfig to_gtn_config(const ModelOptions& m) {
    gtn::GtnConfig cfg;
    cfg.num_layers = m.layers;
    cfg.num_channels = m.channels;
    cfg.hidden_dim = m.hidden_dim;
    cfg.classifier_hidden = m.classifier_hidden;
    cfg.include_identity = m.include_identity;
    if (m.normalize_at == "consumption")
        cfg.normalize_at = gtn::NormalizeAt::consumption;
    else if (m.normalize_at == "output")
        cfg.normalize_at = gtn::NormalizeAt::output;
    else
        throw std::runtime_error("normalize_at must be 'consumption' or 'output'");
    cfg.detach_degrees = m.detach_degrees;
    cfg.validate();
    return cfg;
}

gtn::TrainConfig to_train_config(const TrainOptions& t) {
    gtn::TrainConfig cfg;
    cfg.learning_rate = t.learning_rate;
    cfg.weight_decay = t.weight_decay;
    cfg.max_epochs = t.max_epochs;
    cfg.patience = t.patience;
    cfg.seed = t.seed;
    cfg.validate();
    return cfg;
}

fs::path resolve_manifest(const std::string& data) {
    fs::path p(data);
    if (fs::is_directory(p)) p /= "manifest.json";
    return p;
}

/// Applies config-file values to options the user did not set on the command
/// line. Unknown keys are rejected.
void apply_config_file(const std::string& path, CLI::App* cmd, ModelOptions& model,
                       TrainOptions& train) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    json j;
    in >> j;

    const auto set_if_unset = [cmd](const std::string& flag, auto&& assign) {
        const CLI::Option* opt = cmd->get_option_no_throw(flag);
        if (!opt || opt->count() == 0) assign();
    };
    for (const auto& [key, value] : j.items()) {
        if (key == "layers")
            set_if_unset("--layers", [&] { model.layers = value.get<std::size_t>(); });
        else if (key == "channels")
            set_if_unset("--channels", [&] { model.channels = value.get<std::size_t>(); });
        else if (key == "hidden_dim")
            set_if_unset("--hidden-dim", [&] { model.hidden_dim = value.get<std::size_t>(); });
        else if (key == "classifier_hidden")
            set_if_unset("--classifier-hidden",
                         [&] { model.classifier_hidden = value.get<std::size_t>(); });
        else if (key == "include_identity")
            set_if_unset("--identity", [&] { model.include_identity = value.get<bool>(); });
        else if (key == "normalize_at")
            set_if_unset("--normalize-at", [&] { model.normalize_at = value.get<std::string>(); });
        else if (key == "detach_degrees")
            set_if_unset("--detach-degrees", [&] { model.detach_degrees = value.get<bool>(); });
        else if (key == "learning_rate")
            set_if_unset("--lr", [&] { train.learning_rate = value.get<double>(); });
        else if (key == "weight_decay")
            set_if_unset("--weight-decay", [&] { train.weight_decay = value.get<double>(); });
        else if (key == "max_epochs")
            set_if_unset("--max-epochs", [&] { train.max_epochs = value.get<int>(); });
        else if (key == "patience")
            set_if_unset("--patience", [&] { train.patience = value.get<int>(); });
        else if (key == "seed")
            set_if_unset("--seed", [&] { train.seed = value.get<std::uint64_t>(); });
        else
            throw std::runtime_error("config file: unknown key '" + key + "'");
    }
}

void add_model_flags(CLI::App* cmd, ModelOptions& m) {
    cmd->add_option("--layers", m.layers, "Number of GT layers")->capture_default_str();
    cmd->add_option("--channels", m.channels, "Number of meta-path channels")->capture_default_str();
    cmd->add_option("--hidden-dim", m.hidden_dim, "GCN embedding width")->capture_default_str();
    cmd->add_option("--classifier-hidden", m.classifier_hidden, "First dense layer width")
        ->capture_default_str();
    cmd->add_option("--identity", m.include_identity,
                    "Include the identity matrix among candidates (1/0)")
        ->capture_default_str();
    cmd->add_option("--normalize-at", m.normalize_at,
                    "Degree normalization placement: consumption|output")
        ->capture_default_str();
    cmd->add_option("--detach-degrees", m.detach_degrees,
                    "Stop gradients through degree normalization (1/0)")
        ->capture_default_str();
}

void add_train_flags(CLI::App* cmd, TrainOptions& t) {
    cmd->add_option("--lr", t.learning_rate, "Adam learning rate")->capture_default_str();
    cmd->add_option("--weight-decay", t.weight_decay, "Decoupled weight decay on dense/GCN weights")
        ->capture_default_str();
    cmd->add_option("--max-epochs", t.max_epochs, "Epoch budget")->capture_default_str();
    cmd->add_option("--patience", t.patience, "Early-stop patience on validation macro-F1")
        ->capture_default_str();
    cmd->add_option("--seed", t.seed, "Random seed")->capture_default_str();
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

json metrics_json(const gtn::TrainHistory& h, std::uint64_t seed) {
    return json{{"seed", seed},
                {"epochs_run", h.epochs.size()},
                {"best_epoch", h.best_epoch},
                {"best_val_macro_f1", h.best_val_macro_f1},
                {"test_macro_f1", h.test_macro_f1},
                {"test_micro_f1", h.test_micro_f1},
                {"diverged", h.diverged}};
}

int cmd_train(const std::string& data, const std::string& out_dir, const ModelOptions& model,
              const TrainOptions& topt, bool as_json) {
    const gtn::GtnConfig gtn_cfg = to_gtn_config(model);
    const gtn::TrainConfig train_cfg = to_train_config(topt);
    auto [graph, split] = gtn::load_dataset(resolve_manifest(data));
    if (gtn_cfg.include_identity) graph = gtn::with_identity(graph);

    const gtn::TrainResult result = gtn::train(graph, split, gtn_cfg, train_cfg);

    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "history.jsonl", gtn::history_to_jsonl(result.history));
    const json metrics = metrics_json(result.history, train_cfg.seed);
    write_text(fs::path(out_dir) / "metrics.json", metrics.dump(2) + "\n");

    gtn::Checkpoint ckpt;
    ckpt.config = gtn_cfg;
    ckpt.params = result.params;
    ckpt.seed = train_cfg.seed;
    ckpt.num_candidates = graph.num_candidates();
    ckpt.feature_dim = graph.features.n_cols;
    ckpt.num_classes = split.num_classes;
    gtn::save_checkpoint(fs::path(out_dir) / "checkpoint.json", ckpt);

    if (result.history.diverged) {
        std::cerr << "training diverged (non-finite loss); wrote partial history to " << out_dir
                  << "\n";
        return exit_numerical;
    }
    if (as_json)
        std::cout << metrics.dump() << "\n";
    else
        std::printf("trained %zu epochs, best epoch %d, test macro-F1 %.4f, micro-F1 %.4f\n",
                    result.history.epochs.size(), result.history.best_epoch,
                    result.history.test_macro_f1, result.history.test_micro_f1);
    return exit_ok;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, bool as_json) {
    const gtn::Checkpoint ckpt = gtn::load_checkpoint(checkpoint);
    auto [graph, split] = gtn::load_dataset(resolve_manifest(data));
    if (ckpt.config.include_identity) graph = gtn::with_identity(graph);
    gtn::check_compatible(ckpt, graph, split.num_classes);

    const gtn::TapedForward fwd = gtn::gtn_forward(graph, ckpt.params, ckpt.config);
    json out;
    for (const auto& [name, nodes] :
         {std::pair<const char*, const std::vector<std::size_t>*>{"train", &split.train},
          {"val", &split.val},
          {"test", &split.test}}) {
        if (nodes->empty()) continue;
        const auto [macro, micro] =
            gtn::evaluate_f1(fwd.output.logits, split.labels, *nodes, split.num_classes);
        out[name] = {{"macro_f1", macro}, {"micro_f1", micro}};
    }
    if (as_json) {
        std::cout << out.dump() << "\n";
    } else {
        for (const auto& [name, metrics] : out.items())
            std::printf("%-6s macro-F1 %.4f  micro-F1 %.4f\n", name.c_str(),
                        metrics.at("macro_f1").get<double>(), metrics.at("micro_f1").get<double>());
    }
    return exit_ok;
}

int cmd_interpret(const std::string& checkpoint, const std::string& data, std::size_t top_k,
                  std::string target_type, double min_weight, const std::string& out_file,
                  bool as_json) {
    const gtn::Checkpoint ckpt = gtn::load_checkpoint(checkpoint);
    auto [graph, split] = gtn::load_dataset(resolve_manifest(data));
    if (ckpt.config.include_identity) graph = gtn::with_identity(graph);
    gtn::check_compatible(ckpt, graph, split.num_classes);
    if (target_type.empty()) target_type = graph.registry.node_types[split.target_type].name;

    std::vector<std::vector<std::vector<double>>> alphas;
    for (const auto& chan : ckpt.params.selectors) {
        std::vector<std::vector<double>> rows;
        for (const auto& sel : chan) rows.push_back(gtn::softmax_vec(sel.values));
        alphas.push_back(std::move(rows));
    }

    std::vector<gtn::EnumerateResult> per_channel;
    for (const auto& chan : alphas)
        per_channel.push_back(
            gtn::enumerate_metapaths(chan, graph.registry, ckpt.config.include_identity, min_weight));
    const gtn::EnumerateResult combined = gtn::enumerate_combined(
        alphas, graph.registry, ckpt.config.include_identity, min_weight);
    if (!combined.exhaustive)
        std::cerr << "warning: selection space too large, rankings use beam search\n";

    if (!out_file.empty()) write_text(out_file, gtn::report_jsonl(per_channel, combined));

    const auto rows = gtn::attention_report(ckpt.params, graph.registry, ckpt.config.include_identity);
    if (as_json) {
        json out;
        auto paths_json = [top_k](const gtn::EnumerateResult& r) {
            json arr = json::array();
            for (std::size_t i = 0; i < r.descriptors.size() && i < top_k; ++i) {
                const auto& d = r.descriptors[i];
                arr.push_back({{"sequence", d.edge_type_names},
                               {"path_string", d.node_type_string},
                               {"weight", d.weight},
                               {"src", d.src_type},
                               {"dst", d.dst_type}});
            }
            return arr;
        };
        out["combined"] = paths_json(combined);
        json between = json::array();
        for (const auto& d : gtn::top_k_between(combined.descriptors, target_type, top_k))
            between.push_back({{"path_string", d.node_type_string}, {"weight", d.weight}});
        out["between_target"] = between;
        out["target_type"] = target_type;
        json att = json::array();
        for (const auto& row : rows) {
            json entry{{"channel", row.channel}, {"slot", row.slot}};
            for (const auto& [name, a] : row.alpha) entry["alpha"][name] = a;
            att.push_back(entry);
        }
        out["attention"] = att;
        std::cout << out.dump() << "\n";
        return exit_ok;
    }

    std::printf("top %zu meta-paths (combined over %zu channels):\n", top_k, alphas.size());
    std::printf("  %-4s %-10s %-16s %s\n", "rank", "weight", "path", "composition");
    for (std::size_t i = 0; i < combined.descriptors.size() && i < top_k; ++i) {
        const auto& d = combined.descriptors[i];
        std::string comp;
        for (const auto& name : d.edge_type_names) comp += (comp.empty() ? "" : ".") + name;
        if (comp.empty()) comp = "-";
        std::printf("  %-4zu %-10.6f %-16s %s\n", i + 1, d.weight, d.node_type_string.c_str(),
                    comp.c_str());
    }
    std::printf("top %zu between %s nodes:\n", top_k, target_type.c_str());
    const auto between = gtn::top_k_between(combined.descriptors, target_type, top_k);
    for (std::size_t i = 0; i < between.size(); ++i)
        std::printf("  %-4zu %-10.6f %s\n", i + 1, between[i].weight,
                    between[i].node_type_string.c_str());
    std::printf("attention scores:\n");
    for (const auto& row : rows) {
        std::printf("  channel %zu, selector %zu:", row.channel, row.slot);
        for (const auto& [name, a] : row.alpha) std::printf(" %s=%.4f", name.c_str(), a);
        std::printf("\n");
    }
    return exit_ok;
}

int cmd_synth(const std::string& spec_file, const std::string& out_dir) {
    std::ifstream in(spec_file);
    if (!in) throw std::runtime_error("cannot open spec file " + spec_file);
    json j;
    in >> j;

    gtn::SyntheticSpec spec;
    for (const auto& [key, value] : j.items()) {
        if (key == "node_types") {
            for (const auto& nt : value)
                spec.node_types.push_back(
                    {nt.at("name").get<std::string>(), nt.at("count").get<std::size_t>()});
        } else if (key == "edge_types") {
            for (const auto& et : value)
                spec.edge_types.push_back({et.at("name").get<std::string>(),
                                           et.at("src").get<std::string>(),
                                           et.at("dst").get<std::string>(),
                                           et.value("density", 0.05)});
        } else if (key == "planted_path") {
            spec.planted_path = value.get<std::vector<std::string>>();
        } else if (key == "num_classes") {
            spec.num_classes = value.get<int>();
        } else if (key == "noise") {
            spec.noise = value.get<double>();
        } else if (key == "seed") {
            spec.seed = value.get<std::uint64_t>();
        } else if (key == "train_fraction") {
            spec.train_fraction = value.get<double>();
        } else if (key == "val_fraction") {
            spec.val_fraction = value.get<double>();
        } else {
            throw std::runtime_error("spec file: unknown key '" + key + "'");
        }
    }

    auto [graph, split, truth] = gtn::generate_synthetic(spec);
    const fs::path manifest = gtn::save_dataset(graph, split, out_dir);
    const json truth_json{{"planted_path", truth.planted_path},
                          {"reverse_path", truth.reverse_path}};
    write_text(fs::path(out_dir) / "ground_truth.json", truth_json.dump(2) + "\n");
    std::cout << manifest.string() << "\n";
    return exit_ok;
}

int cmd_gradcheck(double epsilon, double threshold, std::uint64_t seed, bool as_json) {
    gtn::GradCheckInstance inst = gtn::default_gradcheck_instance();
    inst.param_seed = seed;
    std::printf("gradcheck: epsilon=%g, %zu-node graph, %zu candidates, C=%zu, L=%zu\n", epsilon,
                inst.graph.num_nodes(), inst.graph.num_candidates(), inst.config.num_channels,
                inst.config.num_layers);
    const gtn::GradCheckReport report = gtn::run_model_gradcheck(inst, epsilon);
    const bool pass = report.max_rel_err <= threshold;
    if (as_json) {
        const json out{{"epsilon", epsilon},
                       {"threshold", threshold},
                       {"seed", seed},
                       {"coordinates", report.num_coordinates},
                       {"max_rel_err", report.max_rel_err},
                       {"worst_param", report.worst_param},
                       {"pass", pass}};
        std::cout << out.dump() << "\n";
    } else {
        std::printf("checked %zu coordinates, max relative error %.3e (worst: %s)\n",
                    report.num_coordinates, report.max_rel_err, report.worst_param.c_str());
        std::printf("%s (threshold %g)\n", pass ? "PASS" : "FAIL", threshold);
    }
    return pass ? exit_ok : exit_numerical;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Graph Transformer Networks: learned meta-path graphs for node classification"};
    app.require_subcommand(1);

    ModelOptions model;
    TrainOptions topt;
    std::string data, out_dir, config_file, checkpoint, spec_file, target_type, report_file;
    bool as_json = false;
    std::size_t top_k = 10;
    double min_weight = 0.0;
    double epsilon = 1e-5, threshold = 1e-4;
    std::uint64_t gc_seed = 5;

    CLI::App* train_cmd = app.add_subcommand("train", "Train a GTN on a dataset");
    train_cmd->add_option("--data", data, "Dataset directory or manifest path")->required();
    train_cmd->add_option("--out", out_dir, "Output directory for checkpoint/history/metrics")
        ->required();
    train_cmd->add_option("--config", config_file, "JSON config file (flags override it)");
    add_model_flags(train_cmd, model);
    add_train_flags(train_cmd, topt);
    train_cmd->add_flag("--json", as_json, "Print metrics as JSON");

    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--data", data, "Dataset directory or manifest path")->required();
    eval_cmd->add_flag("--json", as_json, "Print metrics as JSON");

    CLI::App* interp_cmd =
        app.add_subcommand("interpret", "Rank learned meta-paths and report attention");
    interp_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    interp_cmd->add_option("--data", data, "Dataset directory or manifest path")->required();
    interp_cmd->add_option("--top-k", top_k, "Rows per ranking")->capture_default_str();
    interp_cmd->add_option("--target-type", target_type,
                           "Node type for the between-target ranking (default: labeled type)");
    interp_cmd->add_option("--min-weight", min_weight, "Drop meta-paths below this pooled weight")
        ->capture_default_str();
    interp_cmd->add_option("--out", report_file, "Write the full ranking as JSON lines");
    interp_cmd->add_flag("--json", as_json, "Print the report as JSON");

    CLI::App* synth_cmd = app.add_subcommand("synth", "Materialize a synthetic planted-path dataset");
    synth_cmd->add_option("--spec", spec_file, "Synthetic spec JSON")->required();
    synth_cmd->add_option("--out", out_dir, "Output dataset directory")->required();

    CLI::App* gc_cmd =
        app.add_subcommand("gradcheck", "Check reverse-mode gradients against central differences");
    gc_cmd->add_option("--epsilon", epsilon, "Central-difference step")->capture_default_str();
    gc_cmd->add_option("--threshold", threshold, "Max allowed relative error")->capture_default_str();
    gc_cmd->add_option("--seed", gc_seed, "Parameter init seed")->capture_default_str();
    gc_cmd->add_flag("--json", as_json, "Print the report as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_validation;
    }

    try {
        if (train_cmd->parsed()) {
            if (!config_file.empty()) apply_config_file(config_file, train_cmd, model, topt);
            return cmd_train(data, out_dir, model, topt, as_json);
        }
        if (eval_cmd->parsed()) return cmd_eval(checkpoint, data, as_json);
        if (interp_cmd->parsed())
            return cmd_interpret(checkpoint, data, top_k, target_type, min_weight, report_file,
                                 as_json);
        if (synth_cmd->parsed()) return cmd_synth(spec_file, out_dir);
        if (gc_cmd->parsed()) return cmd_gradcheck(epsilon, threshold, gc_seed, as_json);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_validation;
    }
    return exit_validation;
}
