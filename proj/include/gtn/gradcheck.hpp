#pragma once

#include <cstdint>
#include <string>

#include "autodiff.hpp"
#include "model.hpp"
#include "synthetic.hpp"

namespace gtn {

struct GradCheckInstance {
    HeteroGraph graph; // identity already applied per config
    LabeledSplit split;
    GtnConfig config;
    std::uint64_t param_seed = 0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t num_coordinates = 0;
    double epsilon = 0.0;
};

/// Desk-scale check instance: a 12-node synthetic heterogeneous graph with
/// three edge types plus the identity candidate, two channels, two GT layers,
/// embedding width 8.
inline GradCheckInstance default_gradcheck_instance() {
    SyntheticSpec spec;
    spec.node_types = {{"T", 4}, {"M", 4}, {"F", 4}};
    spec.edge_types = {{"TM", "T", "M", 0.4}, {"MT", "M", "T", 0.4}, {"FM", "F", "M", 0.4}};
    spec.planted_path = {"TM"};
    spec.num_classes = 3;
    spec.seed = 12;
    spec.train_fraction = 0.5;
    spec.val_fraction = 0.25;
    auto [graph, split, truth] = generate_synthetic(spec);

    GradCheckInstance inst;
    inst.split = std::move(split);
    inst.config.num_layers = 2;
    inst.config.num_channels = 2;
    inst.config.hidden_dim = 8;
    inst.config.classifier_hidden = 8;
    inst.config.include_identity = true;
    inst.graph = with_identity(graph);
    inst.param_seed = 5;
    return inst;
}

/// Initializes parameters from the seed, takes reverse-mode gradients of the
/// training loss, and compares every coordinate against central differences.
inline GradCheckReport run_model_gradcheck(const GradCheckInstance& inst, double epsilon = 1e-5) {
    GtnParams params = init_params(inst.config, inst.graph.num_candidates(),
                                   inst.graph.features.n_cols, inst.split.num_classes, inst.param_seed);
    TapedForward fwd = gtn_forward(inst.graph, params, inst.config);
    const Gradients analytic = fwd.tape.backward(loss_node(fwd, inst.split));

    const std::vector<ParamRef> refs = param_refs(params);
    const auto f = [&]() {
        TapedForward run = gtn_forward(inst.graph, params, inst.config);
        return run.tape.dense_value(loss_node(run, inst.split)).at(0, 0);
    };
    GradCheckReport report;
    report.epsilon = epsilon;
    for (const ParamRef& r : refs) report.num_coordinates += r.tensor->values.size();
    report.max_rel_err = finite_diff_check(f, analytic, refs, epsilon, &report.worst_param);
    return report;
}

} // namespace gtn
