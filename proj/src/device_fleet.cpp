#include "driftguard/device_fleet.hpp"

#include <cmath>

#include "json.hpp"

namespace driftguard {

int gate_vector_size(const MoESpec& spec, const GatingOptions& opt) {
    return spec.shared_layers * spec.experts_per_layer + (opt.include_branch_weights ? 2 : 0);
}

std::vector<double> gate_vector(const GateTrace& trace, const MoESpec& spec, const GatingOptions& opt) {
    std::vector<double> g;
    g.reserve(static_cast<size_t>(gate_vector_size(spec, opt)));
    for (const auto& sel : trace.layer_selections) {
        for (int s : sel) g.push_back(static_cast<double>(s));
    }
    if (opt.include_branch_weights) {
        g.push_back(trace.branch_weights[0]);
        g.push_back(trace.branch_weights[1]);
    }
    return g;
}

GatingMatrix aggregate_gating(const std::vector<GateTrace>& traces,
                              const std::vector<std::vector<double>>& probs, const MoESpec& spec,
                              const GatingOptions& opt) {
    if (traces.empty() || traces.size() != probs.size()) {
        throw ProtocolError("aggregate_gating: need one trace and one probability vector per sample");
    }
    size_t n_units = static_cast<size_t>(gate_vector_size(spec, opt));
    size_t n_classes = static_cast<size_t>(spec.n_classes);

    std::vector<std::vector<double>> vectors(traces.size());
    std::vector<double> mean_gate(n_units, 0.0);
    for (size_t i = 0; i < traces.size(); ++i) {
        vectors[i] = gate_vector(traces[i], spec, opt);
        for (size_t u = 0; u < n_units; ++u) mean_gate[u] += vectors[i][u];
    }
    for (double& v : mean_gate) v /= static_cast<double>(traces.size());

    GatingMatrix m(n_classes, std::vector<double>(n_units, 0.0));
    for (size_t y = 0; y < n_classes; ++y) {
        double mass = 0.0;
        for (size_t i = 0; i < traces.size(); ++i) {
            double p = probs[i][y];
            mass += p;
            for (size_t u = 0; u < n_units; ++u) m[y][u] += p * vectors[i][u];
        }
        if (mass > 0.0) {
            for (size_t u = 0; u < n_units; ++u) m[y][u] /= mass;
        } else {
            m[y] = mean_gate;
        }
    }
    return m;
}

Observation local_inference(const DeviceState& device, const MoeNet& net, const GatingOptions& opt) {
    const Dataset& val = device.step_data.val;
    if (val.empty()) throw ProtocolError("local_inference: device has no validation samples");

    std::vector<GateTrace> traces;
    std::vector<std::vector<double>> probs;
    traces.reserve(val.size());
    probs.reserve(val.size());
    int correct = 0;
    for (const auto& s : val) {
        auto [p, trace] = net.forward(s.features);
        if (argmax_class(p) == s.label) ++correct;
        traces.push_back(std::move(trace));
        probs.push_back(std::move(p));
    }

    Observation obs;
    obs.device_id = device.device_id;
    obs.avg_local_acc = static_cast<double>(correct) / static_cast<double>(val.size());
    obs.gating_matrix = aggregate_gating(traces, probs, net.spec(), opt);
    return obs;
}

std::string observation_to_json(const Observation& obs) {
    nlohmann::ordered_json j;
    j["device_id"] = obs.device_id;
    j["avg_local_acc"] = obs.avg_local_acc;
    j["gating_matrix"] = obs.gating_matrix;
    return j.dump();
}

}  // namespace driftguard
