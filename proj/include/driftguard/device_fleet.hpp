#pragma once

#include <string>
#include <vector>

#include "driftguard/drift_world.hpp"
#include "driftguard/moe_model.hpp"

namespace driftguard {

using GatingMatrix = std::vector<std::vector<double>>;  // n_classes x n_gate_units

struct DeviceState {
    int device_id = 0;
    std::string current_group;  // local bank (or replica) key used for inference
    StepData step_data;
    DeviceDistribution distribution;
    Dataset retained_val;  // previous step's validation samples, joins next train set
};

struct Observation {
    int device_id = 0;
    double avg_local_acc = 0.0;
    GatingMatrix gating_matrix;
};

struct GatingOptions {
    bool include_branch_weights = true;  // layer-only variant when false
};

int gate_vector_size(const MoESpec& spec, const GatingOptions& opt);

// Flattened gate vector for one sample: per-layer hard selections followed by
// the two branch weights (when enabled).
std::vector<double> gate_vector(const GateTrace& trace, const MoESpec& spec, const GatingOptions& opt);

// Soft-label-weighted mean gate vector per class. Rows whose soft-label mass
// is zero fall back to the all-samples mean gate vector.
GatingMatrix aggregate_gating(const std::vector<GateTrace>& traces,
                              const std::vector<std::vector<double>>& probs, const MoESpec& spec,
                              const GatingOptions& opt);

// Step-1 pipeline stage: accuracy + aggregated gating matrix on the device's
// current validation split. Pure; never touches parameters.
Observation local_inference(const DeviceState& device, const MoeNet& net, const GatingOptions& opt);

std::string observation_to_json(const Observation& obs);

}  // namespace driftguard
