#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "driftguard/micro_learner.hpp"
#include "driftguard/rng.hpp"

namespace driftguard {

struct MoESpec {
    int n_features = 16;
    int n_classes = 4;
    int shared_layers = 2;
    int experts_per_layer = 3;
    int top_k = 1;
    int hidden_dim = 32;
    int local_layers = 1;
    int local_hidden_dim = 16;

    void validate() const;
};

// Which parameter subset a retraining configuration updates.
struct ParamScope {
    enum class Kind {
        FullModel,                 // everything in the bundle
        SharedPlusBranchGate,      // shared branch (incl. layer gates) + branch gate
        LocalBankPlusBranchGate,   // one named local bank + branch gate
        PerDeviceLocalPlusShared,  // shared + branch gate + the device's own bank
    };

    Kind kind = Kind::FullModel;
    std::string bank_key;  // LocalBankPlusBranchGate: the bank; PerDevice: filled per device

    static ParamScope full() { return {Kind::FullModel, ""}; }
    static ParamScope shared_gate() { return {Kind::SharedPlusBranchGate, ""}; }
    static ParamScope local_bank(std::string key) { return {Kind::LocalBankPlusBranchGate, std::move(key)}; }
    static ParamScope per_device(std::string key = "") { return {Kind::PerDeviceLocalPlusShared, std::move(key)}; }

    std::string describe() const;
    friend bool operator==(const ParamScope& a, const ParamScope& b) {
        return a.kind == b.kind && a.bank_key == b.bank_key;
    }
};

// Gate activations recorded on one forward pass.
struct GateTrace {
    std::array<double, 2> branch_weights{};            // (shared, local), sums to 1
    std::vector<std::vector<int>> layer_selections;    // per shared layer, E entries of 0/1
    std::vector<std::vector<double>> layer_scores;     // per shared layer, softmax scores
};

// Parameter store partitioned into shared / branch-gate / local banks.
struct ModelBundle {
    MoESpec spec;
    ParamMap shared_params;       // experts, layer gates, shared head
    ParamMap branch_gate_params;  // 2-way branch gate
    std::map<std::string, ParamMap> local_banks;

    static ModelBundle initialize(const MoESpec& spec, Rng& rng, const std::string& first_bank = "bank0");

    bool has_bank(const std::string& key) const { return local_banks.count(key) != 0; }
    void clone_bank(const std::string& src, const std::string& dst);
    void remove_bank(const std::string& key);
    // Routes the id to whichever partition holds it.
    void set_param(const ParamId& id, const TensorBuf& value);
    ParamIdSet all_param_ids() const;
    void validate_partitions() const;
    uint64_t content_hash() const;
};

ParamIdSet params_for_scope(const ModelBundle& bundle, const ParamScope& scope);

// Exactly top_k indices marked 1; ties broken toward the lower expert index.
std::vector<int> select_top_k(const std::vector<double>& scores, int k);

// Parameter id builders (module paths are stable API used by tests/tools).
ParamId branch_gate_id(const std::string& tensor);
ParamId shared_gate_id(int layer, const std::string& tensor);
ParamId shared_expert_id(int layer, int expert, const std::string& tensor);
ParamId shared_head_id(const std::string& tensor);
ParamId bank_layer_id(const std::string& bank, int layer, const std::string& tensor);
ParamId bank_head_id(const std::string& bank, const std::string& tensor);

// Two-branch MoE network bound to one local bank. Holds a flat private copy
// of the parameters it needs, so instances can train in parallel.
class MoeNet : public DifferentiableModel {
  public:
    MoeNet(const MoESpec& spec, const ModelBundle& bundle, const std::string& bank_key);

    ParamMap& params() override { return params_; }
    const ParamMap& params() const override { return params_; }
    std::vector<double> predict(const std::vector<double>& x) const override;
    ParamMap gradients(const Dataset& batch, const ParamIdSet& mask) const override;

    std::pair<std::vector<double>, GateTrace> forward(const std::vector<double>& x) const;

    // Branch-level soft gate: (w_shared, w_local).
    std::array<double, 2> branch_gate(const std::vector<double>& x) const;
    // Layer-level hard gate on activation h entering shared layer layer_idx.
    std::pair<std::vector<int>, std::vector<double>> layer_gate(int layer_idx,
                                                                const std::vector<double>& h) const;

    const MoESpec& spec() const { return spec_; }
    const std::string& bank_key() const { return bank_key_; }

  private:
    struct Cache;
    void forward_cached(const std::vector<double>& x, Cache& c) const;

    MoESpec spec_;
    std::string bank_key_;
    ParamMap params_;
};

// Checkpoint round-trips: records ordered lexicographically by ParamId.
std::string bundle_to_json(const ModelBundle& bundle);
ModelBundle bundle_from_json(const std::string& text);
void save_bundle(const ModelBundle& bundle, const std::string& path);
ModelBundle load_bundle(const std::string& path);

}  // namespace driftguard
