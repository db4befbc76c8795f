#include "driftguard/moe_model.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace driftguard {

void MoESpec::validate() const {
    if (n_features < 1 || n_classes < 1 || shared_layers < 1 || experts_per_layer < 1 ||
        hidden_dim < 1 || local_layers < 1 || local_hidden_dim < 1) {
        throw ConfigError("model: all dimensions and counts must be >= 1");
    }
    if (top_k < 1 || top_k > experts_per_layer) {
        throw ConfigError("model.top_k must be in [1, experts_per_layer]");
    }
}

std::string ParamScope::describe() const {
    switch (kind) {
        case Kind::FullModel: return "full_model";
        case Kind::SharedPlusBranchGate: return "shared+branch_gate";
        case Kind::LocalBankPlusBranchGate: return "local_bank(" + bank_key + ")+branch_gate";
        case Kind::PerDeviceLocalPlusShared: return "per_device_local(" + bank_key + ")+shared";
    }
    return "?";
}

ParamId branch_gate_id(const std::string& tensor) { return {"branch_gate", tensor}; }
ParamId shared_gate_id(int layer, const std::string& tensor) {
    return {"shared.layer" + std::to_string(layer) + ".gate", tensor};
}
ParamId shared_expert_id(int layer, int expert, const std::string& tensor) {
    return {"shared.layer" + std::to_string(layer) + ".expert" + std::to_string(expert), tensor};
}
ParamId shared_head_id(const std::string& tensor) { return {"shared.head", tensor}; }
ParamId bank_layer_id(const std::string& bank, int layer, const std::string& tensor) {
    return {"local." + bank + ".layer" + std::to_string(layer), tensor};
}
ParamId bank_head_id(const std::string& bank, const std::string& tensor) {
    return {"local." + bank + ".head", tensor};
}

namespace {

TensorBuf gaussian_matrix(int64_t n_in, int64_t n_out, Rng& rng) {
    TensorBuf t = TensorBuf::zeros({n_in, n_out});
    double scale = 1.0 / std::sqrt(static_cast<double>(n_in));
    for (double& v : t.data) v = rng.normal() * scale;
    return t;
}

std::string bank_prefix(const std::string& key) { return "local." + key + "."; }

}  // namespace

ModelBundle ModelBundle::initialize(const MoESpec& spec, Rng& rng, const std::string& first_bank) {
    spec.validate();
    ModelBundle b;
    b.spec = spec;

    // Zero-initialized branch gate: both branches start at weight 0.5.
    b.branch_gate_params[branch_gate_id("W")] = TensorBuf::zeros({spec.n_features, 2});
    b.branch_gate_params[branch_gate_id("b")] = TensorBuf::zeros({2});

    int d_in = spec.n_features;
    for (int l = 0; l < spec.shared_layers; ++l) {
        b.shared_params[shared_gate_id(l, "W")] = gaussian_matrix(d_in, spec.experts_per_layer, rng);
        b.shared_params[shared_gate_id(l, "b")] = TensorBuf::zeros({spec.experts_per_layer});
        for (int e = 0; e < spec.experts_per_layer; ++e) {
            b.shared_params[shared_expert_id(l, e, "W")] = gaussian_matrix(d_in, spec.hidden_dim, rng);
            b.shared_params[shared_expert_id(l, e, "b")] = TensorBuf::zeros({spec.hidden_dim});
        }
        d_in = spec.hidden_dim;
    }
    b.shared_params[shared_head_id("W")] = gaussian_matrix(spec.hidden_dim, spec.n_classes, rng);
    b.shared_params[shared_head_id("b")] = TensorBuf::zeros({spec.n_classes});

    ParamMap bank;
    int dl = spec.n_features;
    for (int m = 0; m < spec.local_layers; ++m) {
        bank[bank_layer_id(first_bank, m, "W")] = gaussian_matrix(dl, spec.local_hidden_dim, rng);
        bank[bank_layer_id(first_bank, m, "b")] = TensorBuf::zeros({spec.local_hidden_dim});
        dl = spec.local_hidden_dim;
    }
    bank[bank_head_id(first_bank, "W")] = gaussian_matrix(spec.local_hidden_dim, spec.n_classes, rng);
    bank[bank_head_id(first_bank, "b")] = TensorBuf::zeros({spec.n_classes});
    b.local_banks[first_bank] = std::move(bank);
    return b;
}

void ModelBundle::clone_bank(const std::string& src, const std::string& dst) {
    auto it = local_banks.find(src);
    if (it == local_banks.end()) throw LookupError("clone_bank: unknown source bank " + src);
    if (local_banks.count(dst)) throw ConflictError("clone_bank: destination bank already exists: " + dst);
    const std::string src_pfx = bank_prefix(src);
    const std::string dst_pfx = bank_prefix(dst);
    ParamMap copy;
    for (const auto& [id, t] : it->second) {
        ParamId nid = id;
        nid.module_path = dst_pfx + id.module_path.substr(src_pfx.size());
        copy.emplace(std::move(nid), t);
    }
    local_banks[dst] = std::move(copy);
}

void ModelBundle::remove_bank(const std::string& key) {
    if (!local_banks.erase(key)) throw LookupError("remove_bank: unknown bank " + key);
}

void ModelBundle::set_param(const ParamId& id, const TensorBuf& value) {
    if (auto it = shared_params.find(id); it != shared_params.end()) {
        it->second = value;
        return;
    }
    if (auto it = branch_gate_params.find(id); it != branch_gate_params.end()) {
        it->second = value;
        return;
    }
    for (auto& [key, bank] : local_banks) {
        if (auto it = bank.find(id); it != bank.end()) {
            it->second = value;
            return;
        }
    }
    throw LookupError("set_param: unknown parameter " + id.str());
}

ParamIdSet ModelBundle::all_param_ids() const {
    ParamIdSet ids;
    for (const auto& [id, _] : shared_params) ids.insert(id);
    for (const auto& [id, _] : branch_gate_params) ids.insert(id);
    for (const auto& [key, bank] : local_banks) {
        for (const auto& [id, _] : bank) ids.insert(id);
    }
    return ids;
}

void ModelBundle::validate_partitions() const {
    size_t total = shared_params.size() + branch_gate_params.size();
    for (const auto& [key, bank] : local_banks) total += bank.size();
    if (all_param_ids().size() != total) {
        throw ProtocolError("bundle partitions overlap: a ParamId appears in more than one partition");
    }
    // All banks must share shapes modulo their key prefix.
    if (!local_banks.empty()) {
        const auto& [ref_key, ref_bank] = *local_banks.begin();
        for (const auto& [key, bank] : local_banks) {
            if (bank.size() != ref_bank.size()) {
                throw ProtocolError("bank " + key + " has a different tensor count than " + ref_key);
            }
            auto rit = ref_bank.begin();
            for (auto bit = bank.begin(); bit != bank.end(); ++bit, ++rit) {
                std::string suffix_a = bit->first.module_path.substr(bank_prefix(key).size());
                std::string suffix_b = rit->first.module_path.substr(bank_prefix(ref_key).size());
                if (suffix_a != suffix_b || bit->first.tensor_name != rit->first.tensor_name ||
                    bit->second.shape != rit->second.shape) {
                    throw ProtocolError("bank " + key + " layout differs from " + ref_key);
                }
            }
        }
    }
}

uint64_t ModelBundle::content_hash() const {
    Fnv1a h;
    auto feed = [&h](const ParamMap& m) {
        for (const auto& [id, t] : m) {
            h.update_string(id.str());
            for (int64_t d : t.shape) h.update_i64(d);
            for (double v : t.data) h.update_double(v);
        }
    };
    feed(shared_params);
    feed(branch_gate_params);
    for (const auto& [key, bank] : local_banks) {
        h.update_string(key);
        feed(bank);
    }
    return h.digest();
}

ParamIdSet params_for_scope(const ModelBundle& bundle, const ParamScope& scope) {
    ParamIdSet ids;
    auto add = [&ids](const ParamMap& m) {
        for (const auto& [id, _] : m) ids.insert(id);
    };
    switch (scope.kind) {
        case ParamScope::Kind::FullModel:
            return bundle.all_param_ids();
        case ParamScope::Kind::SharedPlusBranchGate:
            add(bundle.shared_params);
            add(bundle.branch_gate_params);
            return ids;
        case ParamScope::Kind::LocalBankPlusBranchGate: {
            auto it = bundle.local_banks.find(scope.bank_key);
            if (it == bundle.local_banks.end()) {
                throw LookupError("params_for_scope: unknown bank " + scope.bank_key);
            }
            add(it->second);
            add(bundle.branch_gate_params);
            return ids;
        }
        case ParamScope::Kind::PerDeviceLocalPlusShared: {
            if (scope.bank_key.empty()) {
                throw ProtocolError("params_for_scope: per-device scope requires a device bank key");
            }
            auto it = bundle.local_banks.find(scope.bank_key);
            if (it == bundle.local_banks.end()) {
                throw LookupError("params_for_scope: unknown bank " + scope.bank_key);
            }
            add(bundle.shared_params);
            add(bundle.branch_gate_params);
            add(it->second);
            return ids;
        }
    }
    throw ProtocolError("params_for_scope: invalid scope kind");
}

std::vector<int> select_top_k(const std::vector<double>& scores, int k) {
    int n = static_cast<int>(scores.size());
    if (k < 1 || k > n) throw ConfigError("select_top_k: k out of range");
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&scores](int a, int b) {
        return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    });
    std::vector<int> sel(static_cast<size_t>(n), 0);
    for (int i = 0; i < k; ++i) sel[static_cast<size_t>(order[static_cast<size_t>(i)])] = 1;
    return sel;
}

// ---------------------------------------------------------------------------
// MoeNet

struct MoeNet::Cache {
    std::vector<double> x;
    std::vector<double> branch_logits;
    std::array<double, 2> branch_weights{};
    struct Layer {
        std::vector<double> input;
        std::vector<double> gate_logits;
        std::vector<double> scores;
        std::vector<int> selection;                    // 0/1 per expert
        std::vector<double> alphas;                    // renormalized, selected only (by index)
        std::vector<std::vector<double>> expert_out;   // tanh outputs, selected experts only
        std::vector<double> output;
    };
    std::vector<Layer> layers;
    std::vector<double> shared_logits;
    std::vector<std::vector<double>> local_acts;  // tanh outputs per local layer
    std::vector<double> local_logits;
    std::vector<double> logits;
    std::vector<double> probs;
};

MoeNet::MoeNet(const MoESpec& spec, const ModelBundle& bundle, const std::string& bank_key)
    : spec_(spec), bank_key_(bank_key) {
    auto it = bundle.local_banks.find(bank_key);
    if (it == bundle.local_banks.end()) throw LookupError("MoeNet: unknown bank " + bank_key);
    params_ = bundle.shared_params;
    for (const auto& [id, t] : bundle.branch_gate_params) params_.emplace(id, t);
    for (const auto& [id, t] : it->second) params_.emplace(id, t);
}

namespace {
const TensorBuf& get(const ParamMap& m, const ParamId& id) {
    auto it = m.find(id);
    if (it == m.end()) throw LookupError("missing parameter " + id.str());
    return it->second;
}
}  // namespace

std::array<double, 2> MoeNet::branch_gate(const std::vector<double>& x) const {
    auto logits = dense_forward(x, get(params_, branch_gate_id("W")), get(params_, branch_gate_id("b")));
    auto w = softmax(logits);
    return {w[0], w[1]};
}

std::pair<std::vector<int>, std::vector<double>> MoeNet::layer_gate(int layer_idx,
                                                                    const std::vector<double>& h) const {
    auto logits = dense_forward(h, get(params_, shared_gate_id(layer_idx, "W")),
                                get(params_, shared_gate_id(layer_idx, "b")));
    auto scores = softmax(logits);
    return {select_top_k(scores, spec_.top_k), scores};
}

void MoeNet::forward_cached(const std::vector<double>& x, Cache& c) const {
    if (static_cast<int>(x.size()) != spec_.n_features) {
        throw ConfigError("forward: input has wrong feature count");
    }
    c.x = x;
    c.branch_logits = dense_forward(x, get(params_, branch_gate_id("W")), get(params_, branch_gate_id("b")));
    auto bw = softmax(c.branch_logits);
    c.branch_weights = {bw[0], bw[1]};

    c.layers.assign(static_cast<size_t>(spec_.shared_layers), {});
    std::vector<double> h = x;
    for (int l = 0; l < spec_.shared_layers; ++l) {
        auto& L = c.layers[static_cast<size_t>(l)];
        L.input = h;
        L.gate_logits = dense_forward(h, get(params_, shared_gate_id(l, "W")),
                                      get(params_, shared_gate_id(l, "b")));
        L.scores = softmax(L.gate_logits);
        L.selection = select_top_k(L.scores, spec_.top_k);

        double sel_sum = 0.0;
        for (int e = 0; e < spec_.experts_per_layer; ++e) {
            if (L.selection[static_cast<size_t>(e)]) sel_sum += L.scores[static_cast<size_t>(e)];
        }
        L.alphas.assign(static_cast<size_t>(spec_.experts_per_layer), 0.0);
        L.expert_out.assign(static_cast<size_t>(spec_.experts_per_layer), {});
        L.output.assign(static_cast<size_t>(spec_.hidden_dim), 0.0);
        for (int e = 0; e < spec_.experts_per_layer; ++e) {
            if (!L.selection[static_cast<size_t>(e)]) continue;
            double alpha = L.scores[static_cast<size_t>(e)] / sel_sum;
            L.alphas[static_cast<size_t>(e)] = alpha;
            auto act = dense_forward(h, get(params_, shared_expert_id(l, e, "W")),
                                     get(params_, shared_expert_id(l, e, "b")));
            for (double& v : act) v = std::tanh(v);
            for (int j = 0; j < spec_.hidden_dim; ++j) {
                L.output[static_cast<size_t>(j)] += alpha * act[static_cast<size_t>(j)];
            }
            L.expert_out[static_cast<size_t>(e)] = std::move(act);
        }
        h = L.output;
    }
    c.shared_logits = dense_forward(h, get(params_, shared_head_id("W")), get(params_, shared_head_id("b")));

    c.local_acts.assign(static_cast<size_t>(spec_.local_layers), {});
    std::vector<double> g = x;
    for (int m = 0; m < spec_.local_layers; ++m) {
        auto act = dense_forward(g, get(params_, bank_layer_id(bank_key_, m, "W")),
                                 get(params_, bank_layer_id(bank_key_, m, "b")));
        for (double& v : act) v = std::tanh(v);
        c.local_acts[static_cast<size_t>(m)] = act;
        g = std::move(act);
    }
    c.local_logits = dense_forward(g, get(params_, bank_head_id(bank_key_, "W")),
                                   get(params_, bank_head_id(bank_key_, "b")));

    c.logits.assign(static_cast<size_t>(spec_.n_classes), 0.0);
    for (int j = 0; j < spec_.n_classes; ++j) {
        c.logits[static_cast<size_t>(j)] = c.branch_weights[0] * c.shared_logits[static_cast<size_t>(j)] +
                                           c.branch_weights[1] * c.local_logits[static_cast<size_t>(j)];
    }
    c.probs = softmax(c.logits);

#ifndef NDEBUG
    assert(std::abs(c.branch_weights[0] + c.branch_weights[1] - 1.0) < 1e-9);
    for (const auto& L : c.layers) {
        int ones = 0;
        for (int s : L.selection) ones += s;
        assert(ones == spec_.top_k);
    }
#endif
}

std::pair<std::vector<double>, GateTrace> MoeNet::forward(const std::vector<double>& x) const {
    Cache c;
    forward_cached(x, c);
    GateTrace trace;
    trace.branch_weights = c.branch_weights;
    trace.layer_selections.reserve(c.layers.size());
    trace.layer_scores.reserve(c.layers.size());
    for (const auto& L : c.layers) {
        trace.layer_selections.push_back(L.selection);
        trace.layer_scores.push_back(L.scores);
    }
    return {c.probs, std::move(trace)};
}

std::vector<double> MoeNet::predict(const std::vector<double>& x) const {
    Cache c;
    forward_cached(x, c);
    return c.probs;
}

ParamMap MoeNet::gradients(const Dataset& batch, const ParamIdSet& mask) const {
    if (batch.empty()) throw ProtocolError("gradients: empty batch");

    // Accumulate full gradients, filter by mask at the end.
    ParamMap acc;
    for (const auto& [id, t] : params_) {
        if (mask.count(id)) acc.emplace(id, TensorBuf::zeros(t.shape));
    }
    auto add_vec = [](TensorBuf& t, const std::vector<double>& v) {
        for (size_t i = 0; i < v.size(); ++i) t.data[i] += v[i];
    };
    auto add_outer = [](TensorBuf& t, const std::vector<double>& a, const std::vector<double>& b) {
        int64_t n_out = t.shape[1];
        for (size_t i = 0; i < a.size(); ++i) {
            if (a[i] == 0.0) continue;
            double ai = a[i];
            double* row = &t.data[i * static_cast<size_t>(n_out)];
            for (size_t j = 0; j < b.size(); ++j) row[j] += ai * b[j];
        }
    };
    auto grad_at = [&acc](const ParamId& id) -> TensorBuf* {
        auto it = acc.find(id);
        return it == acc.end() ? nullptr : &it->second;
    };
    // matvec: out[i] = sum_j W[i,j] * v[j]
    auto matvec = [](const TensorBuf& W, const std::vector<double>& v) {
        std::vector<double> out(static_cast<size_t>(W.shape[0]), 0.0);
        int64_t n_out = W.shape[1];
        for (int64_t i = 0; i < W.shape[0]; ++i) {
            const double* row = &W.data[static_cast<size_t>(i * n_out)];
            double s = 0.0;
            for (int64_t j = 0; j < n_out; ++j) s += row[j] * v[static_cast<size_t>(j)];
            out[static_cast<size_t>(i)] = s;
        }
        return out;
    };
    // Jacobian-vector product of softmax at output p with upstream dp.
    auto softmax_backward = [](const std::vector<double>& p, const std::vector<double>& dp) {
        double s = 0.0;
        for (size_t i = 0; i < p.size(); ++i) s += p[i] * dp[i];
        std::vector<double> dz(p.size());
        for (size_t i = 0; i < p.size(); ++i) dz[i] = p[i] * (dp[i] - s);
        return dz;
    };

    Cache c;
    for (const auto& sample : batch) {
        forward_cached(sample.features, c);

        // Fused softmax + cross-entropy at the output.
        std::vector<double> dlogits = c.probs;
        dlogits[static_cast<size_t>(sample.label)] -= 1.0;

        std::vector<double> d_shared_logits(dlogits.size());
        std::vector<double> d_local_logits(dlogits.size());
        for (size_t j = 0; j < dlogits.size(); ++j) {
            d_shared_logits[j] = c.branch_weights[0] * dlogits[j];
            d_local_logits[j] = c.branch_weights[1] * dlogits[j];
        }

        // Branch gate: logits combine as w_s * S + w_l * L.
        std::vector<double> dbw(2, 0.0);
        for (size_t j = 0; j < dlogits.size(); ++j) {
            dbw[0] += c.shared_logits[j] * dlogits[j];
            dbw[1] += c.local_logits[j] * dlogits[j];
        }
        std::vector<double> bw_vec{c.branch_weights[0], c.branch_weights[1]};
        auto dq = softmax_backward(bw_vec, dbw);
        if (auto* g = grad_at(branch_gate_id("W"))) add_outer(*g, c.x, dq);
        if (auto* g = grad_at(branch_gate_id("b"))) add_vec(*g, dq);

        // Local branch.
        {
            const auto& last = spec_.local_layers > 0
                                   ? c.local_acts[static_cast<size_t>(spec_.local_layers - 1)]
                                   : c.x;
            if (auto* g = grad_at(bank_head_id(bank_key_, "W"))) add_outer(*g, last, d_local_logits);
            if (auto* g = grad_at(bank_head_id(bank_key_, "b"))) add_vec(*g, d_local_logits);
            std::vector<double> dg = matvec(get(params_, bank_head_id(bank_key_, "W")), d_local_logits);
            for (int m = spec_.local_layers - 1; m >= 0; --m) {
                const auto& act = c.local_acts[static_cast<size_t>(m)];
                std::vector<double> da(act.size());
                for (size_t i = 0; i < act.size(); ++i) da[i] = dg[i] * (1.0 - act[i] * act[i]);
                const auto& input = (m == 0) ? c.x : c.local_acts[static_cast<size_t>(m - 1)];
                if (auto* g = grad_at(bank_layer_id(bank_key_, m, "W"))) add_outer(*g, input, da);
                if (auto* g = grad_at(bank_layer_id(bank_key_, m, "b"))) add_vec(*g, da);
                if (m > 0) dg = matvec(get(params_, bank_layer_id(bank_key_, m, "W")), da);
            }
        }

        // Shared branch head.
        const auto& top = c.layers.back().output;
        if (auto* g = grad_at(shared_head_id("W"))) add_outer(*g, top, d_shared_logits);
        if (auto* g = grad_at(shared_head_id("b"))) add_vec(*g, d_shared_logits);
        std::vector<double> dh = matvec(get(params_, shared_head_id("W")), d_shared_logits);

        // Shared MoE layers, reversed. Selection is fixed; gradients flow
        // through selected experts and the renormalized selected scores.
        for (int l = spec_.shared_layers - 1; l >= 0; --l) {
            const auto& L = c.layers[static_cast<size_t>(l)];
            std::vector<double> dh_in(L.input.size(), 0.0);

            // d alpha_e = <expert_out_e, dh>; alpha over the selected set is
            // softmax of the selected logits, so non-selected logits get 0.
            double s = 0.0;
            std::vector<double> dalpha(static_cast<size_t>(spec_.experts_per_layer), 0.0);
            for (int e = 0; e < spec_.experts_per_layer; ++e) {
                if (!L.selection[static_cast<size_t>(e)]) continue;
                double d = 0.0;
                const auto& u = L.expert_out[static_cast<size_t>(e)];
                for (size_t j = 0; j < u.size(); ++j) d += u[j] * dh[j];
                dalpha[static_cast<size_t>(e)] = d;
                s += L.alphas[static_cast<size_t>(e)] * d;
            }
            std::vector<double> dz(static_cast<size_t>(spec_.experts_per_layer), 0.0);
            for (int e = 0; e < spec_.experts_per_layer; ++e) {
                if (!L.selection[static_cast<size_t>(e)]) continue;
                dz[static_cast<size_t>(e)] =
                    L.alphas[static_cast<size_t>(e)] * (dalpha[static_cast<size_t>(e)] - s);
            }
            if (auto* g = grad_at(shared_gate_id(l, "W"))) add_outer(*g, L.input, dz);
            if (auto* g = grad_at(shared_gate_id(l, "b"))) add_vec(*g, dz);
            {
                auto v = matvec(get(params_, shared_gate_id(l, "W")), dz);
                for (size_t i = 0; i < dh_in.size(); ++i) dh_in[i] += v[i];
            }

            for (int e = 0; e < spec_.experts_per_layer; ++e) {
                if (!L.selection[static_cast<size_t>(e)]) continue;
                const auto& u = L.expert_out[static_cast<size_t>(e)];
                double alpha = L.alphas[static_cast<size_t>(e)];
                std::vector<double> da(u.size());
                for (size_t j = 0; j < u.size(); ++j) {
                    da[j] = alpha * dh[j] * (1.0 - u[j] * u[j]);
                }
                if (auto* g = grad_at(shared_expert_id(l, e, "W"))) add_outer(*g, L.input, da);
                if (auto* g = grad_at(shared_expert_id(l, e, "b"))) add_vec(*g, da);
                auto v = matvec(get(params_, shared_expert_id(l, e, "W")), da);
                for (size_t i = 0; i < dh_in.size(); ++i) dh_in[i] += v[i];
            }
            dh = std::move(dh_in);
        }
    }

    double inv_n = 1.0 / static_cast<double>(batch.size());
    for (auto& [id, t] : acc) {
        for (double& v : t.data) v *= inv_n;
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string bundle_to_json(const ModelBundle& bundle) {
    using nlohmann::ordered_json;
    ordered_json spec;
    spec["n_features"] = bundle.spec.n_features;
    spec["n_classes"] = bundle.spec.n_classes;
    spec["shared_layers"] = bundle.spec.shared_layers;
    spec["experts_per_layer"] = bundle.spec.experts_per_layer;
    spec["top_k"] = bundle.spec.top_k;
    spec["hidden_dim"] = bundle.spec.hidden_dim;
    spec["local_layers"] = bundle.spec.local_layers;
    spec["local_hidden_dim"] = bundle.spec.local_hidden_dim;

    struct Row {
        const ParamId* id;
        const TensorBuf* tensor;
        std::string partition;
        std::string bank;
    };
    std::vector<Row> rows;
    for (const auto& [id, t] : bundle.shared_params) rows.push_back({&id, &t, "shared", ""});
    for (const auto& [id, t] : bundle.branch_gate_params) rows.push_back({&id, &t, "branch_gate", ""});
    for (const auto& [key, bank] : bundle.local_banks) {
        for (const auto& [id, t] : bank) rows.push_back({&id, &t, "local", key});
    }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return *a.id < *b.id; });

    ordered_json records = ordered_json::array();
    for (const auto& r : rows) {
        ordered_json rec;
        rec["module_path"] = r.id->module_path;
        rec["tensor_name"] = r.id->tensor_name;
        rec["partition"] = r.partition;
        if (!r.bank.empty()) rec["bank"] = r.bank;
        rec["shape"] = r.tensor->shape;
        rec["values"] = r.tensor->data;
        records.push_back(std::move(rec));
    }
    ordered_json out;
    out["spec"] = std::move(spec);
    out["records"] = std::move(records);
    return out.dump(2);
}

ModelBundle bundle_from_json(const std::string& text) {
    using nlohmann::json;
    json j = json::parse(text);
    ModelBundle b;
    const auto& s = j.at("spec");
    b.spec.n_features = s.at("n_features").get<int>();
    b.spec.n_classes = s.at("n_classes").get<int>();
    b.spec.shared_layers = s.at("shared_layers").get<int>();
    b.spec.experts_per_layer = s.at("experts_per_layer").get<int>();
    b.spec.top_k = s.at("top_k").get<int>();
    b.spec.hidden_dim = s.at("hidden_dim").get<int>();
    b.spec.local_layers = s.at("local_layers").get<int>();
    b.spec.local_hidden_dim = s.at("local_hidden_dim").get<int>();
    b.spec.validate();

    for (const auto& rec : j.at("records")) {
        ParamId id{rec.at("module_path").get<std::string>(), rec.at("tensor_name").get<std::string>()};
        TensorBuf t;
        t.shape = rec.at("shape").get<std::vector<int64_t>>();
        t.data = rec.at("values").get<std::vector<double>>();
        if (t.numel() != static_cast<int64_t>(t.data.size())) {
            throw LoadError("checkpoint record " + id.str() + ": shape does not match value count");
        }
        std::string part = rec.at("partition").get<std::string>();
        if (part == "shared") {
            b.shared_params.emplace(std::move(id), std::move(t));
        } else if (part == "branch_gate") {
            b.branch_gate_params.emplace(std::move(id), std::move(t));
        } else if (part == "local") {
            b.local_banks[rec.at("bank").get<std::string>()].emplace(std::move(id), std::move(t));
        } else {
            throw LoadError("checkpoint record " + id.str() + ": unknown partition " + part);
        }
    }
    b.validate_partitions();
    return b;
}

void save_bundle(const ModelBundle& bundle, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot open checkpoint for writing: " + path);
    out << bundle_to_json(bundle);
}

ModelBundle load_bundle(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open checkpoint: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return bundle_from_json(ss.str());
}

}  // namespace driftguard
