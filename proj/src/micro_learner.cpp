#include "driftguard/micro_learner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace driftguard {

TensorBuf TensorBuf::zeros(std::vector<int64_t> shape) {
    TensorBuf t;
    t.shape = std::move(shape);
    int64_t n = 1;
    for (int64_t d : t.shape) n *= d;
    t.data.assign(static_cast<size_t>(n), 0.0);
    return t;
}

int64_t TensorBuf::numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

void TensorBuf::check_finite(const ParamId& id) const {
    for (double v : data) {
        if (!std::isfinite(v)) {
            throw ProtocolError("non-finite value in tensor " + id.str());
        }
    }
}

void TrainSettings::validate() const {
    if (max_epochs < 1) throw ConfigError("train.max_epochs must be positive");
    if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
    if (patience < 1) throw ConfigError("train.patience must be positive");
    if (patience > max_epochs) throw ConfigError("train.patience must not exceed train.max_epochs");
    if (rounds < 1) throw ConfigError("train.rounds must be positive");
}

std::vector<double> dense_forward(const std::vector<double>& x, const TensorBuf& W, const TensorBuf& b) {
    if (W.shape.size() != 2) throw ConfigError("dense_forward: weight must be 2-D");
    int64_t n_in = W.shape[0], n_out = W.shape[1];
    if (static_cast<int64_t>(x.size()) != n_in) {
        throw ConfigError("dense_forward: input size " + std::to_string(x.size()) +
                          " does not match weight rows " + std::to_string(n_in));
    }
    if (b.numel() != n_out) throw ConfigError("dense_forward: bias size does not match weight columns");
    std::vector<double> out(b.data.begin(), b.data.end());
    for (int64_t i = 0; i < n_in; ++i) {
        double xi = x[static_cast<size_t>(i)];
        if (xi == 0.0) continue;
        const double* row = &W.data[static_cast<size_t>(i * n_out)];
        for (int64_t j = 0; j < n_out; ++j) out[static_cast<size_t>(j)] += xi * row[j];
    }
    return out;
}

std::vector<double> softmax(const std::vector<double>& v) {
    double m = *std::max_element(v.begin(), v.end());
    std::vector<double> out(v.size());
    double sum = 0.0;
    for (size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - m);
        sum += out[i];
    }
    for (double& o : out) o /= sum;
    return out;
}

double cross_entropy(const std::vector<double>& probs, int label) {
    if (label < 0 || static_cast<size_t>(label) >= probs.size()) {
        throw ProtocolError("cross_entropy: label out of range");
    }
    double p = std::max(probs[static_cast<size_t>(label)], 1e-12);
    return -std::log(p);
}

int argmax_class(const std::vector<double>& probs) {
    int best = 0;
    for (size_t i = 1; i < probs.size(); ++i) {
        if (probs[i] > probs[static_cast<size_t>(best)]) best = static_cast<int>(i);
    }
    return best;
}

double DifferentiableModel::loss(const Dataset& batch) const {
    if (batch.empty()) throw ProtocolError("loss: empty batch");
    double total = 0.0;
    for (const auto& s : batch) total += cross_entropy(predict(s.features), s.label);
    return total / static_cast<double>(batch.size());
}

double dataset_accuracy(const DifferentiableModel& model, const Dataset& data) {
    if (data.empty()) throw ProtocolError("dataset_accuracy: empty dataset");
    int correct = 0;
    for (const auto& s : data) {
        if (argmax_class(model.predict(s.features)) == s.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

ParamMap backward(const DifferentiableModel& model, const Dataset& batch, const ParamIdSet& mask) {
    if (mask.empty()) throw PolicyError("backward: empty parameter mask, nothing to train");
    for (const auto& id : mask) {
        if (model.params().find(id) == model.params().end()) {
            throw PolicyError("backward: mask names unknown parameter " + id.str());
        }
    }
    return model.gradients(batch, mask);
}

void sgd_step(ParamMap& params, const ParamMap& grads, double lr) {
    for (const auto& [id, g] : grads) {
        auto it = params.find(id);
        if (it == params.end()) throw ProtocolError("sgd_step: gradient for unknown parameter " + id.str());
        TensorBuf& p = it->second;
        if (p.shape != g.shape) throw ProtocolError("sgd_step: shape mismatch for " + id.str());
        for (size_t i = 0; i < p.data.size(); ++i) p.data[i] -= lr * g.data[i];
    }
}

ParamMap extract_params(const ParamMap& params, const ParamIdSet& mask) {
    ParamMap out;
    for (const auto& id : mask) {
        auto it = params.find(id);
        if (it == params.end()) throw LookupError("extract_params: unknown parameter " + id.str());
        out.emplace(id, it->second);
    }
    return out;
}

TrainResult train_local(DifferentiableModel& model, const Dataset& train, const Dataset& val,
                        const TrainSettings& settings, const ParamIdSet& mask) {
    settings.validate();
    if (train.empty() || val.empty()) throw ProtocolError("train_local: train and val sets must be non-empty");
    if (mask.empty()) throw PolicyError("train_local: empty parameter mask, nothing to train");
    for (const auto& id : mask) {
        if (model.params().find(id) == model.params().end()) {
            throw PolicyError("train_local: mask names unknown parameter " + id.str());
        }
    }

    ParamMap best = extract_params(model.params(), mask);
    double best_acc = -1.0;
    int epochs_run = 0;
    int since_improve = 0;
    size_t bs = static_cast<size_t>(settings.batch_size);

    for (int epoch = 1; epoch <= settings.max_epochs; ++epoch) {
        for (size_t off = 0; off < train.size(); off += bs) {
            size_t end = std::min(off + bs, train.size());
            Dataset batch(train.begin() + static_cast<long>(off), train.begin() + static_cast<long>(end));
            ParamMap grads = backward(model, batch, mask);
            sgd_step(model.params(), grads, settings.learning_rate);
        }
        epochs_run = epoch;
        double acc = dataset_accuracy(model, val);
        if (acc > best_acc) {
            best_acc = acc;
            best = extract_params(model.params(), mask);
            since_improve = 0;
        } else if (++since_improve >= settings.patience) {
            break;
        }
    }

    for (auto& [id, t] : best) model.params()[id] = std::move(t);
    return TrainResult{epochs_run, best_acc};
}

}  // namespace driftguard
