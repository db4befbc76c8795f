#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "driftguard/common.hpp"

namespace driftguard {

// Identifies one tensor inside a model; unique within a ModelBundle.
struct ParamId {
    std::string module_path;
    std::string tensor_name;

    friend bool operator<(const ParamId& a, const ParamId& b) {
        if (a.module_path != b.module_path) return a.module_path < b.module_path;
        return a.tensor_name < b.tensor_name;
    }
    friend bool operator==(const ParamId& a, const ParamId& b) {
        return a.module_path == b.module_path && a.tensor_name == b.tensor_name;
    }
    std::string str() const { return module_path + "/" + tensor_name; }
};

// Row-major dense buffer. Matrices are stored as shape [n_in, n_out].
struct TensorBuf {
    std::vector<int64_t> shape;
    std::vector<double> data;

    static TensorBuf zeros(std::vector<int64_t> shape);
    int64_t numel() const;
    // 2-D accessors
    double& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    double at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
    void check_finite(const ParamId& id) const;

    friend bool operator==(const TensorBuf& a, const TensorBuf& b) {
        return a.shape == b.shape && a.data == b.data;
    }
};

using ParamMap = std::map<ParamId, TensorBuf>;
using ParamIdSet = std::set<ParamId>;

struct LabeledSample {
    std::vector<double> features;
    int label = 0;
    int domain = -1;  // provenance tag, not visible to models
};
using Dataset = std::vector<LabeledSample>;

struct TrainSettings {
    int max_epochs = 20;
    int batch_size = 8;
    double learning_rate = 0.001;
    int patience = 5;
    int rounds = 5;  // federated aggregation rounds R

    void validate() const;
};

// Minimal interface a trainable model exposes to the local-training loop.
// Backprop is implemented per model (fixed layer types), not via autodiff.
class DifferentiableModel {
  public:
    virtual ~DifferentiableModel() = default;
    virtual ParamMap& params() = 0;
    virtual const ParamMap& params() const = 0;
    // Class probability vector for one input.
    virtual std::vector<double> predict(const std::vector<double>& x) const = 0;
    // Gradient of the mean batch loss w.r.t. each masked parameter.
    // Unmasked parameters must be absent from the result.
    virtual ParamMap gradients(const Dataset& batch, const ParamIdSet& mask) const = 0;
    // Mean cross-entropy over the batch.
    virtual double loss(const Dataset& batch) const;
};

// out[j] = sum_i x[i]*W[i,j] + b[j]
std::vector<double> dense_forward(const std::vector<double>& x, const TensorBuf& W, const TensorBuf& b);

// Numerically stable softmax (max subtraction); sums to 1.
std::vector<double> softmax(const std::vector<double>& v);

// -ln(probs[label]); probabilities clamped at 1e-12.
double cross_entropy(const std::vector<double>& probs, int label);

// Top-1 class; ties resolved to the lowest class index.
int argmax_class(const std::vector<double>& probs);

double dataset_accuracy(const DifferentiableModel& model, const Dataset& data);

// Validates the mask against the model and delegates to model.gradients().
ParamMap backward(const DifferentiableModel& model, const Dataset& batch, const ParamIdSet& mask);

// p <- p - lr * g for every key in grads; other params untouched.
void sgd_step(ParamMap& params, const ParamMap& grads, double lr);

struct TrainResult {
    int epochs_run = 0;
    double best_val_acc = 0.0;
};

// Runs up to max_epochs full passes in stored batch order; stops once the
// validation accuracy has not improved for `patience` consecutive epochs.
// Leaves the model at the best-validation snapshot (ties keep the earliest).
TrainResult train_local(DifferentiableModel& model, const Dataset& train, const Dataset& val,
                        const TrainSettings& settings, const ParamIdSet& mask);

// Copy of the masked subset of params.
ParamMap extract_params(const ParamMap& params, const ParamIdSet& mask);

}  // namespace driftguard
