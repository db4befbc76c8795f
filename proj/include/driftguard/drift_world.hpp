#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "driftguard/micro_learner.hpp"
#include "driftguard/rng.hpp"

namespace driftguard {

struct DataCounts {
    int train_per_step = 20;
    int val_per_step = 10;
    void validate() const;
};

struct DriftSettings {
    double rate_lo = 0.10;  // fraction of devices drifting per step, lower bound
    double rate_hi = 0.15;
    double p_instantaneous = 0.5;
    int len_min = 2;  // incremental drift length range, capped at ceil(0.15 * T)
    int len_max = 4;
    void validate() const;
};

enum class DriftPattern { Instantaneous, Incremental };

struct DriftEvent {
    int device = 0;
    int start_step = 0;
    DriftPattern pattern = DriftPattern::Instantaneous;
    int length = 1;  // 1 for instantaneous
    int target_domain = 0;
};

// A scheduled event plus its frozen base mixture once it activates.
struct ActiveDrift {
    DriftEvent event;
    bool started = false;
    std::map<int, double> base;
};

struct DeviceDistribution {
    std::map<int, double> mixture;  // domain -> weight, sums to 1
    std::vector<ActiveDrift> pending;

    int dominant_domain() const;  // ties resolve to the lowest domain id
    bool stable() const { return pending.empty(); }
    void check_valid() const;
};

struct StepData {
    Dataset train;
    Dataset val;
};

// Source of labeled samples per domain.
class World {
  public:
    virtual ~World() = default;
    virtual int n_domains() const = 0;
    virtual int n_features() const = 0;
    virtual int n_classes() const = 0;
    virtual LabeledSample draw(int domain, int device, Rng& rng) = 0;
};

struct SyntheticWorldSpec {
    int n_domains = 3;
    int n_features = 16;
    int n_classes = 4;
    double class_mean_scale = 2.0;
    double noise_sigma = 0.35;
    double domain_shift_scale = 1.0;
    void validate() const;
};

// Class-conditional Gaussians pushed through a per-domain rotation + shift,
// so domains share class structure but occupy conflicting regions.
class SyntheticWorld : public World {
  public:
    SyntheticWorld(const SyntheticWorldSpec& spec, uint64_t master_seed);

    int n_domains() const override { return spec_.n_domains; }
    int n_features() const override { return spec_.n_features; }
    int n_classes() const override { return spec_.n_classes; }
    LabeledSample draw(int domain, int device, Rng& rng) override;

  private:
    struct Domain {
        std::vector<std::vector<double>> rotation;  // n_features x n_features
        std::vector<double> shift;
    };
    SyntheticWorldSpec spec_;
    std::vector<std::vector<double>> class_means_;  // n_classes x n_features
    std::vector<Domain> domains_;
};

// Pool-backed world loaded from a labeled-vector file. Each device draws
// without replacement from per-device shuffled copies of the domain pools,
// reshuffling when a pool is exhausted.
class ExternalWorld : public World {
  public:
    ExternalWorld(std::vector<std::vector<LabeledSample>> pools, int n_features, int n_classes,
                  uint64_t master_seed, int n_devices);

    int n_domains() const override { return static_cast<int>(pools_.size()); }
    int n_features() const override { return n_features_; }
    int n_classes() const override { return n_classes_; }
    LabeledSample draw(int domain, int device, Rng& rng) override;

    const std::vector<std::vector<LabeledSample>>& pools() const { return pools_; }

  private:
    struct Cursor {
        std::vector<int> order;
        size_t pos = 0;
        uint64_t epoch = 0;
    };
    std::vector<std::vector<LabeledSample>> pools_;
    int n_features_;
    int n_classes_;
    uint64_t master_seed_;
    std::vector<std::vector<Cursor>> cursors_;  // [device][domain]
};

// Parses the labeled-vector format:
//   #features=N domains=M classes=C
//   domain_id,class_id,f1,...,fN
std::unique_ptr<ExternalWorld> load_external(const std::string& path, uint64_t master_seed, int n_devices);

// Picks the per-step drifting devices and their event parameters.
// No events before step 2 (step 1 is initial training).
std::vector<DriftEvent> schedule_events(int step, int fleet_size, int total_steps, int n_domains,
                                        const DriftSettings& settings,
                                        const std::vector<DeviceDistribution>& distributions, Rng& rng);

// Applies active events in trigger order. A newly activating event freezes
// the current mixture as its base and supersedes older active events.
void update_distribution(DeviceDistribution& dist, int step);

StepData sample_step(World& world, const DeviceDistribution& dist, int device, const DataCounts& counts,
                     Rng& rng);

}  // namespace driftguard
