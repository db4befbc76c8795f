#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "driftguard/device_fleet.hpp"

namespace driftguard {

struct ClusterSettings {
    double distance_threshold = 0.3;
    int min_group_size = 2;
    void validate() const;
};

struct Grouping {
    std::vector<std::vector<int>> groups;   // device ids, each sorted; groups ordered by min id
    std::vector<GatingMatrix> centroids;    // mean gating matrix per group
    std::vector<std::string> bank_assignment;  // one bank/replica key per group (filled by assign_*)

    int group_of(int device_id) const;  // -1 when absent
};

// Entry-normalized Frobenius distance: ||A - B||_F / sqrt(#entries).
double matrix_distance(const GatingMatrix& a, const GatingMatrix& b);

// Average-linkage agglomeration over observation gating matrices. Merging
// continues while the minimum cluster distance is strictly below the
// threshold; ties pick the pair with the lexicographically smallest
// (min device id, other min device id).
Grouping agglomerate(const std::vector<Observation>& observations, const ClusterSettings& settings);

// Repeatedly merges the smallest undersized group (ties: lowest min device
// id) into its average-linkage-nearest group until all groups reach
// min_group_size, or a single group remains.
Grouping enforce_min_size(Grouping grouping, const std::vector<Observation>& observations,
                          const ClusterSettings& settings);

Grouping cluster_devices(const std::vector<Observation>& observations, const ClusterSettings& settings);

// Group-to-bank continuity: each new group inherits the bank of the previous
// group with the nearest centroid; contested banks go to the larger group and
// the others receive clones under fresh keys. At the first step every group
// receives a clone of seed_bank. Unassigned banks are dropped from the bundle.
void assign_banks(Grouping& grouping, const Grouping* previous, ModelBundle& bundle,
                  uint64_t& bank_counter, const std::string& seed_bank = "bank0");

// Same continuity rule for whole-model replicas (cluster-based baseline).
void assign_replicas(Grouping& grouping, const Grouping* previous,
                     std::map<std::string, ModelBundle>& replicas, uint64_t& replica_counter,
                     const std::string& seed_replica = "replica0");

}  // namespace driftguard
