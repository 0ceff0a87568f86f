#pragma once

#include <map>
#include <span>
#include <vector>

#include "stamesh/model.hpp"

namespace stamesh {

// Consistent-hash sortition: any node can rank all smart nodes for an entity
// and epoch locally, with zero message exchange.
uint64_t sortition_hash(Epoch epoch, NodeId node, EntityKey entity);

struct HashRank {
    uint64_t hash;
    NodeId id;
    friend auto operator<=>(const HashRank&, const HashRank&) = default;
};

// The k alive smart nodes with smallest (hash, id), ascending; position 0 is
// the leader candidate. Throws InsufficientSmartNodes.
std::vector<NodeId> sortition_select(const MembershipView& view, EntityKey entity, Epoch epoch, int k);

// --- Locality-sensitive hashing ---------------------------------------------

// floor((a.v + b) / r); throws InvalidParameter when r <= 0.
int64_t lsh_scalar(std::span<const double> v, std::span<const double> a, double b, double r);

using BucketKey = std::vector<int64_t>;  // m concatenated hashes

struct LshParams {
    int m = 2;
    int l = 2;
    double r = 4.0;
    // a[table][hash] is a dim-length Gaussian vector; b[table][hash] uniform in [0, r]
    std::vector<std::vector<std::vector<double>>> a;
    std::vector<std::vector<double>> b;

    static LshParams derive(uint64_t global_seed, Epoch epoch, int m, int l, double r, int dim);
};

// l bucket keys, one per table.
std::vector<BucketKey> lsh_buckets(std::span<const double> augmented, const LshParams& params);

// --- Device clustering -------------------------------------------------------

struct ClusterSet {
    int count = 0;
    std::vector<int> assignment;   // device id -> cluster index
    std::vector<NodeId> centers;   // cluster index -> representative device
    std::vector<std::vector<double>> centroids;  // cluster index -> mean location
};

// Lloyd's k-means over device locations, cluster count = ceil(N / devices_per_kgroup),
// seeded init; each cluster's center is a seeded-random member device.
ClusterSet cluster_devices(const std::vector<std::vector<double>>& locations, int devices_per_kgroup,
                           uint64_t seed);

// --- Committee selection ------------------------------------------------------

struct Committee {
    std::vector<NodeId> members;     // ascending (sortition hash, id)
    std::vector<NodeId> leadership;  // election priority order; [0] = expected leader
    NodeId leader = kNoNode;
    int stage1_candidates = 0;       // bucket-sharing candidates before truncation (LSH only)
};

// Everything an epoch's selections depend on. Built deterministically from the
// membership snapshot at the epoch boundary; two nodes with identical views
// build identical bases.
struct SelectBasis {
    MembershipView view;
    Epoch epoch = 0;
    uint64_t global_seed = 0;
    int f = 0;
    SelectionPolicy policy = SelectionPolicy::Random;
    const std::vector<std::vector<double>>* locations = nullptr;  // by node id
    const ClusterSet* clusters = nullptr;
    int borrow_neighbor_clusters = 2;
    LshParams params;
    std::vector<std::vector<double>> augmented;        // by node id
    std::vector<std::vector<BucketKey>> node_buckets;  // by node id (alive smart only; empty otherwise)
};

// prev_monitored_avg: per smart node, average location of the devices it
// monitored in the previous epoch (absent on the first epoch or for nodes
// that monitored nothing -> own location is appended instead).
SelectBasis make_select_basis(const MembershipView& view, Epoch epoch, uint64_t global_seed,
                              const Config& cfg, const std::vector<std::vector<double>>& locations,
                              const ClusterSet& clusters,
                              const std::map<NodeId, std::vector<double>>& prev_monitored_avg);

// Committee for an entity under the basis' policy. RANDOM -> pure sortition;
// LSH_MIX -> f+1 bucket-sharing locals nearest the entity's center plus f
// uniform-random members, leader = lowest sortition hash among the locals;
// CENTRAL -> the single lowest-id alive smart node (baseline mode).
Committee select_committee(const SelectBasis& basis, const EntityId& entity, int k);

// Replacement recruitment order: alive smart nodes not in `exclude`, by
// ascending (sortition hash, id).
std::vector<NodeId> recruitment_order(const MembershipView& view, EntityKey entity, Epoch epoch,
                                      const std::vector<NodeId>& exclude);

}  // namespace stamesh
