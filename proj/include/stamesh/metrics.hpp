#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "stamesh/trace.hpp"

namespace stamesh {

struct Dist {
    std::vector<double> samples;
    double median = 0.0;
    double mean = 0.0;
    double p90 = 0.0;

    void add(double v) { samples.push_back(v); }
    size_t n() const { return samples.size(); }
    void finalize();  // nearest-rank percentiles over a sorted copy
};

struct NodeAgg {
    int trial = 0;
    NodeId node = kNoNode;
    double leader_frac = 0.0;
    double member_frac = 0.0;
    double bytes_e2e = 0.0;
    double bytes_h2h = 0.0;
    double bytes_fg = 0.0;
    double bytes_bg = 0.0;
    int max_groups = 0;
    double avg_groups = 0.0;
};

struct MetricsReport {
    Dist client_delay;        // trigger-satisfying update arrival -> first command emission
    Dist sync_delay;          // unblocking release -> blocked routine's first command
    Dist election_delay;      // trigger -> all alive members acked the coordinator
    Dist election_rtts;       // election delay / slowest announce-ack round trip (no-failure)
    Dist election_fail_rtts;  // leader-failure elections, in group-RTT-estimate units
    Dist lock_service;        // uncontended lock request -> grant received back at the requester
    Dist lock_service_rtts;   // same, in units of the serving device group's RTT estimate
    Dist state_transfer;      // migration state request -> installed at the new leader
    Dist migration_gap;       // epoch boundary -> successor group active
    Dist quorum_distance;     // mean hops from leader to its f nearest members
    Dist kgroup_overlap;      // |old ∩ new| / k per entity per epoch pair
    Dist candidate_count;     // LSH stage-1 bucket-sharing candidates

    std::vector<NodeAgg> nodes;

    uint64_t commits = 0;
    uint64_t messages = 0;
    uint64_t drops = 0;
    uint64_t quorum_timeouts = 0;
    uint64_t group_dead = 0;
    double total_bytes = 0.0;

    void finalize();
};

// Folds trial traces (in seed order) into one report. Deterministic given the
// traces. Also usable on traces read back from disk.
MetricsReport aggregate(const std::vector<Trace>& traces);

// One CSV file per metric family under `dir` (created if needed), full sample
// dumps with a units header row; summary table to `out`.
void write_csv(const MetricsReport& report, const std::string& dir);
void print_summary(const MetricsReport& report, std::ostream& out);

std::string format_double(double v);  // fixed %.10g formatting for reproducible files

}  // namespace stamesh
