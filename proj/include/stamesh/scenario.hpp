#pragma once

#include <string>
#include <vector>

#include "stamesh/runtime.hpp"

namespace stamesh {

enum class ConflictStructure : uint8_t { Disjoint = 0, Chained, AllConflict };
enum class ExperimentKind : uint8_t {
    ClientDelay = 0,
    SyncDelay,
    Load,
    KgroupMicro,
    Availability,
    BandwidthBaseline,
    QuorumDistance,
};
const char* to_string(ConflictStructure c);
const char* to_string(ExperimentKind e);
ConflictStructure conflict_from_string(const std::string& s);
ExperimentKind experiment_from_string(const std::string& s);

struct WorkloadSpec {
    int routines = 4;
    int devices_per_routine = 5;  // command-set size
    ConflictStructure conflict = ConflictStructure::Disjoint;
    Time first_trigger = 60.0;
    Time trigger_interval = 250.0;  // between rounds
    int rounds = 2;
    Time stagger = 20.0;       // between routines inside a round
    bool simultaneous = false;  // fire a round's routines at the same instant
};

struct ChurnSpec {
    double smart_fraction = 0.0;  // fraction of smart nodes that churn
    Time window_begin = 0.0;      // both 0 -> [0.25, 0.7] of the horizon
    Time window_end = 0.0;
    bool rejoin = true;
    Time down_time = 120.0;
    int per_group_cap = -1;      // max kills per epoch-0 group; -1 = unlimited
    bool target_leaders = false;  // aim kills at group leaders shortly after triggers
    std::vector<std::pair<Time, int>> domain_failures;  // whole power domains going out
    std::vector<ChurnEvent> extra;
};

struct Scenario {
    std::string name = "scenario";
    Config cfg;
    WorkloadSpec workload;
    ChurnSpec churn;
    ExperimentKind experiment = ExperimentKind::ClientDelay;
    Time horizon = 1500.0;
};

Scenario scenario_from_json(const std::string& text);
std::string scenario_to_json(const Scenario& s);
Scenario load_scenario_file(const std::string& path);

// Deterministic workload and churn generation (pure functions of the seed).
Workload build_workload(const Scenario& s, const Topology& topo, const ClusterSet& clusters,
                        uint64_t seed);
std::vector<ChurnEvent> build_churn(const Scenario& s, const Topology& topo,
                                    const ClusterSet& clusters, const Workload& wl, uint64_t seed);

struct TrialResult {
    uint64_t seed = 0;
    Trace trace;
    TrialCounters counters;
};

using MonitorFactory = std::function<std::vector<SimHarness::MonitorFn>(SimHarness&)>;

TrialResult run_trial(const Scenario& s, uint64_t seed, const MonitorFactory& monitors = {});

// Seed sweep; trials run in parallel, results ordered by the seeds vector.
std::vector<TrialResult> run_trials(const Scenario& s, const std::vector<uint64_t>& seeds, int jobs,
                                    const MonitorFactory& monitors = {});

}  // namespace stamesh
