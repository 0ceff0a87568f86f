#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "stamesh/availability.hpp"
#include "stamesh/metrics.hpp"
#include "stamesh/monitors.hpp"
#include "stamesh/scenario.hpp"

namespace stamesh {

// Selection-only sweep: committees are recomputed per epoch without running
// the event loop. Backs the locality/overlap/candidate studies.
struct SelectionStats {
    int n = 0;
    SelectionPolicy policy = SelectionPolicy::Random;
    double mean_quorum_distance = 0.0;
    double mean_overlap = 0.0;
    double mean_candidates = 0.0;
    size_t samples = 0;
};
SelectionStats selection_stats(Config cfg, int n_devices, int epochs,
                               const std::vector<uint64_t>& seeds);

// Generic scenario run: trials, aggregated metrics, CSV files under outdir.
MetricsReport run_scenario(const Scenario& s, const std::vector<uint64_t>& seeds, int jobs,
                           const std::string& outdir);

// Property verification across seeds: attaches the monitor suite to every
// trial and folds the verdicts.
VerifyReport verify_scenario(const Scenario& s, const std::vector<uint64_t>& seeds, int jobs);

// Figure-style sweeps; each writes one CSV under outdir and returns its rows.

struct DelayRow {
    int n = 0;
    LockingStrategy locking = LockingStrategy::Sla;
    double churn_fraction = 0.0;
    Dist client_delay;
    Dist sync_delay;
};
std::vector<DelayRow> experiment_client_delay(const Scenario& base, const std::vector<int>& n_sweep,
                                              const std::vector<uint64_t>& seeds, int jobs,
                                              const std::string& outdir);
std::vector<DelayRow> experiment_churn_delay(const Scenario& base,
                                             const std::vector<double>& churn_sweep,
                                             const std::vector<uint64_t>& seeds, int jobs,
                                             const std::string& outdir);

struct MicroRow {
    int k = 0;
    double churn_fraction = 0.0;
    Dist election_delay;      // time units, epoch-start elections
    Dist election_rtts;       // election delay / measured slowest round trip
    Dist election_fail_rtts;  // leader-failure elections / group RTT estimate
    Dist lock_service;        // uncontended request -> grant (quorum round trip)
    Dist lock_service_rtts;   // same, per serving-group RTT
    Dist state_transfer;
};
std::vector<MicroRow> experiment_kgroup_micro(const Scenario& base, const std::vector<int>& k_sweep,
                                              const std::vector<uint64_t>& seeds, int jobs,
                                              const std::string& outdir);
std::vector<MicroRow> experiment_kgroup_churn(const Scenario& base,
                                              const std::vector<double>& churn_sweep,
                                              const std::vector<uint64_t>& seeds, int jobs,
                                              const std::string& outdir);

struct SelectionRow {
    int n = 0;
    SelectionPolicy policy = SelectionPolicy::Random;
    int lsh_m = 2;
    SelectionStats stats;
};
std::vector<SelectionRow> experiment_quorum_distance(const Scenario& base,
                                                     const std::vector<int>& n_sweep,
                                                     const std::vector<uint64_t>& seeds,
                                                     const std::string& outdir);

struct BandwidthRow {
    bool centralized = false;
    int routines = 0;
    double max_node_bytes_per_unit = 0.0;  // peak per-node hop-by-hop load
    double max_node_e2e_per_unit = 0.0;
    double fg_share = 0.0;  // foreground fraction of total bytes
};
std::vector<BandwidthRow> experiment_bandwidth_baseline(const Scenario& base,
                                                        const std::vector<int>& routine_sweep,
                                                        const std::vector<uint64_t>& seeds, int jobs,
                                                        const std::string& outdir);

struct AvailabilityRow {
    int F = 0;
    double formula = 0.0;
    double single_group = 0.0;  // same parameters, G = 1
    double montecarlo = -1.0;   // -1 when not sampled at this point
    double stderr_ = 0.0;
};
std::vector<AvailabilityRow> experiment_availability(AvailabilityParams base, int f_max,
                                                     uint64_t mc_trials, uint64_t seed,
                                                     const std::string& outdir);

// Dispatcher used by the CLI `run` subcommand.
int run_experiment(const Scenario& s, const std::vector<uint64_t>& seeds, int jobs,
                   const std::string& outdir, std::ostream& log);

}  // namespace stamesh
