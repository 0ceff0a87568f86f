#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "stamesh/metrics.hpp"
#include "stamesh/monitors.hpp"
#include "stamesh/scenario.hpp"

using namespace stamesh;

namespace {

Scenario small_scenario(LockingStrategy locking = LockingStrategy::Sla,
                        ConflictStructure conflict = ConflictStructure::Disjoint) {
    Scenario s;
    s.cfg.n_devices = 40;
    s.cfg.smart_fraction = 0.5;
    s.cfg.f = 1;
    s.cfg.k = 3;
    s.cfg.devices_per_kgroup = 10;
    s.cfg.epoch_length = 400.0;
    s.cfg.monitor_period = 5.0;
    s.cfg.detection_delay = 2.0;
    s.cfg.locking = locking;
    s.cfg.selection_policy = SelectionPolicy::LshMix;
    s.cfg.topology = TopologyKind::Grid3d;
    s.cfg.command_duration = 1.0;
    s.workload.routines = 3;
    s.workload.devices_per_routine = 3;
    s.workload.conflict = conflict;
    s.workload.first_trigger = 60.0;
    s.workload.rounds = 1;
    s.workload.stagger = 30.0;
    s.horizon = 350.0;
    return s;
}

int count_kind(const Trace& t, Rec kind) {
    int n = 0;
    for (const auto& r : t)
        if (r.kind == kind) ++n;
    return n;
}

}  // namespace

TEST_CASE("disjoint SLA routines complete end to end") {
    Scenario s = small_scenario();
    MonitorSuite* suite_ptr = nullptr;
    std::unique_ptr<MonitorSuite> suite;
    auto factory = [&](SimHarness& h) {
        suite = std::make_unique<MonitorSuite>(h.workload(), true);
        suite_ptr = suite.get();
        return std::vector<SimHarness::MonitorFn>{suite->fn()};
    };
    TrialResult res = run_trial(s, 7, factory);
    REQUIRE(suite_ptr != nullptr);
    for (const auto& v : suite_ptr->violations()) {
        CAPTURE(v.property);
        CAPTURE(v.detail);
        CHECK(false);
    }

    // every routine fired once and returned to NOT_TRIGGERED
    std::map<int32_t, Stage> final_stage;
    std::map<int32_t, int> executed;
    for (const auto& r : res.trace) {
        if (r.kind == Rec::StageChange) {
            final_stage[r.routine] = static_cast<Stage>(r.a);
            if (static_cast<Stage>(r.a) == Stage::Executing) ++executed[r.routine];
        }
    }
    CHECK(final_stage.size() == 3);
    for (const auto& [rid, st] : final_stage) {
        CHECK(st == Stage::NotTriggered);
        CHECK(executed[rid] == 1);
    }

    MetricsReport rep = aggregate({res.trace});
    CHECK(rep.client_delay.n() == 3);
    CHECK(rep.sync_delay.n() == 0);  // no contention
    for (double v : rep.client_delay.samples) {
        CHECK(v > 0.0);
        CHECK(v < 100.0);
    }
    // conservation: every send delivered or dropped by the horizon
    CHECK(res.counters.sends == res.counters.delivers + res.counters.drops + res.trace.back().a);
}

TEST_CASE("all FSM stages reachable in one scenario") {
    Scenario s = small_scenario();
    TrialResult res = run_trial(s, 3);
    std::set<Stage> seen{Stage::NotTriggered};  // initial state
    for (const auto& r : res.trace)
        if (r.kind == Rec::StageChange) seen.insert(static_cast<Stage>(r.a));
    CHECK(seen.count(Stage::AcquiringLocks));
    CHECK(seen.count(Stage::Executing));
    CHECK(seen.count(Stage::ReleasingLocks));
    CHECK(seen.count(Stage::NotTriggered));
}

TEST_CASE("elections complete in one measured RTT with no failures") {
    Scenario s = small_scenario();
    s.workload.routines = 1;
    TrialResult res = run_trial(s, 5);
    int done = 0;
    for (const auto& r : res.trace)
        if (r.kind == Rec::ElectionDone) {
            ++done;
            CHECK(r.a == 0);  // epoch-start trigger
            if (r.value2 > 0.0) CHECK(r.value == doctest::Approx(r.value2));  // exactly 1 RTT
        }
    CHECK(done > 0);
}

TEST_CASE("two contending routines never execute simultaneously (SLA)") {
    Scenario s = small_scenario(LockingStrategy::Sla, ConflictStructure::AllConflict);
    s.workload.routines = 2;
    s.workload.simultaneous = true;
    s.horizon = 400.0;
    std::unique_ptr<MonitorSuite> suite;
    MonitorSuite* sp = nullptr;
    auto factory = [&](SimHarness& h) {
        suite = std::make_unique<MonitorSuite>(h.workload(), true);
        sp = suite.get();
        return std::vector<SimHarness::MonitorFn>{suite->fn()};
    };
    TrialResult res = run_trial(s, 11, factory);
    for (const auto& v : sp->violations()) {
        CAPTURE(v.property);
        CAPTURE(v.detail);
        CHECK(false);
    }
    MetricsReport rep = aggregate({res.trace});
    CHECK(rep.client_delay.n() == 2);
    CHECK(rep.sync_delay.n() == 1);  // exactly one blocked handover
    CHECK(rep.sync_delay.samples[0] > 0.0);
}

TEST_CASE("OLA completes and backs off under conflict") {
    Scenario s = small_scenario(LockingStrategy::Ola, ConflictStructure::AllConflict);
    s.workload.routines = 2;
    s.workload.simultaneous = true;
    s.horizon = 500.0;
    std::unique_ptr<MonitorSuite> suite;
    MonitorSuite* sp = nullptr;
    auto factory = [&](SimHarness& h) {
        suite = std::make_unique<MonitorSuite>(h.workload(), true);
        sp = suite.get();
        return std::vector<SimHarness::MonitorFn>{suite->fn()};
    };
    TrialResult res = run_trial(s, 13, factory);
    for (const auto& v : sp->violations()) {
        CAPTURE(v.property);
        CAPTURE(v.detail);
        CHECK(false);
    }
    std::map<int32_t, Stage> final_stage;
    for (const auto& r : res.trace)
        if (r.kind == Rec::StageChange) final_stage[r.routine] = static_cast<Stage>(r.a);
    for (const auto& [rid, st] : final_stage) CHECK(st == Stage::NotTriggered);
}

TEST_CASE("deterministic traces for identical seeds") {
    Scenario s = small_scenario();
    TrialResult a = run_trial(s, 21);
    TrialResult b = run_trial(s, 21);
    REQUIRE(a.trace.size() == b.trace.size());
    for (size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(a.trace[i].t == b.trace[i].t);
        CHECK(a.trace[i].kind == b.trace[i].kind);
        CHECK(a.trace[i].src == b.trace[i].src);
        CHECK(a.trace[i].bytes == b.trace[i].bytes);
    }
    TrialResult c = run_trial(s, 22);
    CHECK(a.trace.size() != c.trace.size());
}

TEST_CASE("migration preserves committed state across an epoch change") {
    Scenario s = small_scenario();
    s.cfg.epoch_length = 150.0;  // several migrations inside the horizon
    s.horizon = 500.0;
    std::unique_ptr<MonitorSuite> suite;
    MonitorSuite* sp = nullptr;
    auto factory = [&](SimHarness& h) {
        suite = std::make_unique<MonitorSuite>(h.workload(), false);
        sp = suite.get();
        return std::vector<SimHarness::MonitorFn>{suite->fn()};
    };
    TrialResult res = run_trial(s, 9, factory);
    for (const auto& v : sp->violations()) {
        CAPTURE(v.property);
        CAPTURE(v.detail);
        CHECK(false);
    }
    CHECK(count_kind(res.trace, Rec::StateTransfer) > 0);
    CHECK(count_kind(res.trace, Rec::GroupActive) > count_kind(res.trace, Rec::StateTransfer));
    MetricsReport rep = aggregate({res.trace});
    CHECK(rep.migration_gap.n() > 0);
    rep.migration_gap.finalize();
    CHECK(rep.migration_gap.p90 < 100.0);  // bounded monitoring gap
}

TEST_CASE("leader failure triggers election and reconstruction with inheritance") {
    Scenario s = small_scenario();
    s.horizon = 400.0;
    // find the epoch-0 leader of routine 0's group, then kill it mid-run
    Topology topo = build_topology(s.cfg.topology, s.cfg.n_devices, s.cfg.smart_fraction, 31);
    ClusterSet clusters = cluster_devices(topo.positions, s.cfg.devices_per_kgroup, 31);
    Workload wl = build_workload(s, topo, clusters, 31);
    auto view = std::make_shared<ViewData>();
    view->alive.assign(static_cast<size_t>(topo.n), 1);
    view->smart = topo.smart;
    SelectBasis basis = make_select_basis(view, 0, 31, validate_config(s.cfg), topo.positions,
                                          clusters, {});
    EntityId ent{EntityKind::Routine, wl.routines[0].id, wl.representative[0]};
    Committee com = select_committee(basis, ent, s.cfg.k);

    s.churn.extra.push_back({100.0, com.leader, ChurnKind::Fail});
    std::unique_ptr<MonitorSuite> suite;
    MonitorSuite* sp = nullptr;
    auto factory = [&](SimHarness& h) {
        suite = std::make_unique<MonitorSuite>(h.workload(), false);
        sp = suite.get();
        return std::vector<SimHarness::MonitorFn>{suite->fn()};
    };
    TrialResult res = run_trial(s, 31, factory);
    for (const auto& v : sp->violations()) {
        CAPTURE(v.property);
        CAPTURE(v.detail);
        CHECK(false);
    }
    bool failure_election = false, reconstructed = false;
    for (const auto& r : res.trace) {
        if (r.kind == Rec::ElectionDone && r.a == 1 && r.ekind == EntityKind::Routine &&
            r.eid == ent.id)
            failure_election = true;
        if (r.kind == Rec::Reconstructed && r.ekind == EntityKind::Routine && r.eid == ent.id)
            reconstructed = true;
    }
    CHECK(failure_election);
    CHECK(reconstructed);
}

TEST_CASE("centralized baseline runs with k=1") {
    Scenario s = small_scenario();
    s.cfg.selection_policy = SelectionPolicy::Central;
    s.cfg.f = 0;
    s.cfg.k = 1;
    s.cfg.allow_k_override = true;
    TrialResult res = run_trial(s, 17);
    std::map<int32_t, Stage> final_stage;
    for (const auto& r : res.trace)
        if (r.kind == Rec::StageChange) final_stage[r.routine] = static_cast<Stage>(r.a);
    CHECK(final_stage.size() == 3);
    for (const auto& [rid, st] : final_stage) CHECK(st == Stage::NotTriggered);
    // a single hub leads everything
    std::set<NodeId> leaders;
    for (const auto& r : res.trace)
        if (r.kind == Rec::LeaderClaim) leaders.insert(r.src);
    CHECK(leaders.size() == 1);
}

TEST_CASE("device failure is detected and broadcast") {
    Scenario s = small_scenario();
    s.workload.routines = 1;
    s.horizon = 300.0;
    // kill a simple (non-smart) device early; its cluster leader must notice
    Topology topo = build_topology(s.cfg.topology, s.cfg.n_devices, s.cfg.smart_fraction, 19);
    NodeId victim = kNoNode;
    for (NodeId n = 0; n < topo.n; ++n)
        if (!topo.smart[static_cast<size_t>(n)]) {
            victim = n;
            break;
        }
    REQUIRE(victim != kNoNode);
    s.churn.extra.push_back({50.0, victim, ChurnKind::Fail});
    TrialResult res = run_trial(s, 19);
    bool down_committed = false;
    for (const auto& r : res.trace)
        if (r.kind == Rec::Commit && static_cast<EntryKind>(r.a) == EntryKind::DeviceAvail &&
            r.device == victim && !r.flag)
            down_committed = true;
    CHECK(down_committed);
}

TEST_CASE("trace round-trips through the dump format") {
    Scenario s = small_scenario();
    s.horizon = 150.0;
    TrialResult res = run_trial(s, 23);
    std::string path = "/tmp/stamesh_trace_test.tsv";
    write_trace(res.trace, path);
    Trace back = read_trace(path);
    REQUIRE(back.size() == res.trace.size());
    MetricsReport a = aggregate({res.trace});
    MetricsReport b = aggregate({back});
    CHECK(a.messages == b.messages);
    CHECK(a.commits == b.commits);
    CHECK(a.client_delay.samples == b.client_delay.samples);
}
