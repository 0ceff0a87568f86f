#pragma once

#include <deque>
#include <map>
#include <set>
#include <string>

#include "stamesh/runtime.hpp"

namespace stamesh {

struct Violation {
    std::string property;
    std::string detail;
    Time t = 0.0;
};

// Omniscient trace monitors for the formal properties. One suite observes one
// trial; violations accumulate with a minimal counterexample description.
//
//   safety       - no two routines with intersecting command sets both EXECUTING
//   fifo         - per-device grant order equals committed enqueue order
//   deadlock     - wait-for graph stays acyclic
//   progress     - with arrivals halted, the ACQUIRING set shrinks to empty
//   inheritance  - committed entries survive leader failure and migration
//   election     - at most one self-believed leader per group at quiescence
class MonitorSuite {
public:
    MonitorSuite(const Workload& workload, bool check_progress);

    SimHarness::MonitorFn fn();

    const std::vector<Violation>& violations() const { return violations_; }
    bool ok() const { return violations_.empty(); }
    size_t inheritance_checks() const { return inheritance_checks_; }
    // property name -> pass/fail over everything observed
    std::map<std::string, bool> verdicts() const;

private:
    void observe(const TraceRecord& r, SimHarness& h);
    void check_executing_overlap(Time t);
    void check_wait_cycle(Time t);
    void add(const std::string& prop, const std::string& detail, Time t);

    std::map<int32_t, std::set<NodeId>> command_sets_;
    Time last_arrival_;
    bool check_progress_;

    std::map<int32_t, Stage> stages_;
    std::set<int32_t> executing_;
    std::map<NodeId, std::deque<int32_t>> fifo_;
    std::map<NodeId, int32_t> holder_;
    std::map<NodeId, std::vector<int32_t>> waiting_;
    size_t acquiring_after_halt_ = 0;
    bool shrink_started_ = false;
    bool saw_shrink_violation_ = false;

    // committed entries per entity; the inheritance reference
    std::map<EntityKey, std::map<Seq, StateEntry>> committed_;
    std::map<std::pair<EntityKey, Epoch>, std::set<NodeId>> claims_;

    std::vector<Violation> violations_;
    std::set<std::string> seen_props_;
    size_t inheritance_checks_ = 0;
};

struct VerifyReport {
    std::map<std::string, bool> verdicts;  // property -> pass
    std::vector<Violation> violations;
    bool all_pass() const {
        for (const auto& [p, ok] : verdicts)
            if (!ok) return false;
        return true;
    }
};

}  // namespace stamesh
