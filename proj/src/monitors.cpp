#include "stamesh/monitors.hpp"

#include <algorithm>
#include <sstream>

namespace stamesh {

MonitorSuite::MonitorSuite(const Workload& workload, bool check_progress)
    : last_arrival_(workload.last_trigger_time), check_progress_(check_progress) {
    for (const Routine& r : workload.routines) command_sets_[r.id] = r.command_set();
    for (const char* p :
         {"safety", "fifo", "deadlock", "progress", "inheritance", "election_safety"})
        seen_props_.insert(p);
}

SimHarness::MonitorFn MonitorSuite::fn() {
    return [this](const TraceRecord& r, SimHarness& h) { observe(r, h); };
}

void MonitorSuite::add(const std::string& prop, const std::string& detail, Time t) {
    violations_.push_back({prop, detail, t});
}

std::map<std::string, bool> MonitorSuite::verdicts() const {
    std::map<std::string, bool> v;
    for (const std::string& p : seen_props_) v[p] = true;
    for (const Violation& viol : violations_) v[viol.property] = false;
    return v;
}

void MonitorSuite::check_executing_overlap(Time t) {
    for (auto a = executing_.begin(); a != executing_.end(); ++a) {
        auto b = a;
        for (++b; b != executing_.end(); ++b) {
            const auto& sa = command_sets_[*a];
            const auto& sb = command_sets_[*b];
            for (NodeId d : sa)
                if (sb.count(d)) {
                    std::ostringstream os;
                    os << "routines " << *a << " and " << *b
                       << " are EXECUTING while sharing device " << d;
                    add("safety", os.str(), t);
                    return;
                }
        }
    }
}

void MonitorSuite::check_wait_cycle(Time t) {
    // wait-for edges: waiter -> current holder of the device it waits on
    std::map<int32_t, std::set<int32_t>> edges;
    for (const auto& [device, waiters] : waiting_) {
        auto h = holder_.find(device);
        if (h == holder_.end() || h->second < 0) continue;
        for (int32_t w : waiters)
            if (w != h->second) edges[w].insert(h->second);
    }
    std::map<int32_t, int> color;
    std::function<bool(int32_t)> dfs = [&](int32_t u) {
        color[u] = 1;
        for (int32_t v : edges[u]) {
            if (color[v] == 1) return true;
            if (color[v] == 0 && dfs(v)) return true;
        }
        color[u] = 2;
        return false;
    };
    for (const auto& [u, vs] : edges)
        if (color[u] == 0 && dfs(u)) {
            add("deadlock", "wait-for cycle involving routine " + std::to_string(u), t);
            return;
        }
}

void MonitorSuite::observe(const TraceRecord& r, SimHarness& h) {
    switch (r.kind) {
        case Rec::Commit: {
            EntityKey ent{r.ekind, r.eid};
            // copy the committed entry from the leader's log: the reference for
            // inheritance checks
            const GroupReplica* rep = h.find_replica(r.src, {r.ekind, r.eid, r.epoch});
            if (rep) {
                auto it = rep->log.find(static_cast<Seq>(r.b));
                if (it != rep->log.end()) committed_[ent][it->first] = it->second;
            }
            auto kind = static_cast<EntryKind>(r.a);
            if (kind == EntryKind::LockEnqueue) {
                auto& q = fifo_[r.device];
                if (std::find(q.begin(), q.end(), r.routine) == q.end()) q.push_back(r.routine);
                auto& w = waiting_[r.device];
                if (std::find(w.begin(), w.end(), r.routine) == w.end()) w.push_back(r.routine);
                check_wait_cycle(r.t);
            } else if (kind == EntryKind::LockGrant) {
                auto& q = fifo_[r.device];
                auto pos = std::find(q.begin(), q.end(), r.routine);
                if (pos != q.end()) {
                    if (pos != q.begin()) {
                        std::ostringstream os;
                        os << "device " << r.device << " granted to routine " << r.routine
                           << " ahead of routine " << q.front();
                        add("fifo", os.str(), r.t);
                    }
                    q.erase(pos);
                }
                holder_[r.device] = r.routine;
                auto& w = waiting_[r.device];
                w.erase(std::remove(w.begin(), w.end(), r.routine), w.end());
                check_wait_cycle(r.t);
            } else if (kind == EntryKind::LockRelease) {
                auto it = holder_.find(r.device);
                if (it != holder_.end() && it->second == r.routine) holder_.erase(it);
            } else if (kind == EntryKind::PreLock) {
                holder_[r.device] = r.routine;  // tentative hold occupies the device
            } else if (kind == EntryKind::PreLockRelease) {
                auto it = holder_.find(r.device);
                if (it != holder_.end() && it->second == r.routine) holder_.erase(it);
            }
            break;
        }
        case Rec::StageChange: {
            auto stage = static_cast<Stage>(r.a);
            Stage before = stages_.count(r.routine) ? stages_[r.routine] : Stage::NotTriggered;
            stages_[r.routine] = stage;
            if (stage == Stage::Executing) {
                executing_.insert(r.routine);
                check_executing_overlap(r.t);
            } else {
                executing_.erase(r.routine);
            }
            if (check_progress_ && r.t > last_arrival_) {
                size_t acquiring = 0;
                for (const auto& [rid, st] : stages_)
                    if (st == Stage::AcquiringLocks) ++acquiring;
                // the last round's triggers still materialize shortly after the
                // halt instant; once the set starts draining it must only shrink
                if (acquiring < acquiring_after_halt_) shrink_started_ = true;
                if (shrink_started_ && acquiring > acquiring_after_halt_ &&
                    !saw_shrink_violation_) {
                    saw_shrink_violation_ = true;
                    add("progress",
                        "waiting set grew after it began draining (routine " +
                            std::to_string(r.routine) + ")",
                        r.t);
                }
                acquiring_after_halt_ = acquiring;
            }
            break;
        }
        case Rec::Reconstructed:
        case Rec::GroupActive: {
            if (r.kind == Rec::GroupActive && r.epoch == 0) break;  // first formation: no ancestor
            EntityKey ent{r.ekind, r.eid};
            auto cit = committed_.find(ent);
            if (cit == committed_.end()) break;
            NodeId leader = r.src;
            if (leader == kNoNode) break;
            const GroupReplica* rep = h.find_replica(leader, {r.ekind, r.eid, r.epoch});
            if (!rep) break;
            ++inheritance_checks_;
            for (const auto& [seq, entry] : cit->second) {
                auto lit = rep->log.find(seq);
                if (lit == rep->log.end() || !(lit->second == entry)) {
                    std::ostringstream os;
                    os << "entity (" << static_cast<int>(r.ekind) << "," << r.eid << ") seq " << seq
                       << " " << to_string(entry.kind)
                       << (lit == rep->log.end() ? " missing" : " altered")
                       << " at post-event leader " << leader;
                    add("inheritance", os.str(), r.t);
                    break;
                }
            }
            break;
        }
        case Rec::LeaderClaim:
            claims_[{EntityKey{r.ekind, r.eid}, r.epoch}].insert(r.src);
            break;
        case Rec::LeaderYield:
            claims_[{EntityKey{r.ekind, r.eid}, r.epoch}].erase(r.src);
            break;
        case Rec::InFlightAtEnd: {
            // quiescence checks
            for (const auto& [key, who] : claims_) {
                if (key.second != h.current_epoch()) continue;
                if (who.size() > 1) {
                    std::ostringstream os;
                    os << "entity (" << static_cast<int>(key.first.kind) << "," << key.first.id
                       << ") has " << who.size() << " self-believed leaders at horizon";
                    add("election_safety", os.str(), r.t);
                }
            }
            if (check_progress_) {
                for (const auto& [rid, st] : stages_)
                    if (st != Stage::NotTriggered)
                        add("progress",
                            "routine " + std::to_string(rid) + " stuck in " +
                                std::string(to_string(st)) + " at horizon",
                            r.t);
            }
            break;
        }
        default:
            break;
    }
}

}  // namespace stamesh
