#pragma once

#include <map>
#include <set>
#include <vector>

#include "stamesh/model.hpp"

namespace stamesh {

// Replicated log entries. One flat record; fields are interpreted per kind.
// Wire size is fixed at kStateEntryBytes for the bandwidth model.
enum class EntryKind : uint8_t {
    DeviceAvail = 0,   // device, up, version
    DeviceReading,     // device, reading, version
    LockEnqueue,       // device, routine, reqseq; FIFO position = entry seq
    LockGrant,         // device, routine
    LockRelease,       // device, routine
    PreLock,           // device, routine (OLA tentative hold)
    PreLockRelease,    // device, routine
    RoutineStage,      // stage, instance
    LockedDevice,      // device, instance
    ReleasedDevice,    // device, instance
};
const char* to_string(EntryKind k);

struct StateEntry {
    Seq seq = 0;
    EntryKind kind = EntryKind::DeviceAvail;
    NodeId device = kNoNode;
    int32_t routine = -1;
    bool up = true;
    double reading = 0.0;
    uint64_t version = 0;  // device-state version / LockEnqueue reqseq
    Stage stage = Stage::NotTriggered;
    uint64_t instance = 0;

    friend bool operator==(const StateEntry&, const StateEntry&) = default;
};

struct LockQueueState {
    int32_t holder = -1;
    int32_t preholder = -1;
    std::vector<std::pair<int32_t, Seq>> waiters;  // (routine, enqueue seq), seq-ascending

    friend bool operator==(const LockQueueState&, const LockQueueState&) = default;
};

inline bool operator==(const DeviceState& a, const DeviceState& b) {
    return a.device == b.device && a.up == b.up && a.reading == b.reading && a.version == b.version;
}

// Pure fold over committed entries. Replaying a seq-sorted log reproduces the
// projection exactly; apply() is idempotent and tolerates per-entry commit
// order (entries carry everything needed to keep effects monotone).
struct Projection {
    // device-cluster role
    std::map<NodeId, DeviceState> devices;
    std::map<NodeId, LockQueueState> locks;
    // routine role
    Stage stage = Stage::NotTriggered;
    uint64_t instance = 0;
    std::set<NodeId> locked;
    std::set<NodeId> released;

    void apply(const StateEntry& e);

    friend bool operator==(const Projection&, const Projection&) = default;
};

Projection fold_entries(const std::map<Seq, StateEntry>& log);

// Appendix reconstruction rule: an entry is recovered iff at least one of the
// >= f+1 replies contains it; lock queues are restored in seq order by the
// fold. Ties on seq keep the first reply's copy (reply order is deterministic).
std::map<Seq, StateEntry> reconstruct_entries(const std::vector<std::map<Seq, StateEntry>>& replies);

enum class GroupStatus : uint8_t { Forming = 0, Active, Migrating, Decommissioned };
const char* to_string(GroupStatus s);

}  // namespace stamesh
