#include <algorithm>

#include "stamesh/kgroup_state.hpp"
#include "stamesh/message.hpp"

namespace stamesh {

const char* to_string(EntryKind k) {
    switch (k) {
        case EntryKind::DeviceAvail: return "DEVICE_AVAIL";
        case EntryKind::DeviceReading: return "DEVICE_READING";
        case EntryKind::LockEnqueue: return "LOCK_ENQUEUE";
        case EntryKind::LockGrant: return "LOCK_GRANT";
        case EntryKind::LockRelease: return "LOCK_RELEASE";
        case EntryKind::PreLock: return "PRE_LOCK";
        case EntryKind::PreLockRelease: return "PRE_LOCK_RELEASE";
        case EntryKind::RoutineStage: return "ROUTINE_STAGE";
        case EntryKind::LockedDevice: return "LOCKED_DEVICE";
        case EntryKind::ReleasedDevice: return "RELEASED_DEVICE";
    }
    return "?";
}

const char* to_string(GroupStatus s) {
    switch (s) {
        case GroupStatus::Forming: return "FORMING";
        case GroupStatus::Active: return "ACTIVE";
        case GroupStatus::Migrating: return "MIGRATING";
        case GroupStatus::Decommissioned: return "DECOMMISSIONED";
    }
    return "?";
}

namespace {

// strict progression order inside one trigger instance
int stage_rank(Stage s) {
    switch (s) {
        case Stage::AcquiringLocks: return 1;
        case Stage::Executing: return 2;
        case Stage::ReleasingLocks: return 3;
        case Stage::NotTriggered: return 4;  // completion of the instance
    }
    return 0;
}

uint64_t stage_key(uint64_t instance, Stage s) {
    return instance * 5 + static_cast<uint64_t>(stage_rank(s));
}

}  // namespace

void Projection::apply(const StateEntry& e) {
    switch (e.kind) {
        case EntryKind::DeviceAvail: {
            auto& d = devices[e.device];
            d.device = e.device;
            if (e.version > d.version) {
                d.up = e.up;
                d.version = e.version;
            }
            break;
        }
        case EntryKind::DeviceReading: {
            auto& d = devices[e.device];
            d.device = e.device;
            if (e.version > d.version) {
                d.reading = e.reading;
                d.version = e.version;
            }
            break;
        }
        case EntryKind::LockEnqueue: {
            auto& lq = locks[e.device];
            if (lq.holder == e.routine || lq.preholder == e.routine) break;
            bool waiting = false;
            for (const auto& [r, s] : lq.waiters)
                if (r == e.routine) waiting = true;
            if (waiting) break;  // a routine waits at most once per device
            auto pos = std::lower_bound(lq.waiters.begin(), lq.waiters.end(),
                                        std::make_pair(e.routine, e.seq),
                                        [](const auto& a, const auto& b) { return a.second < b.second; });
            lq.waiters.insert(pos, {e.routine, e.seq});
            break;
        }
        case EntryKind::LockGrant: {
            auto& lq = locks[e.device];
            lq.waiters.erase(std::remove_if(lq.waiters.begin(), lq.waiters.end(),
                                            [&](const auto& w) { return w.first == e.routine; }),
                             lq.waiters.end());
            lq.holder = e.routine;
            if (lq.preholder == e.routine) lq.preholder = -1;
            break;
        }
        case EntryKind::LockRelease: {
            auto& lq = locks[e.device];
            if (lq.holder == e.routine) lq.holder = -1;
            break;
        }
        case EntryKind::PreLock: {
            locks[e.device].preholder = e.routine;
            break;
        }
        case EntryKind::PreLockRelease: {
            auto& lq = locks[e.device];
            if (lq.preholder == e.routine) lq.preholder = -1;
            break;
        }
        case EntryKind::RoutineStage: {
            bool first_arm = instance == 0 && stage == Stage::NotTriggered && e.instance > 0;
            if (!first_arm && stage_key(e.instance, e.stage) <= stage_key(instance, stage)) break;
            stage = e.stage;
            instance = e.instance;
            if (stage == Stage::AcquiringLocks || stage == Stage::NotTriggered) {
                locked.clear();
                released.clear();
            }
            break;
        }
        case EntryKind::LockedDevice: {
            if (e.instance == instance) locked.insert(e.device);
            break;
        }
        case EntryKind::ReleasedDevice: {
            if (e.instance == instance) {
                locked.erase(e.device);
                released.insert(e.device);
            }
            break;
        }
    }
}

Projection fold_entries(const std::map<Seq, StateEntry>& log) {
    Projection p;
    for (const auto& [seq, e] : log) p.apply(e);
    return p;
}

std::map<Seq, StateEntry> reconstruct_entries(const std::vector<std::map<Seq, StateEntry>>& replies) {
    std::map<Seq, StateEntry> out;
    for (const auto& reply : replies)
        for (const auto& [seq, e] : reply) out.emplace(seq, e);  // first copy wins on seq ties
    return out;
}

const char* to_string(MsgKind k) {
    switch (k) {
        case MsgKind::Election: return "ELECTION";
        case MsgKind::Coordinator: return "COORDINATOR";
        case MsgKind::Replicate: return "REPLICATE";
        case MsgKind::Ack: return "ACK";
        case MsgKind::StateRequest: return "STATE_REQUEST";
        case MsgKind::StateReply: return "STATE_REPLY";
        case MsgKind::Decommission: return "DECOMMISSION";
        case MsgKind::DecommissionAck: return "DECOMMISSION_ACK";
        case MsgKind::Recruit: return "RECRUIT";
        case MsgKind::Ping: return "PING";
        case MsgKind::PingAck: return "PING_ACK";
        case MsgKind::StateUpdate: return "STATE_UPDATE";
        case MsgKind::LockReq: return "LOCK_REQ";
        case MsgKind::PrelockReq: return "PRELOCK_REQ";
        case MsgKind::LockGrant: return "LOCK_GRANT";
        case MsgKind::LockRefuse: return "LOCK_REFUSE";
        case MsgKind::LockRelease: return "LOCK_RELEASE";
        case MsgKind::Command: return "COMMAND";
        case MsgKind::CommandAck: return "COMMAND_ACK";
    }
    return "?";
}

bool is_background(const Message& m) {
    if (m.kind == MsgKind::Ping || m.kind == MsgKind::PingAck || m.kind == MsgKind::StateUpdate)
        return true;
    if (m.kind == MsgKind::Replicate && !m.entries.empty()) {
        for (const auto& e : m.entries)
            if (e.kind != EntryKind::DeviceAvail && e.kind != EntryKind::DeviceReading) return false;
        return true;
    }
    if (m.kind == MsgKind::Ack && m.re == MsgKind::Replicate &&
        m.group.kind == EntityKind::DeviceCluster)
        return true;
    return false;
}

double size_bytes(const Message& m) {
    double payload = 0.0;
    switch (m.kind) {
        case MsgKind::Election: payload = 0; break;
        case MsgKind::Coordinator: payload = 8; break;
        case MsgKind::Ack: payload = 16; break;
        case MsgKind::StateRequest: payload = 8; break;
        case MsgKind::Decommission:
        case MsgKind::DecommissionAck: payload = 8; break;
        case MsgKind::Replicate:
        case MsgKind::StateReply:
            payload = 16 + kStateEntryBytes * static_cast<double>(m.entries.size());
            break;
        case MsgKind::Recruit:
            payload = 16 + kStateEntryBytes * static_cast<double>(m.entries.size()) +
                      4.0 * static_cast<double>(m.roster.size() + m.leadership.size());
            break;
        case MsgKind::Ping: payload = 8; break;
        case MsgKind::PingAck: payload = 24; break;
        case MsgKind::StateUpdate: payload = 40; break;
        case MsgKind::LockReq:
        case MsgKind::PrelockReq:
        case MsgKind::LockGrant:
        case MsgKind::LockRefuse:
        case MsgKind::LockRelease: payload = 24; break;
        case MsgKind::Command: payload = 72; break;  // 64-byte opaque payload + addressing
        case MsgKind::CommandAck: payload = 16; break;
    }
    return kHeaderBytes + payload;
}

}  // namespace stamesh
