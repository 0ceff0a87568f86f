#pragma once

#include <vector>

#include "stamesh/kgroup_state.hpp"
#include "stamesh/model.hpp"

namespace stamesh {

// Simulated wire schema. Every message carries the 32-byte header
// (kind, src, dst, group, epoch, seq); payload byte costs are per kind below.
enum class MsgKind : uint8_t {
    Election = 0,
    Coordinator,
    Replicate,
    Ack,
    StateRequest,
    StateReply,
    Decommission,
    DecommissionAck,
    Recruit,
    Ping,
    PingAck,
    StateUpdate,
    LockReq,
    PrelockReq,
    LockGrant,
    LockRefuse,
    LockRelease,
    Command,
    CommandAck,
};
const char* to_string(MsgKind k);

struct Message {
    MsgKind kind = MsgKind::Ack;
    NodeId src = kNoNode;
    NodeId dst = kNoNode;
    EntityKey group{EntityKind::DeviceCluster, 0};
    Epoch epoch = 0;
    Seq seq = 0;  // replicate seq; acks echo it

    MsgKind re = MsgKind::Ack;  // Ack: kind being acknowledged
    NodeId device = kNoNode;
    int32_t routine = -1;
    uint64_t reqseq = 0;   // (origin, reqseq) duplicate suppression
    double value = 0.0;    // reading
    uint64_t version = 0;  // device state version
    bool flag = false;     // PingAck: up; LockReq: OLA confirm; LockRelease: prelock;
                           // StateRequest: leader query; StateUpdate: availability record
    Stage stage = Stage::NotTriggered;
    uint64_t instance = 0;
    NodeId leader_hint = kNoNode;
    int32_t cmd_index = -1;
    double duration = 0.0;
    bool snapshot = false;  // Replicate: full-state install (migration step 4)
    bool forwarded = false;
    std::vector<StateEntry> entries;  // Replicate / StateReply / Recruit
    std::vector<NodeId> roster;       // Recruit: updated member list
    std::vector<NodeId> leadership;   // Recruit: updated election priority
};

constexpr double kHeaderBytes = 32.0;
constexpr double kStateEntryBytes = 64.0;

double size_bytes(const Message& m);

// Background traffic = device monitoring and its replication
// (Ping/PingAck/StateUpdate plus device-state Replicate rounds); everything
// else counts as foreground protocol traffic.
bool is_background(const Message& m);

}  // namespace stamesh
