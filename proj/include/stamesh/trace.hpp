#pragma once

#include <string>
#include <vector>

#include "stamesh/model.hpp"

namespace stamesh {

// One record per observable event. The trace is the single source for metric
// aggregation and for the formal-property monitors; a trial's trace is
// deterministic given (config, scenario, seed).
enum class Rec : uint8_t {
    MsgSend = 0,    // src,dst,a=msg kind,hops,bytes,flag=background
    MsgDrop,        // src,dst,a=msg kind,b=reason(0 unreachable,1 lost,2 dst dead,3 src dead)
    Commit,         // entity; src=leader; a=entry kind; b=seq; device; routine; value
    StageChange,    // routine; a=stage; b=instance; src=leader
    TriggerArrival, // routine; value unused; arrival of the update that fired the trigger
    CmdEmit,        // routine; b=cmd index; device
    LockRequested,  // routine; device; src=routine leader (first request, not resends)
    LockGranted,    // routine; device; value=causing release time (-1 if none)
    LockServiced,   // routine; device; grant received at the routine leader; value=cause
    LockReleased,   // routine; device
    ElectionDone,   // entity; src=winner; a=trigger(0 epoch,1 failure); value=elapsed; value2=measured rtt
    GroupFormed,    // entity; src=leader; a=member count; value=quorum distance (mean hops to f nearest)
    GroupActive,    // entity; value=activation delay from epoch boundary (migration gap)
    StateTransfer,  // entity; value=elapsed request->installed; b=entry count
    Overlap,        // entity; value=|old ∩ new| / k
    CandidateCount, // entity; a=count
    Recruited,      // entity; src=leader; dst=recruit
    Reconstructed,  // entity; src=new leader; b=recovered entry count
    GroupDead,      // entity
    LeaderClaim,    // entity; src=claimant
    LeaderYield,    // entity; src=yielder
    RoleDelta,      // src=node; a=role(0 member,1 leader); b=+1/-1 (as int64)
    QuorumTimeout,  // entity; src=leader
    SkippedDevice,  // routine; device (down-device skip policy)
    NodeBandwidth,  // src=node; value=e2e bytes; value2=h2h bytes; a=fg bytes; b=bg bytes (end of trial)
    NodeLoad,       // src=node; value=leader frac; value2=member frac; a=max groups x1000; b=avg groups x1000
    InFlightAtEnd,  // a=count (conservation)
};

struct TraceRecord {
    Time t = 0.0;
    Rec kind = Rec::MsgSend;
    EntityKind ekind = EntityKind::DeviceCluster;
    int32_t eid = -1;
    Epoch epoch = 0;
    NodeId src = kNoNode;
    NodeId dst = kNoNode;
    int32_t routine = -1;
    NodeId device = kNoNode;
    int hops = 0;
    double bytes = 0.0;
    double value = 0.0;
    double value2 = 0.0;
    int64_t a = 0;
    int64_t b = 0;
    bool flag = false;
};

using Trace = std::vector<TraceRecord>;

// Line-delimited dump (tab-separated, header row) and its reader.
// The reader throws ParseError with the offending line number.
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& what, size_t line)
        : std::runtime_error(what + " at line " + std::to_string(line)), line_number(line) {}
    size_t line_number;
};

void write_trace(const Trace& trace, const std::string& path);
Trace read_trace(const std::string& path);

}  // namespace stamesh
