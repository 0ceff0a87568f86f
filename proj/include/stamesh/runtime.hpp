#pragma once

#include <functional>
#include <map>
#include <set>

#include "stamesh/kgroup_state.hpp"
#include "stamesh/message.hpp"
#include "stamesh/model.hpp"
#include "stamesh/select.hpp"
#include "stamesh/simnet.hpp"
#include "stamesh/sta.hpp"
#include "stamesh/trace.hpp"

namespace stamesh {

struct GroupKey {
    EntityKind kind = EntityKind::DeviceCluster;
    int32_t id = 0;
    Epoch epoch = 0;
    friend auto operator<=>(const GroupKey&, const GroupKey&) = default;
};

// One node's replica of one (entity, epoch) group instance.
struct GroupReplica {
    EntityId entity;
    Epoch epoch = 0;
    int f = 0;
    std::vector<NodeId> members;     // current roster (selection plus recruits)
    std::vector<NodeId> leadership;  // election priority order
    NodeId self = kNoNode;
    NodeId believed_leader = kNoNode;
    bool i_am_leader = false;
    GroupStatus status = GroupStatus::Forming;
    double rtt_estimate = 6.0;

    std::map<Seq, StateEntry> log;
    Seq next_seq = 1;
    Projection proj;                       // fold of committed entries (leader-maintained)
    std::set<Seq> committed;               // leader bookkeeping
    std::map<Seq, std::set<NodeId>> acks;  // pending quorum rounds
    std::map<Seq, std::function<void()>> on_commit;
    std::vector<Seq> batch_pending;          // low-urgency entries awaiting one wire round
    std::map<Seq, std::vector<Seq>> batches;  // batch tail seq -> member seqs
    bool batch_armed = false;
    std::set<NodeId> snapshot_acks;
    bool snapshot_committed = false;

    std::set<NodeId> failed_since_selection;

    // election
    uint64_t election_nonce = 0;
    bool election_running = false;
    Time election_started = 0.0;
    int election_trigger = 0;  // 0 epoch start, 1 leader failure
    std::map<NodeId, Time> coord_acks_pending;
    Time announce_time = 0.0;
    bool got_prior_ack = false;

    // duties (ping timers, engines) are guarded by this nonce
    uint64_t duty_nonce = 0;

    // migration, old side
    bool decommission_sent = false;
    // migration, new side
    bool state_received = false;
    bool transfer_requested = false;
    Time transfer_request_time = 0.0;

    // reconstruction (leader-failure case 1 / migration case 2a)
    bool reconstructing = false;
    uint64_t recon_nonce = 0;
    std::map<NodeId, std::map<Seq, StateEntry>> recon_replies;

    std::vector<Message> buffered;  // client requests deferred until active

    bool is_member(NodeId n) const {
        return std::find(members.begin(), members.end(), n) != members.end();
    }
    int quorum() const { return f + 1; }
};

// Volatile per-routine machinery at the routine leader. Rebuilt from the
// replicated projection after failover; never the source of truth.
struct RoutineEngine {
    uint64_t nonce = 0;
    std::map<NodeId, double> readings;
    Time last_completed = -1e18;
    Time trigger_arrival = -1.0;
    std::vector<NodeId> lock_order;
    std::set<NodeId> requested;  // first-request dedup (per instance)
    std::set<NodeId> prelocked;  // OLA stage-1 grants held
    std::set<NodeId> confirmed;  // OLA stage-2 grants committed
    std::set<NodeId> refused;
    std::set<NodeId> skipped;  // down devices (skip-and-log policy)
    bool ola_round_open = false;
    int backoff_attempt = 0;
    size_t next_cmd = 0;
    int cmd_retries = 0;
    Time last_unblock_release = -1.0;
};

struct NodeRuntime {
    NodeId id = kNoNode;
    bool alive = true;
    bool smart = false;
    MembershipView view;
    std::map<GroupKey, GroupReplica> replicas;
    std::map<int32_t, RoutineEngine> engines;
    std::map<NodeId, uint8_t> dev_known_up;   // availability broadcasts heard
    std::map<NodeId, uint64_t> ping_acked;    // device -> highest acked ping id
    std::map<GroupKey, std::set<NodeId>> device_commit_inflight;
};

struct Workload {
    std::vector<Routine> routines;
    std::vector<NodeId> representative;             // per routine index
    std::vector<std::pair<Time, int32_t>> triggers;  // (fire time, routine id), time-sorted
    Time last_trigger_time = 0.0;
};

struct TrialCounters {
    uint64_t sends = 0;
    uint64_t delivers = 0;
    uint64_t drops = 0;
    uint64_t quorum_timeouts = 0;
    uint64_t group_dead = 0;
};

// One deterministic trial: topology, event loop, membership service, every
// node's protocol state machines, and the trace they emit.
class SimHarness {
public:
    SimHarness(Config cfg, Workload workload, std::vector<ChurnEvent> churn, uint64_t seed,
               Time horizon);

    using MonitorFn = std::function<void(const TraceRecord&, SimHarness&)>;
    void attach_monitor(MonitorFn fn) { monitors_.push_back(std::move(fn)); }

    Trace run();

    // introspection (tests, monitors)
    Time now() const { return queue_.now(); }
    const TrialCounters& counters() const { return counters_; }
    const Topology& topology() const { return topo_; }
    const ClusterSet& clusters() const { return clusters_; }
    const Workload& workload() const { return workload_; }
    const Config& config() const { return cfg_; }
    Epoch current_epoch() const { return cur_epoch_; }
    const std::map<EntityKey, Committee>& committees() const { return committees_; }
    const GroupReplica* find_replica(NodeId node, GroupKey key) const;
    const NodeRuntime& node(NodeId n) const { return nodes_[static_cast<size_t>(n)]; }
    // current-epoch replica of the entity at its believed leader, if any
    const GroupReplica* current_leader_replica(EntityKey ent) const;
    size_t in_flight() const { return in_flight_; }

private:
    // --- infrastructure -------------------------------------------------
    void emit(TraceRecord rec);
    void schedule(Time delay, std::function<void()> fn);
    void send(Message m);
    void deliver(Message m);
    GroupReplica* replica(NodeId node, const GroupKey& key);
    GroupReplica* replica_of_msg(NodeId node, const Message& m);
    NodeId resolve_leader(EntityKey ent) const;       // expected leader, current epoch
    NodeId resolve_leader_at(const Committee& com) const;
    EntityKey device_group(NodeId device) const;
    double estimate_rtt(const std::vector<NodeId>& members);
    TraceRecord base_rec(Rec kind, const GroupReplica& r) const;

    // --- readings --------------------------------------------------------
    double device_reading(NodeId device);

    // --- membership & churn ----------------------------------------------
    void apply_churn(const ChurnEvent& ev);
    void publish_view();
    void fail_node(NodeId n);
    void rejoin_node(NodeId n);
    void on_view_update(NodeId n, const MembershipView& old_view);

    // --- epochs, selection, migration -------------------------------------
    void start_epoch(Epoch e);
    void instantiate_replica(NodeId member, const EntityId& ent, Epoch epoch, const Committee& com);
    void begin_migration_in(GroupReplica& r);  // new-side step 3 entry (after election)
    void request_state_transfer(NodeId self, GroupKey key);
    void install_transferred_state(NodeId self, GroupKey key, std::vector<StateEntry> entries,
                                   Time requested_at);
    void replicate_snapshot(NodeId self, GroupKey key);
    void finish_migration(NodeId self, GroupKey key);  // steps 5-6
    void activate_replica(NodeId self, GroupKey key);
    void decommission_replica(NodeId node, GroupKey key);
    void erase_replica(NodeId node, GroupKey key, bool to_trace);

    // --- election ----------------------------------------------------------
    void start_election(NodeId self, GroupKey key, int trigger);
    void run_candidate(NodeId self, GroupKey key, uint64_t nonce);
    void announce_coordinator(NodeId self, GroupKey key);
    void on_coordinator(NodeId self, GroupKey key, const Message& m);
    void on_elected(NodeId self, GroupKey key, int trigger);  // winner-side follow-up

    // --- replication ---------------------------------------------------------
    void leader_commit(NodeId self, GroupKey key, StateEntry draft, std::function<void()> then,
                       bool urgent = true);
    void flush_batch(NodeId self, GroupKey key);
    void commit_ready(NodeId self, GroupKey key, Seq seq);
    void replicate_retry(NodeId self, GroupKey key, Seq seq, int tries);

    // --- failure response -------------------------------------------------
    void handle_member_failure(NodeId self, GroupKey key, NodeId failed);
    void recruit_replacements(NodeId self, GroupKey key);
    void start_reconstruction(NodeId self, GroupKey key);
    void finish_reconstruction(NodeId self, GroupKey key);
    void resume_leader_duties(NodeId self, GroupKey key);

    // --- device cluster role -----------------------------------------------
    void start_monitoring(NodeId self, GroupKey key);
    void ping_tick(NodeId self, GroupKey key, NodeId device, uint64_t nonce);
    void on_ping_ack(NodeId self, GroupKey key, const Message& m);
    void presume_device_failed(NodeId self, GroupKey key, NodeId device);
    void forward_state_update(NodeId self, const GroupReplica& r, NodeId device);
    void handle_lock_req(NodeId self, GroupKey key, const Message& m);
    void handle_prelock_req(NodeId self, GroupKey key, const Message& m);
    void handle_lock_release(NodeId self, GroupKey key, const Message& m);
    void maybe_grant(NodeId self, GroupKey key, NodeId device, Time caused_by_release);
    void send_grant(NodeId self, GroupReplica& r, NodeId device, int32_t routine_id, bool prelock,
                    Time caused_by_release);
    void device_resume_grants(NodeId self, GroupKey key);

    // --- routine role ---------------------------------------------------------
    void handle_state_update(NodeId self, GroupKey key, const Message& m);
    void routine_resume(NodeId self, GroupKey key);
    void start_locking(NodeId self, GroupKey key);
    void sla_request_next(NodeId self, GroupKey key);
    void send_lock_request(NodeId self, GroupKey key, NodeId device, bool prelock, bool confirm);
    void lock_retry(NodeId self, GroupKey key, NodeId device, uint64_t nonce, int tries);
    void on_lock_grant(NodeId self, GroupKey key, const Message& m);
    void on_lock_refuse(NodeId self, GroupKey key, const Message& m);
    void ola_consider_round(NodeId self, GroupKey key);
    void ola_restart(NodeId self, GroupKey key, uint64_t nonce);
    void to_executing(NodeId self, GroupKey key);
    void issue_next_command(NodeId self, GroupKey key);
    void command_retry(NodeId self, GroupKey key, size_t cmd_index, uint64_t nonce);
    void on_command_ack(NodeId self, GroupKey key, const Message& m);
    void to_releasing(NodeId self, GroupKey key);
    void send_releases(NodeId self, GroupKey key);
    void on_release_acked(NodeId self, GroupKey key, NodeId device);

    // --- dispatch ----------------------------------------------------------
    void handle_message(NodeId self, const Message& m);
    void device_endpoint(NodeId device, const Message& m);
    void process_buffered(NodeId self, GroupKey key);
    bool buffer_if_not_serving(NodeId self, GroupReplica& r, const Message& m);
    bool try_migration_reply(NodeId self, const Message& m);

    Config cfg_;
    Workload workload_;
    std::vector<ChurnEvent> churn_;
    uint64_t seed_;
    Time horizon_;

    Topology topo_;
    Network net_;
    EventQueue queue_;
    ClusterSet clusters_;
    TriggerSubscription subs_;
    std::vector<NodeRuntime> nodes_;
    std::vector<EntityId> entities_;
    std::map<EntityKey, Committee> committees_;
    std::map<EntityKey, Committee> prev_committees_;
    std::map<int32_t, size_t> routine_index_;
    Epoch cur_epoch_ = 0;
    Time epoch_started_at_ = 0.0;

    std::shared_ptr<ViewData> truth_;      // instantaneous liveness
    MembershipView published_;             // what smart nodes currently see
    SelectBasis basis_;
    std::map<NodeId, std::vector<double>> prev_monitored_avg_;

    // device readings: seeded random walk plus scheduled spikes
    struct ReadingState {
        double walk = 0.0;
        uint64_t last_step = 0;
        double spike = 0.0;
        Time spike_until = -1.0;
    };
    std::vector<ReadingState> readings_;

    Trace trace_;
    std::vector<MonitorFn> monitors_;
    TrialCounters counters_;
    size_t in_flight_ = 0;
    uint64_t ping_counter_ = 0;

    // per-node accounting
    std::vector<double> bytes_e2e_, bytes_h2h_, bytes_fg_, bytes_bg_;
    struct LoadState {
        int groups = 0;
        int leaderships = 0;
        Time member_since = -1.0, leader_since = -1.0;
        double member_time = 0.0, leader_time = 0.0;
        double group_time_integral = 0.0;
        Time last_group_change = 0.0;
        int max_groups = 0;
    };
    std::vector<LoadState> load_;
    void role_delta(NodeId n, bool leader_role, int delta);
};

}  // namespace stamesh
