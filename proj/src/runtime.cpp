#include "stamesh/runtime.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace stamesh {

namespace {

GroupKey gkey(const EntityId& ent, Epoch epoch) { return {ent.kind, ent.id, epoch}; }
GroupKey gkey(EntityKey ent, Epoch epoch) { return {ent.kind, ent.id, epoch}; }
EntityKey ekey(const GroupKey& k) { return {k.kind, k.id}; }

constexpr double kCoordAwaitRtts = 3.0;
constexpr double kProbeWaitRtts = 2.0;
constexpr double kPostProbeWaitRtts = 4.0;
constexpr double kTransferTimeoutRtts = 6.0;
constexpr double kReplicateRetryRtts = 10.0;
constexpr double kLockRetryRtts = 12.0;
constexpr double kReleaseRetryRtts = 8.0;

}  // namespace

SimHarness::SimHarness(Config cfg, Workload workload, std::vector<ChurnEvent> churn, uint64_t seed,
                       Time horizon)
    : cfg_(std::move(cfg)),
      workload_(std::move(workload)),
      churn_(std::move(churn)),
      seed_(seed),
      horizon_(horizon),
      topo_(build_topology(cfg_.topology, cfg_.n_devices, cfg_.smart_fraction, seed)),
      net_(topo_, cfg_.node_bandwidth, cfg_.loss_probability, seed),
      clusters_(cluster_devices(topo_.positions, cfg_.devices_per_kgroup, seed)),
      subs_(TriggerSubscription::build(workload_.routines)) {
    auto v = std::make_shared<ViewData>();
    v->version = 0;
    v->alive.assign(static_cast<size_t>(topo_.n), 1);
    v->smart = topo_.smart;
    truth_ = v;
    published_ = v;

    nodes_.resize(static_cast<size_t>(topo_.n));
    for (NodeId i = 0; i < topo_.n; ++i) {
        auto& n = nodes_[static_cast<size_t>(i)];
        n.id = i;
        n.alive = true;
        n.smart = topo_.smart[static_cast<size_t>(i)] != 0;
        n.view = published_;
    }
    readings_.resize(static_cast<size_t>(topo_.n));
    bytes_e2e_.assign(static_cast<size_t>(topo_.n), 0.0);
    bytes_h2h_.assign(static_cast<size_t>(topo_.n), 0.0);
    bytes_fg_.assign(static_cast<size_t>(topo_.n), 0.0);
    bytes_bg_.assign(static_cast<size_t>(topo_.n), 0.0);
    load_.resize(static_cast<size_t>(topo_.n));

    for (int32_t c = 0; c < clusters_.count; ++c)
        entities_.push_back({EntityKind::DeviceCluster, c, clusters_.centers[static_cast<size_t>(c)]});
    for (size_t i = 0; i < workload_.routines.size(); ++i) {
        entities_.push_back(
            {EntityKind::Routine, workload_.routines[i].id, workload_.representative[i]});
        routine_index_[workload_.routines[i].id] = i;
    }
}

// --- infrastructure ---------------------------------------------------------

void SimHarness::emit(TraceRecord rec) {
    rec.t = queue_.now();
    trace_.push_back(rec);
    for (auto& m : monitors_) m(trace_.back(), *this);
}

void SimHarness::schedule(Time delay, std::function<void()> fn) {
    queue_.schedule(queue_.now() + delay, std::move(fn));
}

TraceRecord SimHarness::base_rec(Rec kind, const GroupReplica& r) const {
    TraceRecord rec;
    rec.kind = kind;
    rec.ekind = r.entity.kind;
    rec.eid = r.entity.id;
    rec.epoch = r.epoch;
    return rec;
}

void SimHarness::send(Message m) {
    ++counters_.sends;
    double bytes = size_bytes(m);
    if (m.dst == kNoNode || !nodes_[static_cast<size_t>(m.src)].alive) {
        ++counters_.drops;
        TraceRecord rec;
        rec.kind = Rec::MsgDrop;
        rec.src = m.src;
        rec.dst = m.dst;
        rec.a = static_cast<int64_t>(m.kind);
        rec.b = 3;
        emit(rec);
        return;
    }
    auto plan = net_.plan_send(m.src, m.dst, bytes);
    if (plan.status != SendStatus::Ok) {
        ++counters_.drops;
        TraceRecord rec;
        rec.kind = Rec::MsgDrop;
        rec.src = m.src;
        rec.dst = m.dst;
        rec.a = static_cast<int64_t>(m.kind);
        rec.b = plan.status == SendStatus::Lost ? 1 : 0;
        emit(rec);
        return;
    }
    // bandwidth accounting: end-to-end at the origin, hop-by-hop at each hop sender
    bool bg = is_background(m);
    bytes_e2e_[static_cast<size_t>(m.src)] += bytes;
    (bg ? bytes_bg_ : bytes_fg_)[static_cast<size_t>(m.src)] += bytes;
    // hop-by-hop load is physical: both ends of every hop carry the bytes
    NodeId hop_sender = m.src;
    for (NodeId receiver : plan.path) {
        bytes_h2h_[static_cast<size_t>(hop_sender)] += bytes;
        bytes_h2h_[static_cast<size_t>(receiver)] += bytes;
        hop_sender = receiver;
    }
    TraceRecord rec;
    rec.kind = Rec::MsgSend;
    rec.src = m.src;
    rec.dst = m.dst;
    rec.a = static_cast<int64_t>(m.kind);
    rec.hops = plan.hops;
    rec.bytes = bytes;
    rec.flag = bg;
    rec.ekind = m.group.kind;
    rec.eid = m.group.id;
    rec.epoch = m.epoch;
    emit(rec);
    ++in_flight_;
    queue_.schedule(queue_.now() + plan.delay, [this, m = std::move(m)] {
        --in_flight_;
        deliver(m);
    });
}

void SimHarness::deliver(Message m) {
    if (!nodes_[static_cast<size_t>(m.dst)].alive) {
        ++counters_.drops;
        TraceRecord rec;
        rec.kind = Rec::MsgDrop;
        rec.src = m.src;
        rec.dst = m.dst;
        rec.a = static_cast<int64_t>(m.kind);
        rec.b = 2;
        emit(rec);
        return;
    }
    ++counters_.delivers;
    // device-endpoint legs: pings and the leader-to-device command hop
    if (m.kind == MsgKind::Ping || (m.kind == MsgKind::Command && m.flag)) {
        device_endpoint(m.dst, m);
        return;
    }
    handle_message(m.dst, m);
}

GroupReplica* SimHarness::replica(NodeId node, const GroupKey& key) {
    auto& reps = nodes_[static_cast<size_t>(node)].replicas;
    auto it = reps.find(key);
    return it == reps.end() ? nullptr : &it->second;
}

const GroupReplica* SimHarness::find_replica(NodeId node, GroupKey key) const {
    const auto& reps = nodes_[static_cast<size_t>(node)].replicas;
    auto it = reps.find(key);
    return it == reps.end() ? nullptr : &it->second;
}

GroupReplica* SimHarness::replica_of_msg(NodeId node, const Message& m) {
    return replica(node, {m.group.kind, m.group.id, m.epoch});
}

NodeId SimHarness::resolve_leader_at(const Committee& com) const {
    for (NodeId n : com.leadership)
        if (published_->is_alive_smart(n)) return n;
    return kNoNode;
}

NodeId SimHarness::resolve_leader(EntityKey ent) const {
    auto it = committees_.find(ent);
    if (it == committees_.end()) return kNoNode;
    return resolve_leader_at(it->second);
}

EntityKey SimHarness::device_group(NodeId device) const {
    return {EntityKind::DeviceCluster, clusters_.assignment[static_cast<size_t>(device)]};
}

double SimHarness::estimate_rtt(const std::vector<NodeId>& members) {
    int max_hops = 1;
    for (size_t i = 0; i < members.size(); ++i)
        for (size_t j = i + 1; j < members.size(); ++j) {
            int h = net_.hop_distance(members[i], members[j]);
            if (h > max_hops) max_hops = h;
        }
    return 2.0 * max_hops + 2.0;
}

const GroupReplica* SimHarness::current_leader_replica(EntityKey ent) const {
    NodeId leader = resolve_leader(ent);
    GroupKey key = gkey(ent, cur_epoch_);
    // the expected leader may itself defer to an elected one
    for (int depth = 0; depth < 3 && leader != kNoNode; ++depth) {
        const GroupReplica* r = find_replica(leader, key);
        if (!r) return nullptr;
        if (r->i_am_leader) return r;
        if (r->believed_leader == leader || r->believed_leader == kNoNode) return r;
        leader = r->believed_leader;
    }
    return nullptr;
}

void SimHarness::role_delta(NodeId n, bool leader_role, int delta) {
    auto& ls = load_[static_cast<size_t>(n)];
    Time t = queue_.now();
    // close the current interval
    double dt = t - ls.last_group_change;
    if (dt > 0) {
        if (ls.leaderships > 0) ls.leader_time += dt;
        if (ls.groups > 0) ls.member_time += dt;
        ls.group_time_integral += dt * ls.groups;
    }
    ls.last_group_change = t;
    if (leader_role)
        ls.leaderships += delta;
    else
        ls.groups += delta;
    if (ls.groups > ls.max_groups) ls.max_groups = ls.groups;

    TraceRecord rec;
    rec.kind = Rec::RoleDelta;
    rec.src = n;
    rec.a = leader_role ? 1 : 0;
    rec.b = delta;
    emit(rec);
}

// --- readings ----------------------------------------------------------------

double SimHarness::device_reading(NodeId device) {
    auto& rs = readings_[static_cast<size_t>(device)];
    // seeded random walk, advanced on a fixed quantum; step stream is keyed by
    // (seed, device, step index) so queries cannot perturb it
    const double quantum = cfg_.monitor_period;
    uint64_t step = static_cast<uint64_t>(queue_.now() / quantum);
    while (rs.last_step < step) {
        ++rs.last_step;
        uint64_t s = mix_seed({seed_, 0xD1CEULL, static_cast<uint64_t>(device), rs.last_step});
        double u = static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53;
        double v = static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53;
        if (u < cfg_.reading_change_prob) {
            rs.walk += cfg_.reading_walk_sigma * (2.0 * v - 1.0);
            rs.walk = std::clamp(rs.walk, -5.0, 5.0);
        }
    }
    double v = rs.walk;
    if (queue_.now() <= rs.spike_until) v += rs.spike;
    return v;
}

// --- membership & churn --------------------------------------------------------

void SimHarness::publish_view() {
    auto v = std::make_shared<ViewData>(*truth_);
    v->version = published_->version + 1;
    published_ = v;
    for (auto& n : nodes_) {
        if (!n.alive || !n.smart) continue;
        MembershipView old = n.view;
        n.view = published_;
        on_view_update(n.id, old);
    }
    // group-death accounting against current committees
    for (const auto& [ent, com] : committees_) {
        bool any = false;
        for (NodeId m : com.members)
            if (published_->is_alive_smart(m)) any = true;
        if (!any) {
            ++counters_.group_dead;
            TraceRecord rec;
            rec.kind = Rec::GroupDead;
            rec.ekind = ent.kind;
            rec.eid = ent.id;
            rec.epoch = cur_epoch_;
            emit(rec);
        }
    }
}

void SimHarness::apply_churn(const ChurnEvent& ev) {
    if (ev.kind == ChurnKind::Fail) {
        if (!nodes_[static_cast<size_t>(ev.node)].alive) return;
        fail_node(ev.node);
    } else {
        if (nodes_[static_cast<size_t>(ev.node)].alive) return;
        rejoin_node(ev.node);
    }
    auto v = std::make_shared<ViewData>(*truth_);
    v->alive[static_cast<size_t>(ev.node)] = ev.kind == ChurnKind::Join ? 1 : 0;
    truth_ = v;
    schedule(cfg_.detection_delay, [this] { publish_view(); });
}

void SimHarness::fail_node(NodeId n) {
    auto& node = nodes_[static_cast<size_t>(n)];
    node.alive = false;
    net_.set_alive(n, false);
    // crash loses all volatile and replicated state (crash-recovery model)
    for (auto& [key, r] : node.replicas) {
        if (r.status == GroupStatus::Decommissioned) continue;
        role_delta(n, false, -1);
        if (r.i_am_leader) {
            role_delta(n, true, -1);
            TraceRecord rec = base_rec(Rec::LeaderYield, r);
            rec.src = n;
            emit(rec);
        }
    }
    node.replicas.clear();
    node.engines.clear();
    node.dev_known_up.clear();
}

void SimHarness::rejoin_node(NodeId n) {
    auto& node = nodes_[static_cast<size_t>(n)];
    node.alive = true;
    net_.set_alive(n, true);
    node.view = published_;
    node.replicas.clear();
    node.engines.clear();
}

void SimHarness::on_view_update(NodeId n, const MembershipView& old_view) {
    auto& node = nodes_[static_cast<size_t>(n)];
    std::vector<GroupKey> keys;
    for (auto& [key, r] : node.replicas) keys.push_back(key);
    for (const GroupKey& key : keys) {
        GroupReplica* r = replica(n, key);
        if (!r || r->status == GroupStatus::Decommissioned) continue;
        for (NodeId m : std::vector<NodeId>(r->members)) {
            bool was = old_view->alive[static_cast<size_t>(m)] != 0;
            bool is = node.view->alive[static_cast<size_t>(m)] != 0;
            if (was && !is) handle_member_failure(n, key, m);
        }
    }
}

// --- epochs, selection, migration ------------------------------------------------

void SimHarness::start_epoch(Epoch e) {
    cur_epoch_ = e;
    epoch_started_at_ = queue_.now();
    prev_committees_ = committees_;
    committees_.clear();

    // average monitored-device location per smart node over the previous epoch
    prev_monitored_avg_.clear();
    if (e > 0) {
        std::map<NodeId, std::pair<std::vector<double>, int>> acc;
        for (const auto& [ent, com] : prev_committees_) {
            if (ent.kind != EntityKind::DeviceCluster) continue;
            for (NodeId member : com.members) {
                auto& [sum, cnt] = acc[member];
                if (sum.empty()) sum.assign(static_cast<size_t>(topo_.dim), 0.0);
                for (NodeId d = 0; d < topo_.n; ++d) {
                    if (clusters_.assignment[static_cast<size_t>(d)] != ent.id) continue;
                    for (int c = 0; c < topo_.dim; ++c)
                        sum[static_cast<size_t>(c)] += topo_.positions[static_cast<size_t>(d)][static_cast<size_t>(c)];
                    ++cnt;
                }
            }
        }
        for (auto& [member, sc] : acc) {
            auto& [sum, cnt] = sc;
            if (cnt == 0) continue;
            for (auto& x : sum) x /= cnt;
            prev_monitored_avg_[member] = sum;
        }
    }

    basis_ = make_select_basis(published_, e, seed_, cfg_, topo_.positions, clusters_,
                               prev_monitored_avg_);

    // sweep replicas from epochs that should be long gone
    if (e >= 2) {
        for (auto& node : nodes_) {
            if (!node.alive) continue;
            std::vector<GroupKey> stale;
            for (auto& [key, r] : node.replicas)
                if (key.epoch + 2 <= e) stale.push_back(key);
            for (const auto& key : stale) decommission_replica(node.id, key);
        }
    }

    int k_eff = cfg_.selection_policy == SelectionPolicy::Central ? 1 : cfg_.k;
    for (const EntityId& ent : entities_) {
        Committee com;
        try {
            com = select_committee(basis_, ent, k_eff);
        } catch (const InsufficientSmartNodes&) {
            ++counters_.group_dead;
            TraceRecord rec;
            rec.kind = Rec::GroupDead;
            rec.ekind = ent.kind;
            rec.eid = ent.id;
            rec.epoch = e;
            emit(rec);
            continue;
        }
        committees_[key_of(ent)] = com;

        TraceRecord formed;
        formed.kind = Rec::GroupFormed;
        formed.ekind = ent.kind;
        formed.eid = ent.id;
        formed.epoch = e;
        formed.src = com.leader;
        formed.a = static_cast<int64_t>(com.members.size());
        // quorum distance: mean hops from the leader to its f nearest members
        {
            std::vector<int> hops;
            for (NodeId m : com.members) {
                if (m == com.leader) continue;
                int h = net_.hop_distance(com.leader, m);
                if (h >= 0) hops.push_back(h);
            }
            std::sort(hops.begin(), hops.end());
            int f = (static_cast<int>(com.members.size()) - 1) / 2;
            double sum = 0;
            int cnt = std::min<int>(f, static_cast<int>(hops.size()));
            for (int i = 0; i < cnt; ++i) sum += hops[static_cast<size_t>(i)];
            formed.value = cnt > 0 ? sum / cnt : 0.0;
        }
        emit(formed);

        if (cfg_.selection_policy == SelectionPolicy::LshMix) {
            TraceRecord cand;
            cand.kind = Rec::CandidateCount;
            cand.ekind = ent.kind;
            cand.eid = ent.id;
            cand.epoch = e;
            cand.a = com.stage1_candidates;
            emit(cand);
        }
        auto prev = prev_committees_.find(key_of(ent));
        if (prev != prev_committees_.end()) {
            int shared = 0;
            for (NodeId m : com.members)
                if (std::find(prev->second.members.begin(), prev->second.members.end(), m) !=
                    prev->second.members.end())
                    ++shared;
            TraceRecord ov;
            ov.kind = Rec::Overlap;
            ov.ekind = ent.kind;
            ov.eid = ent.id;
            ov.epoch = e;
            ov.value = static_cast<double>(shared) / static_cast<double>(com.members.size());
            emit(ov);
        }

        // old group suspends monitoring at the boundary (step 1)
        if (e > 0) {
            GroupKey old_key = gkey(ent, e - 1);
            for (NodeId m : prev != prev_committees_.end() ? prev->second.members
                                                           : std::vector<NodeId>{}) {
                GroupReplica* old_r = replica(m, old_key);
                if (old_r && old_r->status == GroupStatus::Active) {
                    old_r->status = GroupStatus::Migrating;
                    ++old_r->duty_nonce;  // stops ping timers
                }
            }
        }

        for (NodeId m : com.members)
            if (nodes_[static_cast<size_t>(m)].alive) instantiate_replica(m, ent, e, com);
        for (NodeId m : com.members)
            if (nodes_[static_cast<size_t>(m)].alive) start_election(m, gkey(ent, e), 0);
    }

    Time next = epoch_started_at_ + cfg_.epoch_length;
    if (next < horizon_) {
        Epoch ne = e + 1;
        queue_.schedule(next, [this, ne] { start_epoch(ne); });
    }
}

void SimHarness::instantiate_replica(NodeId member, const EntityId& ent, Epoch epoch,
                                     const Committee& com) {
    GroupKey key = gkey(ent, epoch);
    auto& node = nodes_[static_cast<size_t>(member)];
    GroupReplica r;
    r.entity = ent;
    r.epoch = epoch;
    r.f = (static_cast<int>(com.members.size()) - 1) / 2;
    r.members = com.members;
    r.leadership = com.leadership;
    r.self = member;
    r.status = GroupStatus::Forming;
    r.rtt_estimate = estimate_rtt(com.members);
    node.replicas[key] = std::move(r);
    role_delta(member, false, +1);
}

void SimHarness::begin_migration_in(GroupReplica& r) {
    (void)r;  // entry point kept for symmetry; work happens in request_state_transfer
}

void SimHarness::request_state_transfer(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r || r->state_received || !r->i_am_leader) return;
    r->transfer_requested = true;
    r->transfer_request_time = queue_.now();
    auto prev = prev_committees_.find(ekey(key));
    if (prev == prev_committees_.end()) {
        // no predecessor group: empty state, proceed
        install_transferred_state(self, key, {}, queue_.now());
        return;
    }
    NodeId old_leader = resolve_leader_at(prev->second);
    if (old_leader != kNoNode) {
        Message m;
        m.kind = MsgKind::StateRequest;
        m.src = self;
        m.dst = old_leader;
        m.group = ekey(key);
        m.epoch = key.epoch - 1;
        send(std::move(m));
    }
    // case 2a fallback: reconstruct from the old group's members
    double rtt = r->rtt_estimate;
    schedule(kTransferTimeoutRtts * rtt, [this, self, key] {
        GroupReplica* rr = replica(self, key);
        if (!rr || rr->state_received || !rr->i_am_leader) return;
        auto prev2 = prev_committees_.find(ekey(key));
        if (prev2 == prev_committees_.end()) return;
        rr->recon_replies.clear();
        for (NodeId m : prev2->second.members) {
            if (!published_->is_alive_smart(m)) continue;
            Message msg;
            msg.kind = MsgKind::StateRequest;
            msg.src = self;
            msg.dst = m;
            msg.group = ekey(key);
            msg.epoch = key.epoch - 1;
            send(std::move(msg));
        }
        schedule(kTransferTimeoutRtts * rr->rtt_estimate, [this, self, key] {
            GroupReplica* r3 = replica(self, key);
            if (!r3 || r3->state_received || !r3->i_am_leader) return;
            // old group unreachable: proceed with whatever replies arrived
            std::vector<std::map<Seq, StateEntry>> replies;
            for (const auto& [m, log] : r3->recon_replies) replies.push_back(log);
            install_transferred_state(self, key, [&] {
                std::vector<StateEntry> out;
                for (auto& [s, e] : reconstruct_entries(replies)) out.push_back(e);
                return out;
            }(), r3->transfer_request_time);
        });
    });
}

void SimHarness::install_transferred_state(NodeId self, GroupKey key, std::vector<StateEntry> entries,
                                           Time requested_at) {
    GroupReplica* r = replica(self, key);
    if (!r || r->state_received) return;
    r->state_received = true;
    r->log.clear();
    for (auto& e : entries) r->log[e.seq] = e;
    r->proj = fold_entries(r->log);
    r->committed.clear();
    for (auto& [s, e] : r->log) r->committed.insert(s);
    r->next_seq = r->log.empty() ? 1 : r->log.rbegin()->first + 1;

    TraceRecord rec = base_rec(Rec::StateTransfer, *r);
    rec.value = queue_.now() - requested_at;
    rec.b = static_cast<int64_t>(r->log.size());
    emit(rec);

    replicate_snapshot(self, key);
}

void SimHarness::replicate_snapshot(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader) return;
    r->snapshot_acks.clear();
    if (static_cast<int>(r->snapshot_acks.size()) + 1 >= r->quorum()) {
        r->snapshot_committed = true;
        finish_migration(self, key);
        return;
    }
    std::vector<StateEntry> entries;
    for (auto& [s, e] : r->log) entries.push_back(e);
    for (NodeId m : r->members) {
        if (m == self || !published_->is_alive_smart(m)) continue;
        Message msg;
        msg.kind = MsgKind::Replicate;
        msg.src = self;
        msg.dst = m;
        msg.group = ekey(key);
        msg.epoch = key.epoch;
        msg.snapshot = true;
        msg.entries = entries;
        send(std::move(msg));
    }
    schedule(kReplicateRetryRtts * r->rtt_estimate, [this, self, key] {
        GroupReplica* rr = replica(self, key);
        if (!rr || rr->snapshot_committed || !rr->i_am_leader || !rr->state_received) return;
        ++counters_.quorum_timeouts;
        emit(base_rec(Rec::QuorumTimeout, *rr));
        replicate_snapshot(self, key);
    });
}

void SimHarness::finish_migration(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r || r->status != GroupStatus::Forming) return;
    if (key.epoch == 0) {
        activate_replica(self, key);
        return;
    }
    auto prev = prev_committees_.find(ekey(key));
    NodeId old_leader = prev == prev_committees_.end() ? kNoNode : resolve_leader_at(prev->second);
    if (old_leader == kNoNode) {
        // old leader gone: decommission old members directly (fallback step 6)
        if (prev != prev_committees_.end())
            for (NodeId m : prev->second.members) {
                if (!published_->is_alive_smart(m)) continue;
                Message msg;
                msg.kind = MsgKind::Decommission;
                msg.src = self;
                msg.dst = m;
                msg.group = ekey(key);
                msg.epoch = key.epoch - 1;
                send(std::move(msg));
            }
        activate_replica(self, key);
        return;
    }
    Message msg;  // step 5
    msg.kind = MsgKind::Decommission;
    msg.src = self;
    msg.dst = old_leader;
    msg.group = ekey(key);
    msg.epoch = key.epoch - 1;
    send(std::move(msg));
    schedule(4.0 * r->rtt_estimate, [this, self, key] {
        GroupReplica* rr = replica(self, key);
        if (!rr || rr->status != GroupStatus::Forming) return;
        activate_replica(self, key);  // old leader died mid-step-5; proceed
    });
}

void SimHarness::activate_replica(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r || r->status == GroupStatus::Active || r->status == GroupStatus::Decommissioned) return;
    r->status = GroupStatus::Active;
    TraceRecord rec = base_rec(Rec::GroupActive, *r);
    rec.src = self;
    rec.value = queue_.now() - epoch_started_at_;
    emit(rec);
    if (r->i_am_leader) resume_leader_duties(self, key);
    process_buffered(self, key);
}

void SimHarness::decommission_replica(NodeId node, GroupKey key) {
    GroupReplica* r = replica(node, key);
    if (!r || r->status == GroupStatus::Decommissioned) return;
    r->status = GroupStatus::Decommissioned;
    role_delta(node, false, -1);
    if (r->i_am_leader) {
        role_delta(node, true, -1);
        emit([&] {
            TraceRecord rec = base_rec(Rec::LeaderYield, *r);
            rec.src = node;
            return rec;
        }());
    }
    erase_replica(node, key, false);
}

void SimHarness::erase_replica(NodeId node, GroupKey key, bool) {
    nodes_[static_cast<size_t>(node)].replicas.erase(key);
    if (key.kind == EntityKind::Routine) nodes_[static_cast<size_t>(node)].engines.erase(key.id);
}

// --- election -----------------------------------------------------------------

void SimHarness::start_election(NodeId self, GroupKey key, int trigger) {
    GroupReplica* r = replica(self, key);
    if (!r || r->status == GroupStatus::Decommissioned || r->status == GroupStatus::Migrating) return;
    if (r->election_running) return;
    r->election_running = true;
    r->election_started = queue_.now();
    r->election_trigger = trigger;
    uint64_t nonce = ++r->election_nonce;
    r->got_prior_ack = false;

    const auto& view = nodes_[static_cast<size_t>(self)].view;
    NodeId expected = kNoNode;
    for (NodeId n : r->leadership)
        if (view->is_alive_smart(n) && !r->failed_since_selection.count(n)) {
            expected = n;
            break;
        }
    if (expected == self) {
        announce_coordinator(self, key);
        return;
    }
    if (trigger == 0 && expected == r->leadership.front()) {
        // healthy fast path: wait for the expected leader's announcement
        schedule(kCoordAwaitRtts * r->rtt_estimate, [this, self, key, nonce] {
            GroupReplica* rr = replica(self, key);
            if (!rr || rr->election_nonce != nonce || !rr->election_running) return;
            run_candidate(self, key, nonce);
        });
        return;
    }
    run_candidate(self, key, nonce);
}

void SimHarness::run_candidate(NodeId self, GroupKey key, uint64_t nonce) {
    GroupReplica* r = replica(self, key);
    if (!r || r->election_nonce != nonce || !r->election_running) return;
    std::vector<NodeId> priors;
    for (NodeId n : r->leadership) {
        if (n == self) break;
        priors.push_back(n);
    }
    if (priors.empty()) {
        announce_coordinator(self, key);
        return;
    }
    r->got_prior_ack = false;
    for (NodeId p : priors) {
        Message m;
        m.kind = MsgKind::Election;
        m.src = self;
        m.dst = p;
        m.group = ekey(key);
        m.epoch = key.epoch;
        send(std::move(m));
    }
    schedule(kProbeWaitRtts * r->rtt_estimate, [this, self, key, nonce] {
        GroupReplica* rr = replica(self, key);
        if (!rr || rr->election_nonce != nonce || !rr->election_running) return;
        if (!rr->got_prior_ack) {
            announce_coordinator(self, key);
            return;
        }
        schedule(kPostProbeWaitRtts * rr->rtt_estimate, [this, self, key, nonce] {
            GroupReplica* r2 = replica(self, key);
            if (!r2 || r2->election_nonce != nonce || !r2->election_running) return;
            run_candidate(self, key, nonce);  // a prior answered but never announced
        });
    });
}

void SimHarness::announce_coordinator(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r) return;
    bool was_leader = r->i_am_leader;
    r->i_am_leader = true;
    r->believed_leader = self;
    r->election_running = false;
    ++r->election_nonce;
    r->announce_time = queue_.now();
    r->coord_acks_pending.clear();
    if (!was_leader) {
        role_delta(self, true, +1);
        TraceRecord rec = base_rec(Rec::LeaderClaim, *r);
        rec.src = self;
        emit(rec);
    }
    const auto& view = nodes_[static_cast<size_t>(self)].view;
    for (NodeId m : r->members) {
        if (m == self || !view->is_alive_smart(m)) continue;
        r->coord_acks_pending[m] = 0.0;
        Message msg;
        msg.kind = MsgKind::Coordinator;
        msg.src = self;
        msg.dst = m;
        msg.group = ekey(key);
        msg.epoch = key.epoch;
        send(std::move(msg));
    }
    if (r->coord_acks_pending.empty()) {
        TraceRecord rec = base_rec(Rec::ElectionDone, *r);
        rec.src = self;
        rec.a = r->election_trigger;
        rec.value = queue_.now() - r->election_started;
        rec.value2 = 0.0;
        rec.bytes = r->rtt_estimate;
        emit(rec);
    }
    on_elected(self, key, r->election_trigger);
}

void SimHarness::on_coordinator(NodeId self, GroupKey key, const Message& m) {
    GroupReplica* r = replica(self, key);
    if (!r || r->status == GroupStatus::Decommissioned) return;
    const auto& self_view = nodes_[static_cast<size_t>(self)].view;
    if (!self_view->is_alive_smart(m.src) || r->failed_since_selection.count(m.src)) {
        // stale announcement from a node already known to be dead
        if (!r->election_running && r->status != GroupStatus::Migrating)
            start_election(self, key, 1);
        return;
    }
    auto rank = [&](NodeId n) {
        auto it = std::find(r->leadership.begin(), r->leadership.end(), n);
        return it == r->leadership.end() ? r->leadership.size()
                                         : static_cast<size_t>(it - r->leadership.begin());
    };
    const auto& view = nodes_[static_cast<size_t>(self)].view;
    bool believed_dead = r->believed_leader == kNoNode ||
                         !view->is_alive_smart(r->believed_leader) ||
                         r->failed_since_selection.count(r->believed_leader) > 0;
    Message ack;
    ack.kind = MsgKind::Ack;
    ack.re = MsgKind::Coordinator;
    ack.src = self;
    ack.dst = m.src;
    ack.group = m.group;
    ack.epoch = m.epoch;
    if (m.src == r->believed_leader || believed_dead || rank(m.src) <= rank(r->believed_leader)) {
        if (r->i_am_leader && m.src != self && rank(m.src) < rank(self)) {
            r->i_am_leader = false;
            ++r->duty_nonce;
            role_delta(self, true, -1);
            TraceRecord rec = base_rec(Rec::LeaderYield, *r);
            rec.src = self;
            emit(rec);
        }
        if (!r->i_am_leader || rank(m.src) < rank(self)) {
            r->believed_leader = m.src;
            r->election_running = false;
            ++r->election_nonce;
            ack.flag = true;
            if (r->epoch == 0 && r->status == GroupStatus::Forming) r->status = GroupStatus::Active;
            // hand any buffered client requests to the new leader
            if (!r->buffered.empty() && r->believed_leader != self) {
                for (Message& b : r->buffered) {
                    b.src = self;
                    b.dst = r->believed_leader;
                    b.forwarded = true;
                    send(std::move(b));
                }
                r->buffered.clear();
            }
        }
    } else {
        ack.flag = false;
        ack.leader_hint = r->believed_leader;
    }
    send(std::move(ack));
}

void SimHarness::on_elected(NodeId self, GroupKey key, int trigger) {
    GroupReplica* r = replica(self, key);
    if (!r) return;
    if (r->status == GroupStatus::Forming) {
        if (key.epoch == 0) {
            activate_replica(self, key);
        } else if (!r->state_received) {
            request_state_transfer(self, key);  // steps 3-4 (or case 2b restart)
        } else if (!r->snapshot_committed) {
            replicate_snapshot(self, key);
        } else {
            finish_migration(self, key);
        }
        return;
    }
    if (r->status == GroupStatus::Active && trigger == 1) {
        start_reconstruction(self, key);  // appendix case 1
    } else if (r->status == GroupStatus::Active) {
        resume_leader_duties(self, key);
    }
}

// --- replication -----------------------------------------------------------------

void SimHarness::leader_commit(NodeId self, GroupKey key, StateEntry draft,
                               std::function<void()> then, bool urgent) {
    GroupReplica* r = replica(self, key);
    // commits only run while actively serving: continuations that land after a
    // migration boundary (or mid-reconstruction) must not extend the old log,
    // or the entries would silently miss the already-transferred state
    if (!r || !r->i_am_leader || r->status != GroupStatus::Active || r->reconstructing) return;
    draft.seq = r->next_seq++;
    Seq seq = draft.seq;
    r->log[seq] = draft;
    r->acks[seq] = {self};
    if (then) r->on_commit[seq] = std::move(then);
    if (static_cast<int>(r->acks[seq].size()) >= r->quorum()) {
        commit_ready(self, key, seq);
        return;
    }
    if (!urgent) {
        // monitoring traffic rides one wire round per window instead of one per entry
        r->batch_pending.push_back(seq);
        if (!r->batch_armed) {
            r->batch_armed = true;
            schedule(cfg_.replicate_batch_window, [this, self, key] { flush_batch(self, key); });
        }
        schedule(kReplicateRetryRtts * r->rtt_estimate,
                 [this, self, key, seq] { replicate_retry(self, key, seq, 1); });
        return;
    }
    const auto& view = nodes_[static_cast<size_t>(self)].view;
    for (NodeId m : r->members) {
        if (m == self || !view->is_alive_smart(m) || r->failed_since_selection.count(m)) continue;
        Message msg;
        msg.kind = MsgKind::Replicate;
        msg.src = self;
        msg.dst = m;
        msg.group = ekey(key);
        msg.epoch = key.epoch;
        msg.seq = seq;
        msg.entries = {draft};
        send(std::move(msg));
    }
    schedule(kReplicateRetryRtts * r->rtt_estimate,
             [this, self, key, seq] { replicate_retry(self, key, seq, 1); });
}

void SimHarness::flush_batch(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r) return;
    r->batch_armed = false;
    if (!r->i_am_leader || r->batch_pending.empty()) {
        r->batch_pending.clear();
        return;
    }
    std::vector<Seq> seqs;
    std::vector<StateEntry> entries;
    for (Seq s : r->batch_pending) {
        auto it = r->log.find(s);
        if (it == r->log.end() || r->committed.count(s)) continue;
        seqs.push_back(s);
        entries.push_back(it->second);
    }
    r->batch_pending.clear();
    if (seqs.empty()) return;
    Seq tail = seqs.back();
    r->batches[tail] = seqs;
    const auto& view = nodes_[static_cast<size_t>(self)].view;
    for (NodeId m : r->members) {
        if (m == self || !view->is_alive_smart(m) || r->failed_since_selection.count(m)) continue;
        Message msg;
        msg.kind = MsgKind::Replicate;
        msg.src = self;
        msg.dst = m;
        msg.group = ekey(key);
        msg.epoch = key.epoch;
        msg.seq = tail;
        msg.entries = entries;
        send(std::move(msg));
    }
}

void SimHarness::replicate_retry(NodeId self, GroupKey key, Seq seq, int tries) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader || r->committed.count(seq)) return;
    ++counters_.quorum_timeouts;
    emit(base_rec(Rec::QuorumTimeout, *r));
    auto it = r->log.find(seq);
    if (it == r->log.end()) return;
    const auto& view = nodes_[static_cast<size_t>(self)].view;
    for (NodeId m : r->members) {
        if (m == self || !view->is_alive_smart(m) || r->acks[seq].count(m)) continue;
        Message msg;
        msg.kind = MsgKind::Replicate;
        msg.src = self;
        msg.dst = m;
        msg.group = ekey(key);
        msg.epoch = key.epoch;
        msg.seq = seq;
        msg.entries = {it->second};
        send(std::move(msg));
    }
    schedule(kReplicateRetryRtts * r->rtt_estimate,
             [this, self, key, seq, tries] { replicate_retry(self, key, seq, tries + 1); });
}

void SimHarness::commit_ready(NodeId self, GroupKey key, Seq seq) {
    GroupReplica* r = replica(self, key);
    if (!r || r->committed.count(seq)) return;
    auto it = r->log.find(seq);
    if (it == r->log.end()) return;
    r->committed.insert(seq);
    r->proj.apply(it->second);
    const StateEntry& e = it->second;

    TraceRecord rec = base_rec(Rec::Commit, *r);
    rec.src = self;
    rec.a = static_cast<int64_t>(e.kind);
    rec.b = static_cast<int64_t>(seq);
    rec.device = e.device;
    rec.routine = e.routine;
    rec.value = e.reading;
    rec.value2 = static_cast<double>(e.instance);
    rec.hops = static_cast<int>(e.stage);
    rec.flag = e.up;
    emit(rec);
    if (e.kind == EntryKind::RoutineStage) {
        TraceRecord sc = base_rec(Rec::StageChange, *r);
        sc.src = self;
        sc.routine = r->entity.id;
        sc.a = static_cast<int64_t>(e.stage);
        sc.b = static_cast<int64_t>(e.instance);
        emit(sc);
    }
    auto cont = r->on_commit.find(seq);
    if (cont != r->on_commit.end()) {
        auto fn = std::move(cont->second);
        r->on_commit.erase(cont);
        fn();
    }
}

// --- failure response ----------------------------------------------------------

void SimHarness::handle_member_failure(NodeId self, GroupKey key, NodeId failed) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->is_member(failed) || r->failed_since_selection.count(failed)) return;
    r->failed_since_selection.insert(failed);
    if (failed == r->believed_leader && r->status != GroupStatus::Migrating) {
        r->believed_leader = kNoNode;
        start_election(self, key, 1);
    }
    if (r->i_am_leader && r->f > 0 && r->status == GroupStatus::Active) {
        int lost = 0;
        for (NodeId m : r->members)
            if (r->failed_since_selection.count(m)) ++lost;
        if (lost >= r->f) recruit_replacements(self, key);
    }
}

void SimHarness::recruit_replacements(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader || r->status == GroupStatus::Decommissioned) return;
    const auto& view = nodes_[static_cast<size_t>(self)].view;
    std::vector<NodeId> continuing;
    for (NodeId m : r->members)
        if (view->is_alive_smart(m) && !r->failed_since_selection.count(m)) continuing.push_back(m);
    int need = (2 * r->f + 1) - static_cast<int>(continuing.size());
    if (need <= 0) return;
    std::vector<NodeId> exclude = r->members;
    for (NodeId m : r->failed_since_selection) exclude.push_back(m);
    std::vector<NodeId> order = recruitment_order(view, ekey(key), key.epoch, exclude);
    std::vector<NodeId> recruits(order.begin(),
                                 order.begin() + std::min<size_t>(order.size(), static_cast<size_t>(need)));
    if (recruits.empty()) return;

    std::vector<NodeId> new_leadership;
    for (NodeId m : r->leadership)
        if (std::find(continuing.begin(), continuing.end(), m) != continuing.end())
            new_leadership.push_back(m);
    for (NodeId m : recruits) new_leadership.push_back(m);
    std::vector<NodeId> new_members = continuing;
    new_members.insert(new_members.end(), recruits.begin(), recruits.end());
    std::sort(new_members.begin(), new_members.end());

    std::vector<StateEntry> entries;
    for (auto& [s, e] : r->log) entries.push_back(e);
    for (NodeId m : new_members) {
        if (m == self) continue;
        Message msg;
        msg.kind = MsgKind::Recruit;
        msg.src = self;
        msg.dst = m;
        msg.group = ekey(key);
        msg.epoch = key.epoch;
        msg.roster = new_members;
        msg.leadership = new_leadership;
        bool is_new = std::find(recruits.begin(), recruits.end(), m) != recruits.end();
        if (is_new) msg.entries = entries;
        send(std::move(msg));
        if (is_new) {
            TraceRecord rec = base_rec(Rec::Recruited, *r);
            rec.src = self;
            rec.dst = m;
            emit(rec);
        }
    }
    r->members = new_members;
    r->leadership = new_leadership;
    r->failed_since_selection.clear();
    r->rtt_estimate = estimate_rtt(r->members);
}

void SimHarness::start_reconstruction(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader) return;
    r->reconstructing = true;
    uint64_t nonce = ++r->recon_nonce;
    r->recon_replies.clear();
    r->recon_replies[self] = r->log;
    if (static_cast<int>(r->recon_replies.size()) >= r->quorum()) {
        finish_reconstruction(self, key);
        return;
    }
    const auto& view = nodes_[static_cast<size_t>(self)].view;
    for (NodeId m : r->members) {
        if (m == self || !view->is_alive_smart(m) || r->failed_since_selection.count(m)) continue;
        Message msg;
        msg.kind = MsgKind::StateRequest;
        msg.src = self;
        msg.dst = m;
        msg.group = ekey(key);
        msg.epoch = key.epoch;
        send(std::move(msg));
    }
    schedule(kTransferTimeoutRtts * r->rtt_estimate, [this, self, key, nonce] {
        GroupReplica* rr = replica(self, key);
        if (!rr || !rr->reconstructing || rr->recon_nonce != nonce) return;
        ++counters_.quorum_timeouts;
        emit(base_rec(Rec::QuorumTimeout, *rr));
        rr->reconstructing = false;
        start_reconstruction(self, key);  // ReconstructionStalled: retry
    });
}

void SimHarness::finish_reconstruction(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->reconstructing) return;
    r->reconstructing = false;
    std::vector<std::map<Seq, StateEntry>> replies;
    for (const auto& [m, log] : r->recon_replies) replies.push_back(log);
    r->log = reconstruct_entries(replies);
    r->proj = fold_entries(r->log);
    r->committed.clear();
    for (auto& [s, e] : r->log) r->committed.insert(s);
    r->next_seq = r->log.empty() ? 1 : r->log.rbegin()->first + 1;
    TraceRecord rec = base_rec(Rec::Reconstructed, *r);
    rec.src = self;
    rec.b = static_cast<int64_t>(r->log.size());
    emit(rec);
    resume_leader_duties(self, key);
    process_buffered(self, key);
}

void SimHarness::resume_leader_duties(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader || r->status != GroupStatus::Active) return;
    ++r->duty_nonce;
    if (key.kind == EntityKind::DeviceCluster) {
        start_monitoring(self, key);
        device_resume_grants(self, key);
    } else {
        routine_resume(self, key);
    }
}

// --- device cluster role -----------------------------------------------------------

void SimHarness::start_monitoring(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r) return;
    uint64_t nonce = r->duty_nonce;
    for (NodeId d = 0; d < topo_.n; ++d) {
        if (clusters_.assignment[static_cast<size_t>(d)] != key.id) continue;
        double phase = static_cast<double>(mix_seed({static_cast<uint64_t>(d), 0xF00DULL}) % 1000) /
                       1000.0 * cfg_.monitor_period;
        NodeId dev = d;
        schedule(phase, [this, self, key, dev, nonce] { ping_tick(self, key, dev, nonce); });
    }
}

void SimHarness::ping_tick(NodeId self, GroupKey key, NodeId device, uint64_t nonce) {
    GroupReplica* r = replica(self, key);
    if (!r || r->duty_nonce != nonce || !r->i_am_leader || r->status != GroupStatus::Active) return;
    if (!nodes_[static_cast<size_t>(self)].alive) return;

    uint64_t ping_id = ++ping_counter_;
    Message m;
    m.kind = MsgKind::Ping;
    m.src = self;
    m.dst = device;
    m.group = ekey(key);
    m.epoch = key.epoch;
    m.device = device;
    m.version = ping_id;
    send(std::move(m));

    int hops = std::max(1, net_.hop_distance(self, device));
    double rtt = 2.0 * hops + 1.0;
    schedule(2.0 * rtt, [this, self, key, device, ping_id, nonce] {
        GroupReplica* rr = replica(self, key);
        if (!rr || rr->duty_nonce != nonce || !rr->i_am_leader || rr->status != GroupStatus::Active)
            return;
        auto& acked = nodes_[static_cast<size_t>(self)].ping_acked;
        auto it = acked.find(device);
        if (it == acked.end() || it->second < ping_id) presume_device_failed(self, key, device);
    });
    schedule(cfg_.monitor_period, [this, self, key, device, nonce] { ping_tick(self, key, device, nonce); });
}

void SimHarness::on_ping_ack(NodeId self, GroupKey key, const Message& m) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader || r->status != GroupStatus::Active) return;
    auto& acked = nodes_[static_cast<size_t>(self)].ping_acked;
    auto it = acked.find(m.device);
    if (it == acked.end() || it->second < m.version) acked[m.device] = m.version;

    NodeId d = m.device;
    auto& inflight = nodes_[static_cast<size_t>(self)].device_commit_inflight[key];
    if (inflight.count(d)) return;  // a monitoring commit chain is already running
    auto cur = r->proj.devices.find(d);
    bool known = cur != r->proj.devices.end() && cur->second.version > 0;
    bool was_up = !known || cur->second.up;
    double recorded = known ? cur->second.reading : 0.0;
    uint64_t ver = known ? cur->second.version : 0;

    if (!was_up || !known) {
        StateEntry e;
        e.kind = EntryKind::DeviceAvail;
        e.device = d;
        e.up = true;
        e.version = ver + 1;
        double reading = m.value;
        inflight.insert(d);
        leader_commit(self, key, e, [this, self, key, d, reading] {
            GroupReplica* rr = replica(self, key);
            if (!rr) return;
            StateEntry re;
            re.kind = EntryKind::DeviceReading;
            re.device = d;
            re.reading = reading;
            re.version = rr->proj.devices[d].version + 1;
            leader_commit(self, key, re, [this, self, key, d] {
                nodes_[static_cast<size_t>(self)].device_commit_inflight[key].erase(d);
                GroupReplica* r3 = replica(self, key);
                if (r3) forward_state_update(self, *r3, d);
            }, false);
        }, false);
        return;
    }
    if (recorded != m.value) {
        StateEntry e;
        e.kind = EntryKind::DeviceReading;
        e.device = d;
        e.reading = m.value;
        e.version = ver + 1;
        inflight.insert(d);
        leader_commit(self, key, e, [this, self, key, d] {
            nodes_[static_cast<size_t>(self)].device_commit_inflight[key].erase(d);
            GroupReplica* rr = replica(self, key);
            if (rr) forward_state_update(self, *rr, d);
        }, false);
    }
}

void SimHarness::presume_device_failed(NodeId self, GroupKey key, NodeId device) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader) return;
    auto cur = r->proj.devices.find(device);
    if (cur != r->proj.devices.end() && cur->second.version > 0 && !cur->second.up) return;
    StateEntry e;
    e.kind = EntryKind::DeviceAvail;
    e.device = device;
    e.up = false;
    e.version = (cur != r->proj.devices.end() ? cur->second.version : 0) + 1;
    leader_commit(self, key, e, [this, self, key, device] {
        GroupReplica* rr = replica(self, key);
        if (!rr) return;
        // notify every smart node that the device is presumed failed
        for (NodeId n = 0; n < topo_.n; ++n) {
            if (!published_->is_alive_smart(n)) continue;
            Message msg;
            msg.kind = MsgKind::StateUpdate;
            msg.src = self;
            msg.dst = n;
            msg.group = ekey(key);
            msg.epoch = key.epoch;
            msg.device = device;
            msg.flag = true;  // availability record
            msg.instance = 0;
            send(std::move(msg));
        }
    });
}

void SimHarness::forward_state_update(NodeId self, const GroupReplica& r, NodeId device) {
    auto subs = subs_.device_to_routines.find(device);
    if (subs == subs_.device_to_routines.end()) return;
    const DeviceState& st = r.proj.devices.at(device);
    for (int32_t rid : subs->second) {
        NodeId target = resolve_leader({EntityKind::Routine, rid});
        if (target == kNoNode) continue;
        Message msg;
        msg.kind = MsgKind::StateUpdate;
        msg.src = self;
        msg.dst = target;
        msg.group = {EntityKind::Routine, rid};
        msg.epoch = cur_epoch_;
        msg.device = device;
        msg.value = st.reading;
        msg.version = st.version;
        send(std::move(msg));
    }
}

void SimHarness::handle_lock_req(NodeId self, GroupKey key, const Message& m) {
    GroupReplica* r = replica(self, key);
    if (!r) return;
    auto& lq = r->proj.locks[m.device];
    if (lq.holder == m.routine) {
        send_grant(self, *r, m.device, m.routine, false, -1.0);
        return;
    }
    if (m.flag) {  // OLA confirm after pre-lock round
        if (lq.preholder == m.routine || (lq.holder < 0 && lq.preholder < 0 && lq.waiters.empty())) {
            StateEntry e;
            e.kind = EntryKind::LockGrant;
            e.device = m.device;
            e.routine = m.routine;
            NodeId dev = m.device;
            int32_t rid = m.routine;
            leader_commit(self, key, e, [this, self, key, dev, rid] {
                GroupReplica* rr = replica(self, key);
                if (rr) send_grant(self, *rr, dev, rid, false, -1.0);
            });
        } else {
            Message refuse;
            refuse.kind = MsgKind::LockRefuse;
            refuse.src = self;
            refuse.dst = resolve_leader({EntityKind::Routine, m.routine});
            refuse.group = {EntityKind::Routine, m.routine};
            refuse.epoch = cur_epoch_;
            refuse.device = m.device;
            refuse.routine = m.routine;
            if (refuse.dst != kNoNode) send(std::move(refuse));
        }
        return;
    }
    for (const auto& [rid, s] : lq.waiters)
        if (rid == m.routine) return;  // duplicate: already queued
    StateEntry e;
    e.kind = EntryKind::LockEnqueue;
    e.device = m.device;
    e.routine = m.routine;
    e.version = m.reqseq;
    NodeId dev = m.device;
    leader_commit(self, key, e, [this, self, key, dev] { maybe_grant(self, key, dev, -1.0); });
}

void SimHarness::handle_prelock_req(NodeId self, GroupKey key, const Message& m) {
    GroupReplica* r = replica(self, key);
    if (!r) return;
    auto& lq = r->proj.locks[m.device];
    if (lq.preholder == m.routine || lq.holder == m.routine) {
        send_grant(self, *r, m.device, m.routine, true, -1.0);
        return;
    }
    if (lq.holder < 0 && lq.preholder < 0 && lq.waiters.empty()) {
        StateEntry e;
        e.kind = EntryKind::PreLock;
        e.device = m.device;
        e.routine = m.routine;
        e.version = m.reqseq;
        NodeId dev = m.device;
        int32_t rid = m.routine;
        leader_commit(self, key, e, [this, self, key, dev, rid] {
            GroupReplica* rr = replica(self, key);
            if (rr) send_grant(self, *rr, dev, rid, true, -1.0);
        });
        return;
    }
    Message refuse;
    refuse.kind = MsgKind::LockRefuse;
    refuse.src = self;
    refuse.dst = resolve_leader({EntityKind::Routine, m.routine});
    refuse.group = {EntityKind::Routine, m.routine};
    refuse.epoch = cur_epoch_;
    refuse.device = m.device;
    refuse.routine = m.routine;
    if (refuse.dst != kNoNode) send(std::move(refuse));
}

void SimHarness::handle_lock_release(NodeId self, GroupKey key, const Message& m) {
    GroupReplica* r = replica(self, key);
    if (!r) return;
    auto& lq = r->proj.locks[m.device];
    if (m.flag) {  // pre-lock release (OLA backout), no ack expected
        if (lq.preholder != m.routine) return;
        StateEntry e;
        e.kind = EntryKind::PreLockRelease;
        e.device = m.device;
        e.routine = m.routine;
        NodeId dev = m.device;
        leader_commit(self, key, e, [this, self, key, dev] { maybe_grant(self, key, dev, -1.0); });
        return;
    }
    auto ack_release = [this, self, key, m] {
        Message ack;
        ack.kind = MsgKind::Ack;
        ack.re = MsgKind::LockRelease;
        ack.src = self;
        ack.dst = resolve_leader({EntityKind::Routine, m.routine});
        ack.group = {EntityKind::Routine, m.routine};
        ack.epoch = cur_epoch_;
        ack.device = m.device;
        ack.routine = m.routine;
        if (ack.dst != kNoNode) send(std::move(ack));
    };
    if (lq.holder != m.routine) {
        ack_release();  // stale or repeated release: idempotent re-ack
        return;
    }
    StateEntry e;
    e.kind = EntryKind::LockRelease;
    e.device = m.device;
    e.routine = m.routine;
    NodeId dev = m.device;
    int32_t rid = m.routine;
    leader_commit(self, key, e, [this, self, key, dev, rid, ack_release] {
        TraceRecord rec;
        rec.kind = Rec::LockReleased;
        rec.ekind = key.kind;
        rec.eid = key.id;
        rec.epoch = key.epoch;
        rec.device = dev;
        rec.routine = rid;
        emit(rec);
        ack_release();
        maybe_grant(self, key, dev, queue_.now());
    });
}

void SimHarness::maybe_grant(NodeId self, GroupKey key, NodeId device, Time caused_by_release) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader || r->status != GroupStatus::Active) return;
    auto it = r->proj.locks.find(device);
    if (it == r->proj.locks.end()) return;
    auto& lq = it->second;
    if (lq.holder >= 0 || lq.preholder >= 0 || lq.waiters.empty()) return;
    int32_t next_routine = lq.waiters.front().first;
    StateEntry e;
    e.kind = EntryKind::LockGrant;
    e.device = device;
    e.routine = next_routine;
    leader_commit(self, key, e, [this, self, key, device, next_routine, caused_by_release] {
        GroupReplica* rr = replica(self, key);
        if (rr) send_grant(self, *rr, device, next_routine, false, caused_by_release);
    });
}

void SimHarness::send_grant(NodeId self, GroupReplica& r, NodeId device, int32_t routine_id,
                            bool prelock, Time caused_by_release) {
    NodeId target = resolve_leader({EntityKind::Routine, routine_id});
    if (!prelock) {
        TraceRecord rec;
        rec.kind = Rec::LockGranted;
        rec.ekind = r.entity.kind;
        rec.eid = r.entity.id;
        rec.epoch = r.epoch;
        rec.device = device;
        rec.routine = routine_id;
        rec.value = caused_by_release;
        rec.bytes = r.rtt_estimate;  // the serving group's RTT scale
        emit(rec);
    }
    if (target == kNoNode) return;
    Message msg;
    msg.kind = MsgKind::LockGrant;
    msg.src = self;
    msg.dst = target;
    msg.group = {EntityKind::Routine, routine_id};
    msg.epoch = cur_epoch_;
    msg.device = device;
    msg.routine = routine_id;
    msg.flag = prelock;
    msg.value = caused_by_release;
    send(std::move(msg));
}

void SimHarness::device_resume_grants(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r) return;
    // after failover or migration: re-notify holders, re-grant free queues
    for (const auto& [device, lq] : r->proj.locks) {
        if (lq.holder >= 0)
            send_grant(self, *r, device, lq.holder, false, -1.0);
        else if (lq.preholder >= 0)
            send_grant(self, *r, device, lq.preholder, true, -1.0);
        else
            maybe_grant(self, key, device, -1.0);
    }
}

// --- routine role ------------------------------------------------------------------

void SimHarness::handle_state_update(NodeId self, GroupKey key, const Message& m) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader) return;
    auto& node = nodes_[static_cast<size_t>(self)];
    auto& eng = node.engines[key.id];
    eng.readings[m.device] = m.value;
    if (r->status != GroupStatus::Active || r->reconstructing) return;
    if (r->proj.stage != Stage::NotTriggered) return;
    if (queue_.now() - eng.last_completed < cfg_.trigger_refractory && eng.last_completed > 0) return;

    auto rit = routine_index_.find(key.id);
    if (rit == routine_index_.end()) return;
    const Routine& routine = workload_.routines[rit->second];
    if (!eval_trigger(routine.trigger, eng.readings, queue_.now())) return;

    uint64_t instance = r->proj.instance + 1;
    eng.trigger_arrival = queue_.now();
    ++eng.nonce;
    eng.requested.clear();
    eng.prelocked.clear();
    eng.confirmed.clear();
    eng.refused.clear();
    eng.skipped.clear();
    eng.ola_round_open = false;
    eng.backoff_attempt = 0;
    eng.next_cmd = 0;
    eng.cmd_retries = 0;
    eng.last_unblock_release = -1.0;

    TraceRecord rec = base_rec(Rec::TriggerArrival, *r);
    rec.routine = key.id;
    rec.b = static_cast<int64_t>(instance);
    emit(rec);

    StateEntry e;
    e.kind = EntryKind::RoutineStage;
    e.stage = Stage::AcquiringLocks;
    e.instance = instance;
    leader_commit(self, key, e, [this, self, key] { start_locking(self, key); });
}

void SimHarness::start_locking(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader || r->proj.stage != Stage::AcquiringLocks) return;
    auto& node = nodes_[static_cast<size_t>(self)];
    auto& eng = node.engines[key.id];
    auto rit = routine_index_.find(key.id);
    if (rit == routine_index_.end()) return;
    const Routine& routine = workload_.routines[rit->second];

    // locks are acquired for every command-set device, DOWN or not: the lock
    // lives at the device's k-group, and skipping differently per routine would
    // let two conflicting routines slip past each other. The DOWN-device
    // skip-and-log policy applies to command actuation instead.
    eng.lock_order.assign(routine.command_set().begin(), routine.command_set().end());
    if (cfg_.locking == LockingStrategy::Sla) {
        sla_request_next(self, key);
    } else {
        uint64_t nonce = eng.nonce;
        ola_restart(self, key, nonce);
    }
}

void SimHarness::sla_request_next(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader || r->proj.stage != Stage::AcquiringLocks) return;
    auto& eng = nodes_[static_cast<size_t>(self)].engines[key.id];
    for (NodeId d : eng.lock_order) {
        if (r->proj.locked.count(d)) continue;
        send_lock_request(self, key, d, false, false);
        return;
    }
    to_executing(self, key);
}

void SimHarness::send_lock_request(NodeId self, GroupKey key, NodeId device, bool prelock,
                                   bool confirm) {
    GroupReplica* r = replica(self, key);
    if (!r) return;
    auto& eng = nodes_[static_cast<size_t>(self)].engines[key.id];
    EntityKey dev_group_key = device_group(device);
    NodeId target = resolve_leader(dev_group_key);
    if (!eng.requested.count(device)) {
        eng.requested.insert(device);
        TraceRecord rec = base_rec(Rec::LockRequested, *r);
        rec.routine = key.id;
        rec.device = device;
        rec.src = self;
        emit(rec);
    }
    Message m;
    m.kind = prelock ? MsgKind::PrelockReq : MsgKind::LockReq;
    m.src = self;
    m.dst = target;
    m.group = dev_group_key;
    m.epoch = cur_epoch_;
    m.device = device;
    m.routine = key.id;
    m.reqseq = r->proj.instance;
    m.flag = confirm;
    if (target != kNoNode) send(std::move(m));
    uint64_t nonce = eng.nonce;
    if (!prelock)
        schedule(kLockRetryRtts * r->rtt_estimate,
                 [this, self, key, device, nonce] { lock_retry(self, key, device, nonce, 1); });
}

void SimHarness::lock_retry(NodeId self, GroupKey key, NodeId device, uint64_t nonce, int tries) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader || r->proj.stage != Stage::AcquiringLocks) return;
    auto& eng = nodes_[static_cast<size_t>(self)].engines[key.id];
    if (eng.nonce != nonce) return;
    if (r->proj.locked.count(device)) return;
    if (cfg_.locking == LockingStrategy::Ola && eng.ola_round_open)
        return;  // an open OLA round manages its own retries via backoff
    if (tries >= 2) {
        // leader unknown or silent: ask all device k-group members who leads
        auto com = committees_.find(device_group(device));
        if (com != committees_.end()) {
            for (NodeId m : com->second.members) {
                if (!published_->is_alive_smart(m)) continue;
                Message q;
                q.kind = MsgKind::StateRequest;
                q.src = self;
                q.dst = m;
                q.group = device_group(device);
                q.epoch = cur_epoch_;
                q.flag = true;  // leader query
                q.routine = key.id;
                q.device = device;
                send(std::move(q));
            }
        }
    }
    send_lock_request(self, key, device, false, false);
}

void SimHarness::on_lock_grant(NodeId self, GroupKey key, const Message& m) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader) return;
    auto& eng = nodes_[static_cast<size_t>(self)].engines[key.id];
    if (m.value >= 0.0) eng.last_unblock_release = std::max(eng.last_unblock_release, m.value);
    if (r->proj.stage != Stage::AcquiringLocks) return;
    if (m.flag) {  // OLA pre-lock granted
        eng.prelocked.insert(m.device);
        ola_consider_round(self, key);
        return;
    }
    if (r->proj.locked.count(m.device)) return;  // duplicate grant
    {
        TraceRecord rec = base_rec(Rec::LockServiced, *r);
        rec.routine = key.id;
        rec.device = m.device;
        rec.value = m.value;
        emit(rec);
    }
    StateEntry e;
    e.kind = EntryKind::LockedDevice;
    e.device = m.device;
    e.instance = r->proj.instance;
    leader_commit(self, key, e, [this, self, key] {
        GroupReplica* rr = replica(self, key);
        if (!rr) return;
        if (cfg_.locking == LockingStrategy::Sla) {
            sla_request_next(self, key);
        } else {
            auto& eg = nodes_[static_cast<size_t>(self)].engines[key.id];
            if (rr->proj.locked.size() >= eg.lock_order.size()) to_executing(self, key);
        }
    });
}

void SimHarness::on_lock_refuse(NodeId self, GroupKey key, const Message& m) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader || r->proj.stage != Stage::AcquiringLocks) return;
    auto& eng = nodes_[static_cast<size_t>(self)].engines[key.id];
    eng.refused.insert(m.device);
    ola_consider_round(self, key);
}

void SimHarness::ola_consider_round(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader) return;
    auto& eng = nodes_[static_cast<size_t>(self)].engines[key.id];
    if (!eng.ola_round_open) return;
    for (NodeId d : eng.lock_order)
        if (!eng.prelocked.count(d) && !eng.refused.count(d)) return;  // round still open
    eng.ola_round_open = false;
    uint64_t nonce = eng.nonce;
    if (eng.refused.empty()) {
        // all pre-locked: confirm each for execution
        for (NodeId d : eng.lock_order) send_lock_request(self, key, d, false, true);
        return;
    }
    // refusal: release pre-locks, back off, retry the whole set
    for (NodeId d : eng.prelocked) {
        Message rel;
        rel.kind = MsgKind::LockRelease;
        rel.src = self;
        rel.dst = resolve_leader(device_group(d));
        rel.group = device_group(d);
        rel.epoch = cur_epoch_;
        rel.device = d;
        rel.routine = key.id;
        rel.flag = true;  // pre-lock release
        if (rel.dst != kNoNode) send(std::move(rel));
    }
    eng.prelocked.clear();
    eng.refused.clear();
    ++eng.backoff_attempt;
    double base = std::min(cfg_.ola_backoff_base * std::pow(2.0, eng.backoff_attempt - 1),
                           cfg_.ola_backoff_cap);
    Rng jitter(mix_seed({seed_, 0xBACC0FFULL, static_cast<uint64_t>(self),
                         static_cast<uint64_t>(static_cast<uint32_t>(key.id)),
                         static_cast<uint64_t>(eng.backoff_attempt)}));
    double delay = base * (0.5 + jitter.uniform_real());
    schedule(delay, [this, self, key, nonce] { ola_restart(self, key, nonce); });
}

void SimHarness::ola_restart(NodeId self, GroupKey key, uint64_t nonce) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader || r->proj.stage != Stage::AcquiringLocks) return;
    auto& eng = nodes_[static_cast<size_t>(self)].engines[key.id];
    if (eng.nonce != nonce) return;
    eng.prelocked.clear();
    eng.refused.clear();
    eng.ola_round_open = true;
    bool any = false;
    for (NodeId d : eng.lock_order) {
        if (r->proj.locked.count(d)) {  // already held from a previous leader's round
            eng.prelocked.insert(d);
            continue;
        }
        any = true;
        send_lock_request(self, key, d, true, false);
    }
    if (!any) ola_consider_round(self, key);
}

void SimHarness::to_executing(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader || r->proj.stage != Stage::AcquiringLocks) return;
    StateEntry e;
    e.kind = EntryKind::RoutineStage;
    e.stage = Stage::Executing;
    e.instance = r->proj.instance;
    leader_commit(self, key, e, [this, self, key] {
        auto& eng = nodes_[static_cast<size_t>(self)].engines[key.id];
        eng.next_cmd = 0;
        eng.cmd_retries = 0;
        issue_next_command(self, key);
    });
}

void SimHarness::issue_next_command(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader || r->proj.stage != Stage::Executing) return;
    auto& eng = nodes_[static_cast<size_t>(self)].engines[key.id];
    auto rit = routine_index_.find(key.id);
    const Routine& routine = workload_.routines[rit->second];
    auto& node = nodes_[static_cast<size_t>(self)];
    while (eng.next_cmd < routine.commands.size()) {
        NodeId dev = routine.commands[eng.next_cmd].device;
        auto known = node.dev_known_up.find(dev);
        bool down = (known != node.dev_known_up.end() && !known->second) || eng.skipped.count(dev);
        if (!down) break;
        if (!eng.skipped.count(dev)) {
            eng.skipped.insert(dev);  // skip-and-log: no actuation on DOWN devices
            TraceRecord rec = base_rec(Rec::SkippedDevice, *r);
            rec.routine = key.id;
            rec.device = dev;
            emit(rec);
        }
        ++eng.next_cmd;
    }
    if (eng.next_cmd >= routine.commands.size()) {
        to_releasing(self, key);
        return;
    }
    const Command& cmd = routine.commands[eng.next_cmd];
    NodeId target = resolve_leader(device_group(cmd.device));
    TraceRecord rec = base_rec(Rec::CmdEmit, *r);
    rec.routine = key.id;
    rec.device = cmd.device;
    rec.b = static_cast<int64_t>(eng.next_cmd);
    rec.a = static_cast<int64_t>(r->proj.instance);
    rec.value2 = eng.last_unblock_release;
    emit(rec);
    Message m;
    m.kind = MsgKind::Command;
    m.src = self;
    m.dst = target;
    m.group = device_group(cmd.device);
    m.epoch = cur_epoch_;
    m.device = cmd.device;
    m.routine = key.id;
    m.cmd_index = static_cast<int32_t>(eng.next_cmd);
    m.duration = cmd.duration;
    m.instance = r->proj.instance;
    if (target != kNoNode) send(std::move(m));
    uint64_t nonce = eng.nonce;
    size_t idx = eng.next_cmd;
    schedule(8.0 * r->rtt_estimate + cmd.duration,
             [this, self, key, idx, nonce] { command_retry(self, key, idx, nonce); });
}

void SimHarness::command_retry(NodeId self, GroupKey key, size_t cmd_index, uint64_t nonce) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader || r->proj.stage != Stage::Executing) return;
    auto& eng = nodes_[static_cast<size_t>(self)].engines[key.id];
    if (eng.nonce != nonce || eng.next_cmd != cmd_index) return;
    if (++eng.cmd_retries >= 3) {
        // device (or its leader) unresponsive: skip and move on
        auto rit = routine_index_.find(key.id);
        const Routine& routine = workload_.routines[rit->second];
        TraceRecord rec = base_rec(Rec::SkippedDevice, *r);
        rec.routine = key.id;
        rec.device = routine.commands[cmd_index].device;
        emit(rec);
        ++eng.next_cmd;
        eng.cmd_retries = 0;
    }
    issue_next_command(self, key);
}

void SimHarness::on_command_ack(NodeId self, GroupKey key, const Message& m) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader || r->proj.stage != Stage::Executing) return;
    auto& eng = nodes_[static_cast<size_t>(self)].engines[key.id];
    if (m.cmd_index != static_cast<int32_t>(eng.next_cmd)) return;
    ++eng.next_cmd;
    eng.cmd_retries = 0;
    issue_next_command(self, key);
}

void SimHarness::to_releasing(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader || r->proj.stage != Stage::Executing) return;
    StateEntry e;
    e.kind = EntryKind::RoutineStage;
    e.stage = Stage::ReleasingLocks;
    e.instance = r->proj.instance;
    leader_commit(self, key, e, [this, self, key] { send_releases(self, key); });
}

void SimHarness::send_releases(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader || r->proj.stage != Stage::ReleasingLocks) return;
    if (r->proj.locked.empty()) {
        StateEntry e;
        e.kind = EntryKind::RoutineStage;
        e.stage = Stage::NotTriggered;
        e.instance = r->proj.instance;
        leader_commit(self, key, e, [this, self, key] {
            auto& eng = nodes_[static_cast<size_t>(self)].engines[key.id];
            eng.last_completed = queue_.now();
            ++eng.nonce;
        });
        return;
    }
    auto& eng = nodes_[static_cast<size_t>(self)].engines[key.id];
    uint64_t nonce = eng.nonce;
    for (NodeId d : r->proj.locked) {
        Message m;
        m.kind = MsgKind::LockRelease;
        m.src = self;
        m.dst = resolve_leader(device_group(d));
        m.group = device_group(d);
        m.epoch = cur_epoch_;
        m.device = d;
        m.routine = key.id;
        if (m.dst != kNoNode) send(std::move(m));
    }
    schedule(kReleaseRetryRtts * r->rtt_estimate, [this, self, key, nonce] {
        GroupReplica* rr = replica(self, key);
        if (!rr || !rr->i_am_leader || rr->proj.stage != Stage::ReleasingLocks) return;
        auto& eg = nodes_[static_cast<size_t>(self)].engines[key.id];
        if (eg.nonce != nonce) return;
        send_releases(self, key);  // device leader changed mid-release: idempotent resend
    });
}

void SimHarness::on_release_acked(NodeId self, GroupKey key, NodeId device) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader) return;
    if (!r->proj.locked.count(device)) return;
    StateEntry e;
    e.kind = EntryKind::ReleasedDevice;
    e.device = device;
    e.instance = r->proj.instance;
    leader_commit(self, key, e, [this, self, key] {
        GroupReplica* rr = replica(self, key);
        if (!rr || !rr->i_am_leader) return;
        if (rr->proj.stage == Stage::ReleasingLocks && rr->proj.locked.empty()) {
            StateEntry done;
            done.kind = EntryKind::RoutineStage;
            done.stage = Stage::NotTriggered;
            done.instance = rr->proj.instance;
            leader_commit(self, key, done, [this, self, key] {
                auto& eng = nodes_[static_cast<size_t>(self)].engines[key.id];
                eng.last_completed = queue_.now();
                ++eng.nonce;
            });
        }
    });
}

void SimHarness::routine_resume(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r || !r->i_am_leader || r->status != GroupStatus::Active) return;
    auto& eng = nodes_[static_cast<size_t>(self)].engines[key.id];
    ++eng.nonce;
    switch (r->proj.stage) {
        case Stage::NotTriggered:
            break;  // wait for state updates
        case Stage::AcquiringLocks:
            start_locking(self, key);
            break;
        case Stage::Executing:
            eng.next_cmd = 0;  // command progress is not replicated; re-issue
            eng.cmd_retries = 0;
            issue_next_command(self, key);
            break;
        case Stage::ReleasingLocks:
            send_releases(self, key);
            break;
    }
}

// --- dispatch -----------------------------------------------------------------------

void SimHarness::device_endpoint(NodeId device, const Message& m) {
    if (m.kind == MsgKind::Ping) {
        Message ack;
        ack.kind = MsgKind::PingAck;
        ack.src = device;
        ack.dst = m.src;
        ack.group = m.group;
        ack.epoch = m.epoch;
        ack.device = device;
        ack.value = device_reading(device);
        ack.version = m.version;
        ack.flag = true;
        send(std::move(ack));
        return;
    }
    if (m.kind == MsgKind::Command) {
        // the device is busy for the command's duration, then acks to its leader
        Message ack;
        ack.kind = MsgKind::CommandAck;
        ack.src = device;
        ack.dst = m.src;
        ack.group = m.group;
        ack.epoch = m.epoch;
        ack.device = device;
        ack.routine = m.routine;
        ack.cmd_index = m.cmd_index;
        ack.flag = true;  // device -> leader leg
        schedule(m.duration, [this, ack] {
            if (nodes_[static_cast<size_t>(ack.src)].alive) send(Message(ack));
        });
    }
}

bool SimHarness::try_migration_reply(NodeId self, const Message& m) {
    GroupKey next{m.group.kind, m.group.id, m.epoch + 1};
    GroupReplica* nr = replica(self, next);
    if (!nr || !nr->i_am_leader || nr->state_received) return false;
    if (m.flag) {  // authoritative copy from the old leader
        install_transferred_state(self, next, m.entries, nr->transfer_request_time);
        return true;
    }
    std::map<Seq, StateEntry> log;
    for (const auto& e : m.entries) log[e.seq] = e;
    nr->recon_replies[m.src] = std::move(log);
    auto prev = prev_committees_.find(ekey(next));
    int old_f = prev == prev_committees_.end()
                    ? cfg_.f
                    : (static_cast<int>(prev->second.members.size()) - 1) / 2;
    if (static_cast<int>(nr->recon_replies.size()) >= old_f + 1) {
        std::vector<std::map<Seq, StateEntry>> replies;
        for (const auto& [mm, log2] : nr->recon_replies) replies.push_back(log2);
        std::vector<StateEntry> entries;
        for (auto& [s, e] : reconstruct_entries(replies)) entries.push_back(e);
        install_transferred_state(self, next, std::move(entries), nr->transfer_request_time);
    }
    return true;
}

bool SimHarness::buffer_if_not_serving(NodeId self, GroupReplica& r, const Message& m) {
    if (!r.i_am_leader) {
        // forward leader-bound requests once toward the believed leader
        if (!m.forwarded && r.believed_leader != kNoNode && r.believed_leader != self) {
            Message fwd = m;
            fwd.src = self;
            fwd.dst = r.believed_leader;
            fwd.forwarded = true;
            send(std::move(fwd));
        } else {
            r.buffered.push_back(m);
        }
        return true;
    }
    if (r.status != GroupStatus::Active || r.reconstructing) {
        r.buffered.push_back(m);  // served after changeover / reconstruction
        return true;
    }
    return false;
}

void SimHarness::process_buffered(NodeId self, GroupKey key) {
    GroupReplica* r = replica(self, key);
    if (!r || r->buffered.empty()) return;
    if (!r->i_am_leader || r->status != GroupStatus::Active || r->reconstructing) return;
    std::vector<Message> pending;
    pending.swap(r->buffered);
    for (Message& m : pending) handle_message(self, m);
}

void SimHarness::handle_message(NodeId self, const Message& m) {
    auto& node = nodes_[static_cast<size_t>(self)];
    if (!node.smart) return;

    // availability broadcasts apply node-wide
    if (m.kind == MsgKind::StateUpdate && m.flag) {
        bool up = m.instance != 0;
        node.dev_known_up[m.device] = up ? 1 : 0;
        if (!up)
            for (auto& [rid, eng] : node.engines) eng.readings.erase(m.device);
        return;
    }

    GroupKey key{m.group.kind, m.group.id, m.epoch};
    GroupReplica* r = replica(self, key);

    // a state reply for epoch e may belong to epoch e+1's migration; this node
    // can sit in both groups, so check the successor first
    if (m.kind == MsgKind::StateReply && try_migration_reply(self, m)) return;

    if (!r) {
        switch (m.kind) {
            case MsgKind::Recruit: {
                // being added to a running group: install everything from the message
                auto entity_it =
                    std::find_if(entities_.begin(), entities_.end(), [&](const EntityId& e) {
                        return key_of(e) == m.group;
                    });
                if (entity_it == entities_.end()) return;
                GroupReplica nr;
                nr.entity = *entity_it;
                nr.epoch = m.epoch;
                nr.f = cfg_.selection_policy == SelectionPolicy::Central ? 0 : cfg_.f;
                nr.members = m.roster;
                nr.leadership = m.leadership;
                nr.self = self;
                nr.believed_leader = m.src;
                nr.status = GroupStatus::Active;
                nr.rtt_estimate = estimate_rtt(m.roster);
                for (const auto& e : m.entries) nr.log[e.seq] = e;
                nr.next_seq = nr.log.empty() ? 1 : nr.log.rbegin()->first + 1;
                node.replicas[key] = std::move(nr);
                role_delta(self, false, +1);
                Message ack;
                ack.kind = MsgKind::Ack;
                ack.re = MsgKind::Recruit;
                ack.src = self;
                ack.dst = m.src;
                ack.group = m.group;
                ack.epoch = m.epoch;
                send(std::move(ack));
                return;
            }
            default:
                return;  // stale or unknown group: drop silently
        }
    }

    if (r->status == GroupStatus::Decommissioned) return;

    switch (m.kind) {
        case MsgKind::Election: {
            Message ack;
            ack.kind = MsgKind::Ack;
            ack.re = MsgKind::Election;
            ack.src = self;
            ack.dst = m.src;
            ack.group = m.group;
            ack.epoch = m.epoch;
            send(std::move(ack));
            const auto& view = node.view;
            bool leader_ok = r->believed_leader != kNoNode &&
                             view->is_alive_smart(r->believed_leader) &&
                             !r->failed_since_selection.count(r->believed_leader);
            if (!r->election_running && !leader_ok && r->status != GroupStatus::Migrating)
                start_election(self, key, 1);
            return;
        }
        case MsgKind::Coordinator:
            on_coordinator(self, key, m);
            return;
        case MsgKind::Replicate: {
            if (m.snapshot) {
                r->log.clear();
                for (const auto& e : m.entries) r->log[e.seq] = e;
                r->state_received = true;
                if (r->status == GroupStatus::Forming) r->status = GroupStatus::Active;
            } else {
                for (const auto& e : m.entries) r->log[e.seq] = e;
                if (r->status == GroupStatus::Forming && r->epoch > 0 && r->state_received)
                    r->status = GroupStatus::Active;
            }
            Message ack;
            ack.kind = MsgKind::Ack;
            ack.re = MsgKind::Replicate;
            ack.src = self;
            ack.dst = m.src;
            ack.group = m.group;
            ack.epoch = m.epoch;
            ack.seq = m.seq;
            ack.snapshot = m.snapshot;
            send(std::move(ack));
            return;
        }
        case MsgKind::Ack:
            switch (m.re) {
                case MsgKind::Election:
                    r->got_prior_ack = true;
                    return;
                case MsgKind::Coordinator: {
                    if (!m.flag) {
                        // rejected: someone with higher priority already leads
                        if (m.leader_hint != kNoNode && r->i_am_leader && m.leader_hint != self) {
                            Message coord;
                            coord.kind = MsgKind::Coordinator;
                            coord.src = m.leader_hint;
                            coord.dst = self;
                            coord.group = m.group;
                            coord.epoch = m.epoch;
                            on_coordinator(self, key, coord);
                        }
                        return;
                    }
                    auto it = r->coord_acks_pending.find(m.src);
                    if (it == r->coord_acks_pending.end() || !r->i_am_leader) return;
                    double member_rtt = queue_.now() - r->announce_time;
                    r->coord_acks_pending.erase(it);
                    r->rtt_estimate = std::max(r->rtt_estimate, member_rtt);
                    if (r->coord_acks_pending.empty()) {
                        TraceRecord rec = base_rec(Rec::ElectionDone, *r);
                        rec.src = self;
                        rec.a = r->election_trigger;
                        rec.value = queue_.now() - r->election_started;
                        rec.value2 = member_rtt;  // the slowest announce-ack round trip
                        rec.bytes = r->rtt_estimate;
                        emit(rec);
                    }
                    return;
                }
                case MsgKind::Replicate: {
                    if (!r->i_am_leader) return;
                    if (m.snapshot) {
                        r->snapshot_acks.insert(m.src);
                        if (!r->snapshot_committed &&
                            static_cast<int>(r->snapshot_acks.size()) + 1 >= r->quorum()) {
                            r->snapshot_committed = true;
                            finish_migration(self, key);
                        }
                        return;
                    }
                    std::vector<Seq> confirmed{m.seq};
                    auto bit = r->batches.find(m.seq);
                    if (bit != r->batches.end()) confirmed = bit->second;
                    for (Seq cs : confirmed) {
                        auto ait = r->acks.find(cs);
                        if (ait == r->acks.end()) continue;
                        ait->second.insert(m.src);
                        if (static_cast<int>(ait->second.size()) >= r->quorum())
                            commit_ready(self, key, cs);
                    }
                    return;
                }
                case MsgKind::LockRelease:
                    if (buffer_if_not_serving(self, *r, m)) return;
                    on_release_acked(self, key, m.device);
                    return;
                case MsgKind::StateRequest: {
                    // leader-query answer: retry the lock request at the hinted leader
                    if (m.leader_hint == kNoNode || r->proj.stage != Stage::AcquiringLocks) return;
                    Message req;
                    req.kind = MsgKind::LockReq;
                    req.src = self;
                    req.dst = m.leader_hint;
                    req.group = device_group(m.device);
                    req.epoch = cur_epoch_;
                    req.device = m.device;
                    req.routine = key.id;
                    req.reqseq = r->proj.instance;
                    send(std::move(req));
                    return;
                }
                default:
                    return;
            }
        case MsgKind::StateRequest: {
            if (m.flag) {  // who is your leader?
                Message ack;
                ack.kind = MsgKind::Ack;
                ack.re = MsgKind::StateRequest;
                ack.src = self;
                ack.dst = m.src;
                ack.group = m.group;
                ack.epoch = m.epoch;
                ack.leader_hint = r->believed_leader;
                ack.device = m.device;
                ack.routine = m.routine;
                send(std::move(ack));
                return;
            }
            Message reply;
            reply.kind = MsgKind::StateReply;
            reply.src = self;
            reply.dst = m.src;
            reply.group = m.group;
            reply.epoch = m.epoch;
            reply.flag = r->i_am_leader;
            for (auto& [s, e] : r->log) reply.entries.push_back(e);
            send(std::move(reply));
            return;
        }
        case MsgKind::StateReply: {
            if (r->reconstructing) {
                std::map<Seq, StateEntry> log;
                for (const auto& e : m.entries) log[e.seq] = e;
                r->recon_replies[m.src] = std::move(log);
                if (static_cast<int>(r->recon_replies.size()) >= r->quorum())
                    finish_reconstruction(self, key);
            }
            return;
        }
        case MsgKind::Decommission: {
            if (r->i_am_leader && m.epoch == r->epoch) {
                // step 5: the successor tells the old leader; ack, then step 6
                Message ack;
                ack.kind = MsgKind::DecommissionAck;
                ack.src = self;
                ack.dst = m.src;
                ack.group = m.group;
                ack.epoch = m.epoch;
                send(std::move(ack));
                for (NodeId member : r->members) {
                    if (member == self || !published_->is_alive_smart(member)) continue;
                    Message d;
                    d.kind = MsgKind::Decommission;
                    d.src = self;
                    d.dst = member;
                    d.group = m.group;
                    d.epoch = m.epoch;
                    send(std::move(d));
                }
                // hand buffered requests to the new leader before retiring
                for (Message& b : r->buffered) {
                    b.src = self;
                    b.dst = m.src;
                    b.epoch = m.epoch + 1;
                    b.forwarded = true;
                    send(std::move(b));
                }
                r->buffered.clear();
            }
            decommission_replica(self, key);
            return;
        }
        case MsgKind::DecommissionAck: {
            // old leader acked step 5: the new group takes over
            GroupKey next{m.group.kind, m.group.id, m.epoch + 1};
            if (replica(self, next)) activate_replica(self, next);
            return;
        }
        case MsgKind::Recruit: {
            r->members = m.roster;
            r->leadership = m.leadership;
            r->believed_leader = m.src;
            std::set<NodeId> still;
            for (NodeId n : r->members)
                if (r->failed_since_selection.count(n)) still.insert(n);
            r->failed_since_selection = still;
            r->rtt_estimate = estimate_rtt(r->members);
            return;
        }
        case MsgKind::PingAck:
            on_ping_ack(self, key, m);
            return;
        case MsgKind::StateUpdate:
            if (buffer_if_not_serving(self, *r, m)) return;
            handle_state_update(self, key, m);
            return;
        case MsgKind::LockReq:
            if (buffer_if_not_serving(self, *r, m)) return;
            handle_lock_req(self, key, m);
            return;
        case MsgKind::PrelockReq:
            if (buffer_if_not_serving(self, *r, m)) return;
            handle_prelock_req(self, key, m);
            return;
        case MsgKind::LockRelease:
            if (buffer_if_not_serving(self, *r, m)) return;
            handle_lock_release(self, key, m);
            return;
        case MsgKind::LockGrant:
            if (buffer_if_not_serving(self, *r, m)) return;
            on_lock_grant(self, key, m);
            return;
        case MsgKind::LockRefuse:
            if (buffer_if_not_serving(self, *r, m)) return;
            on_lock_refuse(self, key, m);
            return;
        case MsgKind::Command: {
            if (buffer_if_not_serving(self, *r, m)) return;
            Message fwd = m;  // leader-to-device leg
            fwd.src = self;
            fwd.dst = m.device;
            fwd.flag = true;
            send(std::move(fwd));
            return;
        }
        case MsgKind::CommandAck: {
            if (m.flag) {  // from the device: relay to the routine leader
                NodeId target = resolve_leader({EntityKind::Routine, m.routine});
                if (target == kNoNode) return;
                Message relay = m;
                relay.src = self;
                relay.dst = target;
                relay.flag = false;
                relay.group = {EntityKind::Routine, m.routine};
                send(std::move(relay));
                return;
            }
            if (buffer_if_not_serving(self, *r, m)) return;
            on_command_ack(self, {EntityKind::Routine, m.routine, m.epoch}, m);
            return;
        }
        default:
            return;
    }
}

// --- trial --------------------------------------------------------------------------

Trace SimHarness::run() {
    for (const ChurnEvent& ev : churn_) {
        ChurnEvent e = ev;
        queue_.schedule(e.t, [this, e] { apply_churn(e); });
    }
    for (const auto& [t, rid] : workload_.triggers) {
        auto it = routine_index_.find(rid);
        if (it == routine_index_.end()) continue;
        const Routine& routine = workload_.routines[it->second];
        // spike the trigger device's reading so the next ping observes it
        NodeId dev = *routine.trigger_set().begin();
        Time when = t;
        queue_.schedule(when, [this, dev, when] {
            auto& rs = readings_[static_cast<size_t>(dev)];
            rs.spike = 100.0;
            rs.spike_until = when + 3.0 * cfg_.monitor_period;
        });
    }
    queue_.schedule(0.0, [this] { start_epoch(0); });
    queue_.run_until(horizon_);

    // close load intervals and dump per-node summaries
    for (NodeId n = 0; n < topo_.n; ++n) {
        auto& ls = load_[static_cast<size_t>(n)];
        double dt = horizon_ - ls.last_group_change;
        if (dt > 0) {
            if (ls.leaderships > 0) ls.leader_time += dt;
            if (ls.groups > 0) ls.member_time += dt;
            ls.group_time_integral += dt * ls.groups;
            ls.last_group_change = horizon_;
        }
        if (!topo_.smart[static_cast<size_t>(n)]) continue;
        TraceRecord rec;
        rec.kind = Rec::NodeLoad;
        rec.src = n;
        rec.value = ls.leader_time / horizon_;
        rec.value2 = ls.member_time / horizon_;
        rec.hops = ls.max_groups;
        rec.b = static_cast<int64_t>(ls.group_time_integral / horizon_ * 1e6);
        emit(rec);
        TraceRecord bw;
        bw.kind = Rec::NodeBandwidth;
        bw.src = n;
        bw.value = bytes_e2e_[static_cast<size_t>(n)];
        bw.value2 = bytes_h2h_[static_cast<size_t>(n)];
        bw.a = static_cast<int64_t>(bytes_fg_[static_cast<size_t>(n)]);
        bw.b = static_cast<int64_t>(bytes_bg_[static_cast<size_t>(n)]);
        emit(bw);
    }
    TraceRecord inflight;
    inflight.kind = Rec::InFlightAtEnd;
    inflight.a = static_cast<int64_t>(in_flight_);
    emit(inflight);
    return std::move(trace_);
}

}  // namespace stamesh
