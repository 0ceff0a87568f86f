#pragma once

#include <functional>
#include <queue>
#include <vector>

#include "stamesh/model.hpp"
#include "stamesh/rng.hpp"

namespace stamesh {

struct Topology {
    TopologyKind kind = TopologyKind::Grid3d;
    int n = 0;
    int dim = 3;
    double radius = 1.0;
    std::vector<std::vector<double>> positions;  // by node id
    std::vector<std::vector<NodeId>> adj;        // sorted neighbor lists
    std::vector<uint8_t> smart;                  // ceil(smart_fraction * n) nodes

    int smart_count() const {
        int c = 0;
        for (auto s : smart) c += s;
        return c;
    }
};

// GRID3D: integer lattice in a near-cubic box, lattice-neighbor edges.
// RANDOM: uniform positions in a square, edges within the transmission radius.
// CLUSTERED: positions around seeded cluster centers, same radius rule.
// Radius per kind targets mean degree ~6; the graph is regenerated with a new
// seed offset (and eventually a slightly larger radius) until connected.
Topology build_topology(TopologyKind kind, int n, double smart_fraction, uint64_t seed);

bool is_connected(const Topology& topo);

enum class ChurnKind : uint8_t { Fail, Join };
struct ChurnEvent {
    Time t = 0.0;
    NodeId node = kNoNode;
    ChurnKind kind = ChurnKind::Fail;
};

enum class SendStatus : uint8_t { Ok, Unreachable, Lost };

// Alive-subgraph routing and the contention-scaled delay model. Minimum-hop
// paths, ties broken by smallest next node id; per-hop delay is one latency
// unit plus size / (bandwidth / sender_alive_degree).
class Network {
public:
    Network(const Topology& topo, double node_bandwidth, double loss_probability, uint64_t seed);

    void set_alive(NodeId n, bool alive);
    bool alive(NodeId n) const { return alive_[static_cast<size_t>(n)] != 0; }
    int alive_degree(NodeId n) const { return degree_[static_cast<size_t>(n)]; }
    const Topology& topology() const { return *topo_; }

    int hop_distance(NodeId src, NodeId dst);  // -1 when unreachable
    // hop-by-hop path from src to dst, excluding src; empty when src == dst
    std::vector<NodeId> route(NodeId src, NodeId dst);

    struct SendPlan {
        SendStatus status = SendStatus::Unreachable;
        double delay = 0.0;
        int hops = 0;
        std::vector<NodeId> path;  // hop receivers (senders are src, path[0..n-2])
    };
    SendPlan plan_send(NodeId src, NodeId dst, double size_bytes);

private:
    const std::vector<int32_t>& dist_table(NodeId dst);

    const Topology* topo_;
    double bandwidth_;
    double loss_probability_;
    Rng loss_rng_;
    std::vector<uint8_t> alive_;
    std::vector<int> degree_;  // alive 1-hop neighbor count
    std::vector<std::vector<int32_t>> dist_to_;  // [dst] -> per-node hop count
    std::vector<uint8_t> dist_valid_;
};

// Deterministic event loop: (time, insertion sequence) order.
class EventQueue {
public:
    using Fn = std::function<void()>;

    void schedule(Time t, Fn fn) {
        if (t < now_) t = now_;  // clamp numeric jitter; causality holds
        heap_.push(Ev{t, next_seq_++, std::move(fn)});
    }
    Time now() const { return now_; }
    bool empty() const { return heap_.empty(); }
    size_t pending() const { return heap_.size(); }

    // runs events until the queue is empty or `horizon` is passed
    void run_until(Time horizon) {
        while (!heap_.empty() && heap_.top().t <= horizon) {
            Ev ev = heap_.top();
            heap_.pop();
            now_ = ev.t;
            ev.fn();
        }
        if (now_ < horizon) now_ = horizon;
    }

private:
    struct Ev {
        Time t;
        uint64_t seq;
        Fn fn;
    };
    struct Later {
        bool operator()(const Ev& a, const Ev& b) const {
            if (a.t != b.t) return a.t > b.t;
            return a.seq > b.seq;
        }
    };
    std::priority_queue<Ev, std::vector<Ev>, Later> heap_;
    uint64_t next_seq_ = 0;
    Time now_ = 0.0;
};

}  // namespace stamesh
