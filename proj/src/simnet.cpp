#include "stamesh/simnet.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <map>

namespace stamesh {

namespace {

void build_radius_edges(Topology& topo) {
    const int n = topo.n;
    topo.adj.assign(static_cast<size_t>(n), {});
    const double r2 = topo.radius * topo.radius;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double d2 = 0.0;
            for (int c = 0; c < topo.dim; ++c) {
                double d = topo.positions[static_cast<size_t>(i)][static_cast<size_t>(c)] -
                           topo.positions[static_cast<size_t>(j)][static_cast<size_t>(c)];
                d2 += d * d;
            }
            if (d2 <= r2) {
                topo.adj[static_cast<size_t>(i)].push_back(j);
                topo.adj[static_cast<size_t>(j)].push_back(i);
            }
        }
}

void assign_smart(Topology& topo, double fraction, uint64_t seed) {
    int want = static_cast<int>(std::ceil(fraction * topo.n));
    topo.smart.assign(static_cast<size_t>(topo.n), 0);
    Rng rng(mix_seed({seed, 0x53A7ULL}));
    for (int i : rng.sample_distinct(topo.n, want)) topo.smart[static_cast<size_t>(i)] = 1;
}

Topology build_grid3d(int n) {
    Topology t;
    t.kind = TopologyKind::Grid3d;
    t.n = n;
    t.dim = 3;
    t.radius = 1.0;
    int nx = static_cast<int>(std::ceil(std::cbrt(static_cast<double>(n))));
    int ny = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n) / nx)));
    // lattice points filled slab by slab so any prefix stays connected
    std::vector<std::array<int, 3>> cells;
    for (int x = 0; cells.size() < static_cast<size_t>(n); ++x)
        for (int y = 0; y < ny && cells.size() < static_cast<size_t>(n); ++y)
            for (int z = 0; z < ny && cells.size() < static_cast<size_t>(n); ++z)
                cells.push_back({x, y, z});
    t.positions.resize(static_cast<size_t>(n));
    std::map<std::array<int, 3>, NodeId> at;
    for (int i = 0; i < n; ++i) {
        t.positions[static_cast<size_t>(i)] = {static_cast<double>(cells[static_cast<size_t>(i)][0]),
                                               static_cast<double>(cells[static_cast<size_t>(i)][1]),
                                               static_cast<double>(cells[static_cast<size_t>(i)][2])};
        at[cells[static_cast<size_t>(i)]] = i;
    }
    t.adj.assign(static_cast<size_t>(n), {});
    constexpr int dirs[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (int i = 0; i < n; ++i) {
        for (const auto& d : dirs) {
            std::array<int, 3> nb = {cells[static_cast<size_t>(i)][0] + d[0],
                                     cells[static_cast<size_t>(i)][1] + d[1],
                                     cells[static_cast<size_t>(i)][2] + d[2]};
            auto it = at.find(nb);
            if (it != at.end()) t.adj[static_cast<size_t>(i)].push_back(it->second);
        }
        std::sort(t.adj[static_cast<size_t>(i)].begin(), t.adj[static_cast<size_t>(i)].end());
    }
    return t;
}

Topology build_planar(TopologyKind kind, int n, uint64_t seed, int attempt) {
    Topology t;
    t.kind = kind;
    t.n = n;
    t.dim = 2;
    double side = std::sqrt(static_cast<double>(n));  // density ~1 node per unit area
    // mean degree ~6 at density 1: pi r^2 = 6; relaxed after repeated failures
    t.radius = std::sqrt(6.0 / 3.14159265358979323846) * (1.0 + 0.05 * (attempt / 25));
    Rng rng(mix_seed({seed, 0x70B0ULL, static_cast<uint64_t>(attempt)}));
    t.positions.resize(static_cast<size_t>(n));
    if (kind == TopologyKind::Random) {
        for (auto& p : t.positions) p = {rng.uniform_real(0.0, side), rng.uniform_real(0.0, side)};
    } else {
        int nclusters = std::max(1, n / 25);
        std::vector<std::array<double, 2>> centers;
        for (int c = 0; c < nclusters; ++c)
            centers.push_back({rng.uniform_real(0.0, side), rng.uniform_real(0.0, side)});
        const double sigma = 1.5;
        for (auto& p : t.positions) {
            const auto& c = centers[rng.uniform_u64(centers.size())];
            p = {c[0] + sigma * rng.gaussian(), c[1] + sigma * rng.gaussian()};
        }
    }
    build_radius_edges(t);
    return t;
}

}  // namespace

bool is_connected(const Topology& topo) {
    if (topo.n == 0) return true;
    std::vector<uint8_t> seen(static_cast<size_t>(topo.n), 0);
    std::deque<NodeId> q{0};
    seen[0] = 1;
    int count = 1;
    while (!q.empty()) {
        NodeId cur = q.front();
        q.pop_front();
        for (NodeId nb : topo.adj[static_cast<size_t>(cur)])
            if (!seen[static_cast<size_t>(nb)]) {
                seen[static_cast<size_t>(nb)] = 1;
                ++count;
                q.push_back(nb);
            }
    }
    return count == topo.n;
}

Topology build_topology(TopologyKind kind, int n, double smart_fraction, uint64_t seed) {
    if (n < 1) throw InvalidParameter("build_topology: n must be >= 1");
    Topology t;
    if (kind == TopologyKind::Grid3d) {
        t = build_grid3d(n);
    } else {
        for (int attempt = 0;; ++attempt) {
            t = build_planar(kind, n, seed, attempt);
            if (is_connected(t)) break;
        }
    }
    assign_smart(t, smart_fraction, seed);
    return t;
}

Network::Network(const Topology& topo, double node_bandwidth, double loss_probability, uint64_t seed)
    : topo_(&topo),
      bandwidth_(node_bandwidth),
      loss_probability_(loss_probability),
      loss_rng_(mix_seed({seed, 0x1055ULL})),
      alive_(static_cast<size_t>(topo.n), 1),
      degree_(static_cast<size_t>(topo.n), 0),
      dist_to_(static_cast<size_t>(topo.n)),
      dist_valid_(static_cast<size_t>(topo.n), 0) {
    for (NodeId i = 0; i < topo.n; ++i)
        degree_[static_cast<size_t>(i)] = static_cast<int>(topo.adj[static_cast<size_t>(i)].size());
}

void Network::set_alive(NodeId n, bool alive) {
    if (alive_[static_cast<size_t>(n)] == static_cast<uint8_t>(alive)) return;
    alive_[static_cast<size_t>(n)] = alive ? 1 : 0;
    for (NodeId nb : topo_->adj[static_cast<size_t>(n)]) degree_[static_cast<size_t>(nb)] += alive ? 1 : -1;
    std::fill(dist_valid_.begin(), dist_valid_.end(), 0);
}

const std::vector<int32_t>& Network::dist_table(NodeId dst) {
    auto& table = dist_to_[static_cast<size_t>(dst)];
    if (dist_valid_[static_cast<size_t>(dst)]) return table;
    table.assign(static_cast<size_t>(topo_->n), -1);
    if (alive_[static_cast<size_t>(dst)]) {
        std::deque<NodeId> q{dst};
        table[static_cast<size_t>(dst)] = 0;
        while (!q.empty()) {
            NodeId cur = q.front();
            q.pop_front();
            for (NodeId nb : topo_->adj[static_cast<size_t>(cur)]) {
                if (!alive_[static_cast<size_t>(nb)] || table[static_cast<size_t>(nb)] >= 0) continue;
                table[static_cast<size_t>(nb)] = table[static_cast<size_t>(cur)] + 1;
                q.push_back(nb);
            }
        }
    }
    dist_valid_[static_cast<size_t>(dst)] = 1;
    return table;
}

int Network::hop_distance(NodeId src, NodeId dst) {
    if (!alive_[static_cast<size_t>(src)] || !alive_[static_cast<size_t>(dst)]) return -1;
    return dist_table(dst)[static_cast<size_t>(src)];
}

std::vector<NodeId> Network::route(NodeId src, NodeId dst) {
    std::vector<NodeId> path;
    if (src == dst) return path;
    const auto& table = dist_table(dst);
    int32_t d = table[static_cast<size_t>(src)];
    if (d < 0 || !alive_[static_cast<size_t>(src)]) return path;
    NodeId cur = src;
    while (cur != dst) {
        NodeId next = kNoNode;
        for (NodeId nb : topo_->adj[static_cast<size_t>(cur)]) {  // ascending id
            if (!alive_[static_cast<size_t>(nb)]) continue;
            if (table[static_cast<size_t>(nb)] == table[static_cast<size_t>(cur)] - 1) {
                next = nb;
                break;
            }
        }
        path.push_back(next);
        cur = next;
    }
    return path;
}

Network::SendPlan Network::plan_send(NodeId src, NodeId dst, double size_bytes) {
    SendPlan plan;
    if (src == dst) {
        plan.status = SendStatus::Ok;
        plan.delay = 0.0;
        return plan;
    }
    if (!alive_[static_cast<size_t>(src)]) return plan;
    plan.path = route(src, dst);
    if (plan.path.empty()) return plan;
    if (loss_probability_ > 0.0 && loss_rng_.uniform_real() < loss_probability_) {
        plan.status = SendStatus::Lost;
        return plan;
    }
    plan.status = SendStatus::Ok;
    plan.hops = static_cast<int>(plan.path.size());
    NodeId sender = src;
    for (NodeId receiver : plan.path) {
        int deg = std::max(1, degree_[static_cast<size_t>(sender)]);
        plan.delay += size_bytes * deg / bandwidth_ + 1.0;
        sender = receiver;
    }
    return plan;
}

}  // namespace stamesh
