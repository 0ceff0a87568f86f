#include <deque>
#include <set>

#include "doctest.h"
#include "stamesh/simnet.hpp"

using namespace stamesh;

TEST_CASE("grid3d with 8 nodes is a 2x2x2 cube") {
    auto t = build_topology(TopologyKind::Grid3d, 8, 0.5, 1);
    CHECK(t.n == 8);
    for (int i = 0; i < 8; ++i) CHECK(t.adj[static_cast<size_t>(i)].size() == 3);
    CHECK(is_connected(t));
}

TEST_CASE("smart fraction rounds up") {
    auto t = build_topology(TopologyKind::Grid3d, 250, 0.4, 7);
    CHECK(t.smart_count() == 100);
    auto t2 = build_topology(TopologyKind::Random, 10, 0.25, 7);
    CHECK(t2.smart_count() == 3);
}

TEST_CASE("topologies are deterministic per seed and connected") {
    for (auto kind : {TopologyKind::Grid3d, TopologyKind::Random, TopologyKind::Clustered}) {
        auto a = build_topology(kind, 120, 0.4, 5);
        auto b = build_topology(kind, 120, 0.4, 5);
        CHECK(a.adj == b.adj);
        CHECK(a.positions == b.positions);
        CHECK(a.smart == b.smart);
        CHECK(is_connected(a));
        auto c = build_topology(kind, 120, 0.4, 6);
        if (kind != TopologyKind::Grid3d) CHECK(a.positions != c.positions);
    }
}

TEST_CASE("route matches BFS hop-count oracle on a fixture") {
    auto t = build_topology(TopologyKind::Random, 30, 0.5, 42);
    Network net(t, 1000.0, 0.0, 1);
    // oracle: plain BFS per pair
    auto bfs = [&](NodeId s, NodeId d) {
        std::vector<int> dist(static_cast<size_t>(t.n), -1);
        std::deque<NodeId> q{s};
        dist[static_cast<size_t>(s)] = 0;
        while (!q.empty()) {
            NodeId cur = q.front();
            q.pop_front();
            for (NodeId nb : t.adj[static_cast<size_t>(cur)])
                if (dist[static_cast<size_t>(nb)] < 0) {
                    dist[static_cast<size_t>(nb)] = dist[static_cast<size_t>(cur)] + 1;
                    q.push_back(nb);
                }
        }
        return dist[static_cast<size_t>(d)];
    };
    for (NodeId s = 0; s < t.n; ++s)
        for (NodeId d = 0; d < t.n; ++d) {
            CHECK(net.hop_distance(s, d) == bfs(s, d));
            auto path = net.route(s, d);
            if (s == d) {
                CHECK(path.empty());
            } else {
                CHECK(static_cast<int>(path.size()) == bfs(s, d));
                CHECK(path.back() == d);
            }
        }
}

TEST_CASE("adjacent nodes route in one hop") {
    auto t = build_topology(TopologyKind::Grid3d, 27, 1.0, 1);
    Network net(t, 1000.0, 0.0, 1);
    NodeId a = 0;
    NodeId b = t.adj[0][0];
    CHECK(net.route(a, b) == std::vector<NodeId>{b});
}

TEST_CASE("send delay arithmetic") {
    // two nodes, one edge: sender degree 1
    Topology t;
    t.kind = TopologyKind::Random;
    t.n = 2;
    t.dim = 2;
    t.positions = {{0, 0}, {1, 0}};
    t.adj = {{1}, {0}};
    t.smart = {1, 1};
    Network net(t, 625000.0, 0.0, 1);
    auto plan = net.plan_send(0, 1, 625000.0);  // size == bandwidth
    CHECK(plan.status == SendStatus::Ok);
    CHECK(plan.delay == doctest::Approx(2.0));  // 1 serialization + 1 latency

    // chain of 4: 3 hops, zero size -> delay 3
    Topology c;
    c.kind = TopologyKind::Random;
    c.n = 4;
    c.dim = 2;
    c.positions = {{0, 0}, {1, 0}, {2, 0}, {3, 0}};
    c.adj = {{1}, {0, 2}, {1, 3}, {2}};
    c.smart = {1, 1, 1, 1};
    Network cn(c, 625000.0, 0.0, 1);
    auto p2 = cn.plan_send(0, 3, 0.0);
    CHECK(p2.delay == doctest::Approx(3.0));
    CHECK(p2.hops == 3);

    // degree scales serialization: star center with degree 5
    Topology s;
    s.kind = TopologyKind::Random;
    s.n = 6;
    s.dim = 2;
    s.positions.assign(6, {0, 0});
    s.adj = {{1, 2, 3, 4, 5}, {0}, {0}, {0}, {0}, {0}};
    s.smart.assign(6, 1);
    Network sn(s, 625000.0, 0.0, 1);
    auto p3 = sn.plan_send(0, 5, 125000.0);
    // serialization = 125000*5/625000 = 1, plus 1 latency
    CHECK(p3.delay == doctest::Approx(2.0));
}

TEST_CASE("failed nodes drop out of routing and degree counts") {
    Topology c;
    c.kind = TopologyKind::Random;
    c.n = 4;
    c.dim = 2;
    c.positions = {{0, 0}, {1, 0}, {2, 0}, {3, 0}};
    c.adj = {{1}, {0, 2}, {1, 3}, {2}};
    c.smart = {1, 1, 1, 1};
    Network net(c, 100.0, 0.0, 1);
    CHECK(net.alive_degree(1) == 2);
    net.set_alive(2, false);
    CHECK(net.alive_degree(1) == 1);
    CHECK(net.hop_distance(0, 3) == -1);
    auto plan = net.plan_send(0, 3, 1.0);
    CHECK(plan.status == SendStatus::Unreachable);
    net.set_alive(2, true);
    CHECK(net.hop_distance(0, 3) == 3);
}

TEST_CASE("self send is immediate") {
    auto t = build_topology(TopologyKind::Grid3d, 8, 1.0, 1);
    Network net(t, 100.0, 0.0, 1);
    auto plan = net.plan_send(3, 3, 50.0);
    CHECK(plan.status == SendStatus::Ok);
    CHECK(plan.delay == 0.0);
    CHECK(plan.hops == 0);
}

TEST_CASE("event queue runs in (time, insertion) order") {
    EventQueue q;
    std::vector<int> order;
    q.schedule(5.0, [&] { order.push_back(3); });
    q.schedule(1.0, [&] { order.push_back(1); });
    q.schedule(5.0, [&] { order.push_back(4); });
    q.schedule(2.0, [&] {
        order.push_back(2);
        q.schedule(2.0, [&] { order.push_back(21); });  // same-time follow-up
    });
    q.run_until(10.0);
    CHECK(order == std::vector<int>{1, 2, 21, 3, 4});
    CHECK(q.now() == 10.0);
}

TEST_CASE("event queue horizon stops late events") {
    EventQueue q;
    int ran = 0;
    q.schedule(1.0, [&] { ++ran; });
    q.schedule(20.0, [&] { ++ran; });
    q.run_until(10.0);
    CHECK(ran == 1);
    CHECK(q.pending() == 1);
}
