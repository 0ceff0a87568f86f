#include <algorithm>
#include <cmath>
#include <map>

#include "doctest.h"
#include "stamesh/digest.hpp"
#include "stamesh/select.hpp"
#include "stamesh/simnet.hpp"

using namespace stamesh;

namespace {

MembershipView make_view(int n, const std::vector<NodeId>& smart,
                         const std::vector<NodeId>& failed = {}) {
    auto v = std::make_shared<ViewData>();
    v->alive.assign(static_cast<size_t>(n), 1);
    v->smart.assign(static_cast<size_t>(n), 0);
    for (NodeId s : smart) v->smart[static_cast<size_t>(s)] = 1;
    for (NodeId f : failed) v->alive[static_cast<size_t>(f)] = 0;
    return v;
}

const EntityKey kEnt{EntityKind::DeviceCluster, 7};

}  // namespace

TEST_CASE("sortition hash is deterministic and epoch/entity sensitive") {
    uint64_t h1 = sortition_hash(3, 12, kEnt);
    CHECK(h1 == sortition_hash(3, 12, kEnt));
    CHECK(h1 != sortition_hash(4, 12, kEnt));
    CHECK(h1 != sortition_hash(3, 13, kEnt));
    CHECK(h1 != sortition_hash(3, 12, EntityKey{EntityKind::Routine, 7}));
    CHECK(h1 != sortition_hash(3, 12, EntityKey{EntityKind::DeviceCluster, 8}));
}

TEST_CASE("sortition_select single candidate") {
    auto view = make_view(5, {2});
    auto sel = sortition_select(view, kEnt, 0, 1);
    CHECK(sel == std::vector<NodeId>{2});
}

TEST_CASE("sortition_select equals brute-force oracle") {
    std::vector<NodeId> smart;
    for (int i = 0; i < 10; ++i) smart.push_back(i * 2);
    auto view = make_view(20, smart);
    for (Epoch epoch = 0; epoch < 8; ++epoch) {
        auto sel = sortition_select(view, kEnt, epoch, 5);
        // oracle: hash all ten, sort by (digest, id), take 5
        std::vector<std::pair<uint64_t, NodeId>> all;
        for (NodeId s : smart) {
            uint8_t buf[17];
            for (int i = 0; i < 8; ++i) buf[i] = static_cast<uint8_t>(epoch >> (8 * i));
            uint32_t nn = static_cast<uint32_t>(s);
            for (int i = 0; i < 4; ++i) buf[8 + i] = static_cast<uint8_t>(nn >> (8 * i));
            buf[12] = static_cast<uint8_t>(kEnt.kind);
            uint32_t e = static_cast<uint32_t>(kEnt.id);
            for (int i = 0; i < 4; ++i) buf[13 + i] = static_cast<uint8_t>(e >> (8 * i));
            all.emplace_back(sha256_trunc64(buf, sizeof(buf)), s);
        }
        std::sort(all.begin(), all.end());
        for (int i = 0; i < 5; ++i) CHECK(sel[static_cast<size_t>(i)] == all[static_cast<size_t>(i)].second);
        CHECK(std::is_sorted(sel.begin(), sel.end(), [&](NodeId a, NodeId b) {
            return sortition_hash(epoch, a, kEnt) < sortition_hash(epoch, b, kEnt);
        }));
    }
}

TEST_CASE("sortition_select identical across observers with identical views") {
    std::vector<NodeId> smart{1, 3, 5, 7, 9, 11};
    auto v1 = make_view(12, smart);
    auto v2 = make_view(12, smart);  // distinct snapshot objects, same content
    CHECK(sortition_select(v1, kEnt, 9, 3) == sortition_select(v2, kEnt, 9, 3));
}

TEST_CASE("sortition_select errors when too few smart nodes") {
    auto view = make_view(6, {1, 2}, {2});
    CHECK_THROWS_AS(sortition_select(view, kEnt, 0, 2), InsufficientSmartNodes);
}

TEST_CASE("lsh_scalar floor arithmetic") {
    std::vector<double> zero{0.0, 0.0};
    std::vector<double> a{1.0, 1.0};
    CHECK(lsh_scalar(zero, a, 0.0, 4.0) == 0);
    // a.v + b = 7.9 -> floor(7.9/4) = 1
    std::vector<double> v{3.0, 4.0};
    CHECK(lsh_scalar(v, a, 0.9, 4.0) == 1);
    // a.v + b = -0.1 -> floor(-0.025) = -1
    std::vector<double> vn{-1.0, 0.9};
    CHECK(lsh_scalar(vn, a, 0.0, 4.0) == -1);
    CHECK_THROWS_AS(lsh_scalar(v, a, 0.0, 0.0), InvalidParameter);
    CHECK_THROWS_AS(lsh_scalar(v, std::vector<double>{1.0}, 0.0, 1.0), InvalidParameter);
}

TEST_CASE("lsh_buckets shape and determinism") {
    auto p1 = LshParams::derive(99, 4, 1, 1, 4.0, 4);
    std::vector<double> v{1.0, 2.0, 1.0, 2.0};
    auto keys = lsh_buckets(v, p1);
    REQUIRE(keys.size() == 1);
    REQUIRE(keys[0].size() == 1);
    CHECK(keys[0][0] == lsh_scalar(v, p1.a[0][0], p1.b[0][0], 4.0));

    auto p2 = LshParams::derive(99, 4, 2, 2, 4.0, 4);
    auto k2 = lsh_buckets(v, p2);
    CHECK(k2.size() == 2);
    CHECK(k2[0].size() == 2);
    CHECK(k2[1].size() == 2);

    // identical augmented locations -> identical keys in all tables
    std::vector<double> w = v;
    CHECK(lsh_buckets(w, p2) == k2);

    // params derivation is deterministic in (seed, epoch)
    auto p3 = LshParams::derive(99, 4, 2, 2, 4.0, 4);
    CHECK(p3.a == p2.a);
    CHECK(p3.b == p2.b);
    auto p4 = LshParams::derive(99, 5, 2, 2, 4.0, 4);
    CHECK(p4.a != p2.a);
}

TEST_CASE("cluster_devices partition shapes") {
    // 25 devices, 25 per group -> one cluster holding everything
    std::vector<std::vector<double>> locs;
    Rng r(3);
    for (int i = 0; i < 25; ++i) locs.push_back({r.uniform_real(0, 10), r.uniform_real(0, 10)});
    auto cs = cluster_devices(locs, 25, 1);
    CHECK(cs.count == 1);
    for (int a : cs.assignment) CHECK(a == 0);
    CHECK(cs.centers.size() == 1);
    CHECK(cs.centers[0] >= 0);
    CHECK(cs.centers[0] < 25);

    // 250 devices, 25 per group -> 10 clusters
    std::vector<std::vector<double>> locs2;
    for (int i = 0; i < 250; ++i) locs2.push_back({r.uniform_real(0, 50), r.uniform_real(0, 50)});
    auto cs2 = cluster_devices(locs2, 25, 1);
    CHECK(cs2.count == 10);

    // two well-separated pairs split cleanly
    std::vector<std::vector<double>> locs3{{0, 0}, {0.1, 0}, {100, 100}, {100.1, 100}};
    auto cs3 = cluster_devices(locs3, 2, 5);
    CHECK(cs3.count == 2);
    CHECK(cs3.assignment[0] == cs3.assignment[1]);
    CHECK(cs3.assignment[2] == cs3.assignment[3]);
    CHECK(cs3.assignment[0] != cs3.assignment[2]);
}

namespace {

struct Fixture {
    Config cfg;
    Topology topo;
    MembershipView view;
    ClusterSet clusters;
    SelectBasis basis;

    explicit Fixture(SelectionPolicy pol, int n = 60, Epoch epoch = 1, uint64_t seed = 11) {
        cfg.n_devices = n;
        cfg.smart_fraction = 0.5;
        cfg.f = 2;
        cfg.k = 5;
        cfg.selection_policy = pol;
        cfg.devices_per_kgroup = 20;
        cfg = validate_config(cfg);
        topo = build_topology(TopologyKind::Grid3d, n, cfg.smart_fraction, seed);
        auto v = std::make_shared<ViewData>();
        v->alive.assign(static_cast<size_t>(n), 1);
        v->smart = topo.smart;
        view = v;
        clusters = cluster_devices(topo.positions, cfg.devices_per_kgroup, seed);
        basis = make_select_basis(view, epoch, seed, cfg, topo.positions, clusters, {});
    }
};

}  // namespace

TEST_CASE("lsh stage-1 equals brute-force bucket intersection oracle") {
    Fixture fx(SelectionPolicy::LshMix);
    EntityId ent{EntityKind::DeviceCluster, 0, fx.clusters.centers[0]};
    auto com = select_committee(fx.basis, ent, fx.cfg.k);
    CHECK(static_cast<int>(com.members.size()) == fx.cfg.k);

    // oracle: recompute candidate set by brute force, sort by distance, truncate
    auto center_buckets = lsh_buckets(fx.basis.augmented[static_cast<size_t>(ent.representative_device)],
                                      fx.basis.params);
    std::vector<NodeId> cands;
    for (NodeId node = 0; node < fx.topo.n; ++node) {
        if (!fx.view->is_alive_smart(node)) continue;
        auto nb = lsh_buckets(fx.basis.augmented[static_cast<size_t>(node)], fx.basis.params);
        bool shared = false;
        for (int j = 0; j < fx.cfg.lsh_l; ++j)
            if (nb[static_cast<size_t>(j)] == center_buckets[static_cast<size_t>(j)]) shared = true;
        if (shared) cands.push_back(node);
    }
    CHECK(com.stage1_candidates == static_cast<int>(cands.size()));
    if (static_cast<int>(cands.size()) >= fx.cfg.f + 1) {
        const auto& cloc = fx.topo.positions[static_cast<size_t>(ent.representative_device)];
        std::sort(cands.begin(), cands.end(), [&](NodeId a, NodeId b) {
            auto d2 = [&](NodeId x) {
                double s = 0;
                for (size_t i = 0; i < cloc.size(); ++i) {
                    double d = fx.topo.positions[static_cast<size_t>(x)][i] - cloc[i];
                    s += d * d;
                }
                return s;
            };
            double da = d2(a), db = d2(b);
            if (da != db) return da < db;
            return a < b;
        });
        cands.resize(static_cast<size_t>(fx.cfg.f + 1));
        // the f+1 nearest bucket-sharers must all be members
        for (NodeId c : cands)
            CHECK(std::find(com.members.begin(), com.members.end(), c) != com.members.end());
    }
}

TEST_CASE("committee invariants for both policies") {
    for (auto pol : {SelectionPolicy::Random, SelectionPolicy::LshMix}) {
        Fixture fx(pol);
        for (int32_t cl = 0; cl < fx.clusters.count; ++cl) {
            EntityId ent{EntityKind::DeviceCluster, cl, fx.clusters.centers[static_cast<size_t>(cl)]};
            auto com = select_committee(fx.basis, ent, fx.cfg.k);
            CHECK(static_cast<int>(com.members.size()) == 2 * fx.cfg.f + 1);
            auto sorted = com.members;
            std::sort(sorted.begin(), sorted.end());
            CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());  // no duplicates
            for (NodeId m : com.members) CHECK(fx.view->is_alive_smart(m));
            CHECK(std::find(com.members.begin(), com.members.end(), com.leader) != com.members.end());
            CHECK(com.leadership.size() == com.members.size());
        }
    }
}

TEST_CASE("zero-message property: identical views give identical committees") {
    for (auto pol : {SelectionPolicy::Random, SelectionPolicy::LshMix}) {
        Fixture a(pol), b(pol);  // independently constructed observers
        for (int32_t cl = 0; cl < a.clusters.count; ++cl) {
            EntityId ent{EntityKind::DeviceCluster, cl, a.clusters.centers[static_cast<size_t>(cl)]};
            auto ca = select_committee(a.basis, ent, a.cfg.k);
            auto cb = select_committee(b.basis, ent, b.cfg.k);
            CHECK(ca.members == cb.members);
            CHECK(ca.leadership == cb.leadership);
            CHECK(ca.leader == cb.leader);
        }
    }
}

TEST_CASE("lsh f=0 collapses to single nearest candidate") {
    Fixture fx(SelectionPolicy::LshMix);
    fx.cfg.f = 0;
    fx.cfg.k = 1;
    fx.basis.f = 0;
    EntityId ent{EntityKind::DeviceCluster, 0, fx.clusters.centers[0]};
    auto com = select_committee(fx.basis, ent, 1);
    CHECK(com.members.size() == 1);
    CHECK(com.leader == com.members[0]);
}

TEST_CASE("epoch change reshuffles selection; random policy is load balanced") {
    Fixture fx(SelectionPolicy::Random, 125);
    int smart_total = fx.topo.smart_count();
    REQUIRE(smart_total >= 50);
    std::map<NodeId, int> count;
    const int epochs = 100;
    const int groups = fx.clusters.count;
    for (Epoch e = 0; e < epochs; ++e) {
        auto basis = make_select_basis(fx.view, e, 11, fx.cfg, fx.topo.positions, fx.clusters, {});
        for (int32_t cl = 0; cl < groups; ++cl) {
            EntityId ent{EntityKind::DeviceCluster, cl, fx.clusters.centers[static_cast<size_t>(cl)]};
            for (NodeId m : select_committee(basis, ent, fx.cfg.k).members) ++count[m];
        }
    }
    double mean = static_cast<double>(epochs * groups * fx.cfg.k) / smart_total;
    int max_count = 0;
    for (const auto& [node, c] : count) max_count = std::max(max_count, c);
    CHECK(max_count <= 3.0 * mean);
}

TEST_CASE("recruitment order skips excluded and follows hash order") {
    auto view = make_view(10, {0, 1, 2, 3, 4, 5});
    auto order = recruitment_order(view, kEnt, 2, {1, 3});
    CHECK(order.size() == 4);
    for (NodeId n : order) {
        CHECK(n != 1);
        CHECK(n != 3);
    }
    for (size_t i = 1; i < order.size(); ++i) {
        HashRank a{sortition_hash(2, order[i - 1], kEnt), order[i - 1]};
        HashRank b{sortition_hash(2, order[i], kEnt), order[i]};
        CHECK(a < b);
    }
}
