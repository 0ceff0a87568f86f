#include "stamesh/select.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "stamesh/digest.hpp"
#include "stamesh/rng.hpp"

namespace stamesh {

uint64_t sortition_hash(Epoch epoch, NodeId node, EntityKey entity) {
    uint8_t buf[17];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<uint8_t>(epoch >> (8 * i));
    uint32_t n = static_cast<uint32_t>(node);
    for (int i = 0; i < 4; ++i) buf[8 + i] = static_cast<uint8_t>(n >> (8 * i));
    buf[12] = static_cast<uint8_t>(entity.kind);
    uint32_t e = static_cast<uint32_t>(entity.id);
    for (int i = 0; i < 4; ++i) buf[13 + i] = static_cast<uint8_t>(e >> (8 * i));
    return sha256_trunc64(buf, sizeof(buf));
}

static std::vector<HashRank> ranked_alive_smart(const MembershipView& view, EntityKey entity,
                                                Epoch epoch) {
    std::vector<HashRank> ranks;
    for (NodeId n = 0; n < static_cast<NodeId>(view->alive.size()); ++n)
        if (view->is_alive_smart(n)) ranks.push_back({sortition_hash(epoch, n, entity), n});
    std::sort(ranks.begin(), ranks.end());
    return ranks;
}

std::vector<NodeId> sortition_select(const MembershipView& view, EntityKey entity, Epoch epoch,
                                     int k) {
    auto ranks = ranked_alive_smart(view, entity, epoch);
    if (static_cast<int>(ranks.size()) < k)
        throw InsufficientSmartNodes("sortition_select: " + std::to_string(ranks.size()) +
                                     " alive smart nodes < k=" + std::to_string(k));
    std::vector<NodeId> out;
    out.reserve(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) out.push_back(ranks[static_cast<size_t>(i)].id);
    return out;
}

int64_t lsh_scalar(std::span<const double> v, std::span<const double> a, double b, double r) {
    if (r <= 0.0) throw InvalidParameter("lsh_scalar: r must be > 0");
    if (v.size() != a.size()) throw InvalidParameter("lsh_scalar: dim(v) != dim(a)");
    double dot = 0.0;
    for (size_t i = 0; i < v.size(); ++i) dot += v[i] * a[i];
    return static_cast<int64_t>(std::floor((dot + b) / r));
}

LshParams LshParams::derive(uint64_t global_seed, Epoch epoch, int m, int l, double r, int dim) {
    if (r <= 0.0 || m < 1 || l < 1 || dim < 1) throw InvalidParameter("LshParams::derive");
    LshParams p;
    p.m = m;
    p.l = l;
    p.r = r;
    Rng rng(mix_seed({global_seed, epoch, 0x15A4ULL}));
    p.a.resize(static_cast<size_t>(l));
    p.b.resize(static_cast<size_t>(l));
    for (int j = 0; j < l; ++j) {
        p.a[static_cast<size_t>(j)].resize(static_cast<size_t>(m));
        p.b[static_cast<size_t>(j)].resize(static_cast<size_t>(m));
        for (int i = 0; i < m; ++i) {
            auto& vec = p.a[static_cast<size_t>(j)][static_cast<size_t>(i)];
            vec.resize(static_cast<size_t>(dim));
            for (auto& x : vec) x = rng.gaussian();
            p.b[static_cast<size_t>(j)][static_cast<size_t>(i)] = rng.uniform_real(0.0, r);
        }
    }
    return p;
}

std::vector<BucketKey> lsh_buckets(std::span<const double> augmented, const LshParams& params) {
    std::vector<BucketKey> keys(static_cast<size_t>(params.l));
    for (int j = 0; j < params.l; ++j) {
        BucketKey key(static_cast<size_t>(params.m));
        for (int i = 0; i < params.m; ++i)
            key[static_cast<size_t>(i)] =
                lsh_scalar(augmented, params.a[static_cast<size_t>(j)][static_cast<size_t>(i)],
                           params.b[static_cast<size_t>(j)][static_cast<size_t>(i)], params.r);
        keys[static_cast<size_t>(j)] = std::move(key);
    }
    return keys;
}

static double dist2(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

ClusterSet cluster_devices(const std::vector<std::vector<double>>& locations, int devices_per_kgroup,
                           uint64_t seed) {
    const int n = static_cast<int>(locations.size());
    if (n < 1) throw InvalidParameter("cluster_devices: no devices");
    ClusterSet cs;
    cs.count = (n + devices_per_kgroup - 1) / devices_per_kgroup;
    cs.assignment.assign(static_cast<size_t>(n), 0);
    Rng rng(mix_seed({seed, 0xC1C1ULL}));

    std::vector<std::vector<double>> centroids;
    for (int i : rng.sample_distinct(n, cs.count)) centroids.push_back(locations[static_cast<size_t>(i)]);

    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (int d = 0; d < n; ++d) {
            int best = 0;
            double bd = dist2(locations[static_cast<size_t>(d)], centroids[0]);
            for (int c = 1; c < cs.count; ++c) {
                double dd = dist2(locations[static_cast<size_t>(d)], centroids[static_cast<size_t>(c)]);
                if (dd < bd) {
                    bd = dd;
                    best = c;
                }
            }
            if (cs.assignment[static_cast<size_t>(d)] != best) {
                cs.assignment[static_cast<size_t>(d)] = best;
                changed = true;
            }
        }
        // recompute centroids; re-seed empty clusters with the worst-fitting device
        std::vector<int> sizes(static_cast<size_t>(cs.count), 0);
        std::vector<std::vector<double>> sums(static_cast<size_t>(cs.count),
                                              std::vector<double>(locations[0].size(), 0.0));
        for (int d = 0; d < n; ++d) {
            int c = cs.assignment[static_cast<size_t>(d)];
            ++sizes[static_cast<size_t>(c)];
            for (size_t i = 0; i < locations[0].size(); ++i)
                sums[static_cast<size_t>(c)][i] += locations[static_cast<size_t>(d)][i];
        }
        for (int c = 0; c < cs.count; ++c) {
            if (sizes[static_cast<size_t>(c)] == 0) {
                int far_dev = 0;
                double far_d = -1.0;
                for (int d = 0; d < n; ++d) {
                    double dd = dist2(locations[static_cast<size_t>(d)],
                                      centroids[static_cast<size_t>(cs.assignment[static_cast<size_t>(d)])]);
                    if (dd > far_d) {
                        far_d = dd;
                        far_dev = d;
                    }
                }
                centroids[static_cast<size_t>(c)] = locations[static_cast<size_t>(far_dev)];
                changed = true;
                continue;
            }
            for (size_t i = 0; i < locations[0].size(); ++i)
                centroids[static_cast<size_t>(c)][i] =
                    sums[static_cast<size_t>(c)][i] / sizes[static_cast<size_t>(c)];
        }
        if (!changed) break;
    }

    cs.centroids = centroids;
    cs.centers.assign(static_cast<size_t>(cs.count), kNoNode);
    std::vector<std::vector<NodeId>> members(static_cast<size_t>(cs.count));
    for (int d = 0; d < n; ++d)
        members[static_cast<size_t>(cs.assignment[static_cast<size_t>(d)])].push_back(d);
    for (int c = 0; c < cs.count; ++c) {
        auto& mem = members[static_cast<size_t>(c)];
        if (!mem.empty()) cs.centers[static_cast<size_t>(c)] = mem[rng.uniform_u64(mem.size())];
    }
    return cs;
}

SelectBasis make_select_basis(const MembershipView& view, Epoch epoch, uint64_t global_seed,
                              const Config& cfg, const std::vector<std::vector<double>>& locations,
                              const ClusterSet& clusters,
                              const std::map<NodeId, std::vector<double>>& prev_monitored_avg) {
    SelectBasis b;
    b.view = view;
    b.epoch = epoch;
    b.global_seed = global_seed;
    b.f = cfg.f;
    b.policy = cfg.selection_policy;
    b.locations = &locations;
    b.clusters = &clusters;
    b.borrow_neighbor_clusters = cfg.borrow_neighbor_clusters;
    if (b.policy != SelectionPolicy::LshMix) return b;

    const int dim = static_cast<int>(locations.empty() ? 0 : locations[0].size());
    b.params = LshParams::derive(global_seed, epoch, cfg.lsh_m, cfg.lsh_l, cfg.lsh_r, 2 * dim);
    const int n = static_cast<int>(locations.size());
    b.augmented.resize(static_cast<size_t>(n));
    b.node_buckets.resize(static_cast<size_t>(n));
    for (NodeId node = 0; node < n; ++node) {
        auto& aug = b.augmented[static_cast<size_t>(node)];
        const auto& base = locations[static_cast<size_t>(node)];
        aug = base;
        auto it = prev_monitored_avg.find(node);
        bool smart = view->smart[static_cast<size_t>(node)] != 0;
        if (smart && it != prev_monitored_avg.end()) {
            aug.insert(aug.end(), it->second.begin(), it->second.end());
            if (cfg.lsh_jitter_sigma > 0.0) {
                Rng jr(mix_seed({global_seed, epoch, 0x31173ULL, static_cast<uint64_t>(node)}));
                for (size_t i = base.size(); i < aug.size(); ++i)
                    aug[i] += cfg.lsh_jitter_sigma * jr.gaussian();
            }
        } else {
            aug.insert(aug.end(), base.begin(), base.end());
        }
        if (view->is_alive_smart(node)) b.node_buckets[static_cast<size_t>(node)] = lsh_buckets(aug, b.params);
    }
    return b;
}

static bool shares_bucket(const std::vector<BucketKey>& a, const std::vector<BucketKey>& b) {
    for (size_t j = 0; j < a.size(); ++j)
        if (a[j] == b[j]) return true;
    return false;
}

static Committee lsh_select(const SelectBasis& basis, const EntityId& entity, int k) {
    const auto& view = basis.view;
    const int f = (k - 1) / 2;
    EntityKey ekey = key_of(entity);
    const auto& locations = *basis.locations;

    // the entity's center is its representative device
    NodeId center = entity.representative_device;
    const auto& center_aug = basis.augmented[static_cast<size_t>(center)];
    auto center_buckets = lsh_buckets(center_aug, basis.params);
    const auto& center_loc = locations[static_cast<size_t>(center)];

    auto matches_of = [&](const std::vector<BucketKey>& probe) {
        std::vector<NodeId> out;
        for (NodeId node = 0; node < static_cast<NodeId>(locations.size()); ++node) {
            if (!view->is_alive_smart(node)) continue;
            if (shares_bucket(basis.node_buckets[static_cast<size_t>(node)], probe)) out.push_back(node);
        }
        return out;
    };

    std::vector<NodeId> cand = matches_of(center_buckets);
    const int own_matches = static_cast<int>(cand.size());

    auto nearest_to_center = [&](std::vector<NodeId> v, size_t want) {
        std::sort(v.begin(), v.end(), [&](NodeId x, NodeId y) {
            double dx = dist2(locations[static_cast<size_t>(x)], center_loc);
            double dy = dist2(locations[static_cast<size_t>(y)], center_loc);
            if (dx != dy) return dx < dy;
            return x < y;
        });
        if (v.size() > want) v.resize(want);
        return v;
    };

    const size_t want = static_cast<size_t>(f + 1);
    if (cand.size() < want && basis.clusters && basis.borrow_neighbor_clusters > 0) {
        // borrow bucket matches from the nearest other cluster centers
        int own_cluster = basis.clusters->assignment[static_cast<size_t>(center)];
        std::vector<std::pair<double, int>> order;
        for (int c = 0; c < basis.clusters->count; ++c) {
            if (c == own_cluster || basis.clusters->centers[static_cast<size_t>(c)] == kNoNode) continue;
            NodeId cc = basis.clusters->centers[static_cast<size_t>(c)];
            order.emplace_back(dist2(locations[static_cast<size_t>(cc)], center_loc), c);
        }
        std::sort(order.begin(), order.end());
        int used = 0;
        for (const auto& [d, c] : order) {
            if (cand.size() >= want || used >= basis.borrow_neighbor_clusters) break;
            NodeId cc = basis.clusters->centers[static_cast<size_t>(c)];
            auto theirs = matches_of(lsh_buckets(basis.augmented[static_cast<size_t>(cc)], basis.params));
            for (NodeId n : theirs)
                if (std::find(cand.begin(), cand.end(), n) == cand.end()) cand.push_back(n);
            ++used;
        }
    }
    cand = nearest_to_center(std::move(cand), want);

    Rng rng(mix_seed({basis.global_seed, basis.epoch, 0x5E1EC7ULL, static_cast<uint64_t>(ekey.kind),
                      static_cast<uint64_t>(static_cast<uint32_t>(ekey.id))}));
    auto fill_random = [&](std::vector<NodeId>& into, const std::vector<NodeId>& exclude, size_t upto) {
        std::vector<NodeId> pool;
        for (NodeId node = 0; node < static_cast<NodeId>(locations.size()); ++node) {
            if (!view->is_alive_smart(node)) continue;
            if (std::find(into.begin(), into.end(), node) != into.end()) continue;
            if (std::find(exclude.begin(), exclude.end(), node) != exclude.end()) continue;
            pool.push_back(node);
        }
        while (into.size() < upto && !pool.empty()) {
            size_t i = static_cast<size_t>(rng.uniform_u64(pool.size()));
            into.push_back(pool[i]);
            pool.erase(pool.begin() + static_cast<ptrdiff_t>(i));
        }
    };
    fill_random(cand, {}, want);  // random fallback when buckets were too thin

    std::vector<NodeId> stage2;
    fill_random(stage2, cand, static_cast<size_t>(f));

    auto by_hash = [&](std::vector<NodeId> v) {
        std::sort(v.begin(), v.end(), [&](NodeId x, NodeId y) {
            HashRank hx{sortition_hash(basis.epoch, x, ekey), x};
            HashRank hy{sortition_hash(basis.epoch, y, ekey), y};
            return hx < hy;
        });
        return v;
    };

    Committee com;
    com.stage1_candidates = own_matches;
    std::vector<NodeId> locals = by_hash(cand);
    std::vector<NodeId> randoms = by_hash(stage2);
    com.leadership = locals;
    com.leadership.insert(com.leadership.end(), randoms.begin(), randoms.end());
    com.members = by_hash(com.leadership);
    com.leader = com.leadership.empty() ? kNoNode : com.leadership[0];
    if (static_cast<int>(com.members.size()) < k)
        throw InsufficientSmartNodes("lsh_select: not enough alive smart nodes for k=" +
                                     std::to_string(k));
    return com;
}

Committee select_committee(const SelectBasis& basis, const EntityId& entity, int k) {
    Committee com;
    if (basis.policy == SelectionPolicy::Central) {
        for (NodeId n = 0; n < static_cast<NodeId>(basis.view->alive.size()); ++n)
            if (basis.view->is_alive_smart(n)) {
                com.members = {n};
                com.leadership = {n};
                com.leader = n;
                return com;
            }
        throw InsufficientSmartNodes("central: no alive smart node");
    }
    if (basis.policy == SelectionPolicy::LshMix) return lsh_select(basis, entity, k);

    com.members = sortition_select(basis.view, key_of(entity), basis.epoch, k);
    com.leadership = com.members;
    com.leader = com.members[0];
    return com;
}

std::vector<NodeId> recruitment_order(const MembershipView& view, EntityKey entity, Epoch epoch,
                                      const std::vector<NodeId>& exclude) {
    auto ranks = ranked_alive_smart(view, entity, epoch);
    std::vector<NodeId> out;
    for (const auto& r : ranks)
        if (std::find(exclude.begin(), exclude.end(), r.id) == exclude.end()) out.push_back(r.id);
    return out;
}

}  // namespace stamesh
