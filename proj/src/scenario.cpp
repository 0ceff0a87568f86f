#include "stamesh/scenario.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <fstream>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace stamesh {

const char* to_string(ConflictStructure c) {
    switch (c) {
        case ConflictStructure::Disjoint: return "DISJOINT";
        case ConflictStructure::Chained: return "CHAINED";
        case ConflictStructure::AllConflict: return "ALL_CONFLICT";
    }
    return "?";
}

const char* to_string(ExperimentKind e) {
    switch (e) {
        case ExperimentKind::ClientDelay: return "CLIENT_DELAY";
        case ExperimentKind::SyncDelay: return "SYNC_DELAY";
        case ExperimentKind::Load: return "LOAD";
        case ExperimentKind::KgroupMicro: return "KGROUP_MICRO";
        case ExperimentKind::Availability: return "AVAILABILITY";
        case ExperimentKind::BandwidthBaseline: return "BANDWIDTH_BASELINE";
        case ExperimentKind::QuorumDistance: return "QUORUM_DISTANCE";
    }
    return "?";
}

ConflictStructure conflict_from_string(const std::string& s) {
    if (s == "DISJOINT") return ConflictStructure::Disjoint;
    if (s == "CHAINED") return ConflictStructure::Chained;
    if (s == "ALL_CONFLICT") return ConflictStructure::AllConflict;
    throw ConfigError("unknown conflict structure: " + s);
}

ExperimentKind experiment_from_string(const std::string& s) {
    if (s == "CLIENT_DELAY") return ExperimentKind::ClientDelay;
    if (s == "SYNC_DELAY") return ExperimentKind::SyncDelay;
    if (s == "LOAD") return ExperimentKind::Load;
    if (s == "KGROUP_MICRO") return ExperimentKind::KgroupMicro;
    if (s == "AVAILABILITY") return ExperimentKind::Availability;
    if (s == "BANDWIDTH_BASELINE") return ExperimentKind::BandwidthBaseline;
    if (s == "QUORUM_DISTANCE") return ExperimentKind::QuorumDistance;
    throw ConfigError("unknown experiment: " + s);
}

using nlohmann::json;

std::string scenario_to_json(const Scenario& s) {
    json j;
    j["name"] = s.name;
    j["horizon"] = s.horizon;
    j["experiment"] = to_string(s.experiment);
    j["config"] = json::parse(config_to_json(s.cfg));
    j["workload"] = {{"routines", s.workload.routines},
                     {"devices_per_routine", s.workload.devices_per_routine},
                     {"conflict", to_string(s.workload.conflict)},
                     {"first_trigger", s.workload.first_trigger},
                     {"trigger_interval", s.workload.trigger_interval},
                     {"rounds", s.workload.rounds},
                     {"stagger", s.workload.stagger},
                     {"simultaneous", s.workload.simultaneous}};
    json ch = {{"smart_fraction", s.churn.smart_fraction},
               {"window_begin", s.churn.window_begin},
               {"window_end", s.churn.window_end},
               {"rejoin", s.churn.rejoin},
               {"down_time", s.churn.down_time},
               {"per_group_cap", s.churn.per_group_cap},
               {"target_leaders", s.churn.target_leaders}};
    json extra = json::array();
    for (const auto& ev : s.churn.extra)
        extra.push_back({{"t", ev.t},
                         {"node", ev.node},
                         {"kind", ev.kind == ChurnKind::Fail ? "FAIL" : "JOIN"}});
    ch["extra"] = extra;
    j["churn"] = ch;
    return j.dump(2);
}

Scenario scenario_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scenario parse error: ") + e.what());
    }
    Scenario s;
    try {
        if (j.contains("name")) s.name = j["name"].get<std::string>();
        if (j.contains("horizon")) s.horizon = j["horizon"].get<double>();
        if (j.contains("experiment"))
            s.experiment = experiment_from_string(j["experiment"].get<std::string>());
        if (j.contains("config")) s.cfg = config_from_json(j["config"].dump());
        if (j.contains("workload")) {
            const auto& w = j["workload"];
            if (w.contains("routines")) s.workload.routines = w["routines"].get<int>();
            if (w.contains("devices_per_routine"))
                s.workload.devices_per_routine = w["devices_per_routine"].get<int>();
            if (w.contains("conflict"))
                s.workload.conflict = conflict_from_string(w["conflict"].get<std::string>());
            if (w.contains("first_trigger")) s.workload.first_trigger = w["first_trigger"].get<double>();
            if (w.contains("trigger_interval"))
                s.workload.trigger_interval = w["trigger_interval"].get<double>();
            if (w.contains("rounds")) s.workload.rounds = w["rounds"].get<int>();
            if (w.contains("stagger")) s.workload.stagger = w["stagger"].get<double>();
            if (w.contains("simultaneous")) s.workload.simultaneous = w["simultaneous"].get<bool>();
        }
        if (j.contains("churn")) {
            const auto& c = j["churn"];
            if (c.contains("smart_fraction")) s.churn.smart_fraction = c["smart_fraction"].get<double>();
            if (c.contains("window_begin")) s.churn.window_begin = c["window_begin"].get<double>();
            if (c.contains("window_end")) s.churn.window_end = c["window_end"].get<double>();
            if (c.contains("rejoin")) s.churn.rejoin = c["rejoin"].get<bool>();
            if (c.contains("down_time")) s.churn.down_time = c["down_time"].get<double>();
            if (c.contains("per_group_cap")) s.churn.per_group_cap = c["per_group_cap"].get<int>();
            if (c.contains("target_leaders")) s.churn.target_leaders = c["target_leaders"].get<bool>();
            if (c.contains("extra"))
                for (const auto& ev : c["extra"]) {
                    ChurnEvent e;
                    e.t = ev["t"].get<double>();
                    e.node = ev["node"].get<NodeId>();
                    e.kind = ev["kind"].get<std::string>() == "JOIN" ? ChurnKind::Join : ChurnKind::Fail;
                    s.churn.extra.push_back(e);
                }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scenario field error: ") + e.what());
    }
    return s;
}

Scenario load_scenario_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return scenario_from_json(ss.str());
}

Workload build_workload(const Scenario& s, const Topology& topo, const ClusterSet& clusters,
                        uint64_t seed) {
    Workload wl;
    const WorkloadSpec& spec = s.workload;
    Rng rng(mix_seed({seed, 0x3017ADULL}));
    const int n = topo.n;
    const int per = std::min(spec.devices_per_routine, s.cfg.max_routine_length);

    // one distinct trigger device per routine, then command sets per conflict shape
    std::vector<int> pool(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
    rng.shuffle(pool);
    size_t cursor = 0;
    auto draw = [&]() {
        NodeId d = pool[cursor % pool.size()];
        ++cursor;
        return d;
    };

    std::vector<NodeId> trigger_devs;
    for (int i = 0; i < spec.routines; ++i) trigger_devs.push_back(draw());

    std::vector<std::vector<NodeId>> command_sets(static_cast<size_t>(spec.routines));
    switch (spec.conflict) {
        case ConflictStructure::Disjoint: {
            for (auto& set : command_sets) {
                std::set<NodeId> got;
                while (static_cast<int>(got.size()) < per) got.insert(draw());
                set.assign(got.begin(), got.end());
            }
            break;
        }
        case ConflictStructure::Chained: {
            NodeId link = draw();
            for (size_t i = 0; i < command_sets.size(); ++i) {
                std::set<NodeId> got{link};
                while (static_cast<int>(got.size()) < per) got.insert(draw());
                command_sets[i].assign(got.begin(), got.end());
                link = *got.rbegin();  // share the highest id with the next routine
            }
            break;
        }
        case ConflictStructure::AllConflict: {
            std::set<NodeId> shared;
            while (static_cast<int>(shared.size()) < per) shared.insert(draw());
            for (auto& set : command_sets) set.assign(shared.begin(), shared.end());
            break;
        }
    }

    for (int i = 0; i < spec.routines; ++i) {
        Routine r;
        r.id = i;
        TriggerNode leaf;
        leaf.kind = TriggerNode::Kind::Leaf;
        leaf.device = trigger_devs[static_cast<size_t>(i)];
        leaf.op = CmpOp::Ge;
        leaf.threshold = 50.0;
        r.trigger.root = leaf;
        std::vector<NodeId> order = command_sets[static_cast<size_t>(i)];
        rng.shuffle(order);
        for (NodeId d : order) r.commands.push_back({d, rng.next_u64(), s.cfg.command_duration});
        wl.routines.push_back(std::move(r));
        auto touched = wl.routines.back().touched();
        std::vector<NodeId> tv(touched.begin(), touched.end());
        wl.representative.push_back(tv[rng.uniform_u64(tv.size())]);
    }

    for (int round = 0; round < spec.rounds; ++round) {
        Time base = spec.first_trigger + round * spec.trigger_interval;
        for (int i = 0; i < spec.routines; ++i) {
            Time t = base + (spec.simultaneous ? 0.0 : i * spec.stagger);
            wl.triggers.emplace_back(t, i);
            wl.last_trigger_time = std::max(wl.last_trigger_time, t);
        }
    }
    std::sort(wl.triggers.begin(), wl.triggers.end());
    (void)clusters;
    return wl;
}

std::vector<ChurnEvent> build_churn(const Scenario& s, const Topology& topo,
                                    const ClusterSet& clusters, const Workload& wl, uint64_t seed) {
    std::vector<ChurnEvent> out = s.churn.extra;
    const ChurnSpec& spec = s.churn;
    if (!spec.domain_failures.empty()) {
        int dsize = std::max(1, s.cfg.power_domain_size);
        for (const auto& [t, domain] : spec.domain_failures)
            for (NodeId n = 0; n < topo.n; ++n)
                if (n / dsize == domain) out.push_back({t, n, ChurnKind::Fail});
    }
    if (spec.smart_fraction <= 0.0) {
        std::sort(out.begin(), out.end(), [](const ChurnEvent& a, const ChurnEvent& b) {
            return a.t < b.t;
        });
        return out;
    }
    Rng rng(mix_seed({seed, 0xC4012ULL}));
    std::vector<NodeId> smart;
    for (NodeId i = 0; i < topo.n; ++i)
        if (topo.smart[static_cast<size_t>(i)]) smart.push_back(i);
    int count = static_cast<int>(std::llround(spec.smart_fraction * static_cast<double>(smart.size())));
    count = std::min<int>(count, static_cast<int>(smart.size()));

    Time begin = spec.window_begin, end = spec.window_end;
    if (begin == 0.0 && end == 0.0) {
        begin = 0.25 * s.horizon;
        end = 0.7 * s.horizon;
    }

    // epoch-0 committees, recomputed here exactly as the harness will
    auto view = std::make_shared<ViewData>();
    view->alive.assign(static_cast<size_t>(topo.n), 1);
    view->smart = topo.smart;
    std::map<NodeId, std::vector<double>> no_history;
    Config cfg = s.cfg;
    SelectBasis basis =
        make_select_basis(view, 0, seed, cfg, topo.positions, clusters, no_history);
    int k_eff = cfg.selection_policy == SelectionPolicy::Central ? 1 : cfg.k;

    std::vector<EntityId> entities;
    for (int32_t c = 0; c < clusters.count; ++c)
        entities.push_back({EntityKind::DeviceCluster, c, clusters.centers[static_cast<size_t>(c)]});
    for (size_t i = 0; i < wl.routines.size(); ++i)
        entities.push_back({EntityKind::Routine, wl.routines[i].id, wl.representative[i]});

    std::map<NodeId, std::vector<EntityKey>> member_of;
    std::vector<NodeId> leaders;
    for (const EntityId& ent : entities) {
        Committee com;
        try {
            com = select_committee(basis, ent, k_eff);
        } catch (const InsufficientSmartNodes&) {
            continue;
        }
        for (NodeId m : com.members) member_of[m].push_back(key_of(ent));
        leaders.push_back(com.leader);
    }

    std::map<EntityKey, int> kills_per_group;
    auto within_budget = [&](NodeId n) {
        if (spec.per_group_cap < 0) return true;
        auto it = member_of.find(n);
        if (it == member_of.end()) return true;
        for (const EntityKey& g : it->second)
            if (kills_per_group[g] + 1 > spec.per_group_cap) return false;
        return true;
    };
    auto book_kill = [&](NodeId n) {
        auto it = member_of.find(n);
        if (it == member_of.end()) return;
        for (const EntityKey& g : it->second) ++kills_per_group[g];
    };

    std::vector<NodeId> order;
    if (spec.target_leaders) {
        // leaders first (deduplicated), then the rest
        std::set<NodeId> seen;
        for (NodeId l : leaders)
            if (seen.insert(l).second) order.push_back(l);
        for (NodeId m : smart)
            if (!seen.count(m)) order.push_back(m);
    } else {
        order = smart;
        rng.shuffle(order);
    }

    int made = 0;
    size_t trig_cursor = 0;
    for (NodeId n : order) {
        if (made >= count) break;
        if (!within_budget(n)) continue;
        Time t;
        if (spec.target_leaders && !wl.triggers.empty()) {
            // just after a trigger fires: mid-lock for the affected groups
            const auto& [tt, rid] = wl.triggers[trig_cursor % wl.triggers.size()];
            ++trig_cursor;
            t = tt + rng.uniform_real(2.0, 30.0);
        } else {
            t = rng.uniform_real(begin, end);
        }
        book_kill(n);
        out.push_back({t, n, ChurnKind::Fail});
        if (spec.rejoin) out.push_back({t + spec.down_time, n, ChurnKind::Join});
        ++made;
    }
    std::sort(out.begin(), out.end(), [](const ChurnEvent& a, const ChurnEvent& b) {
        if (a.t != b.t) return a.t < b.t;
        return a.node < b.node;
    });
    return out;
}

TrialResult run_trial(const Scenario& s, uint64_t seed, const MonitorFactory& monitors) {
    Config cfg = validate_config(s.cfg);
    Topology topo = build_topology(cfg.topology, cfg.n_devices, cfg.smart_fraction, seed);
    ClusterSet clusters = cluster_devices(topo.positions, cfg.devices_per_kgroup, seed);
    Workload wl = build_workload(s, topo, clusters, seed);
    std::vector<ChurnEvent> churn = build_churn(s, topo, clusters, wl, seed);

    SimHarness h(cfg, wl, churn, seed, s.horizon);
    if (monitors)
        for (auto& fn : monitors(h)) h.attach_monitor(std::move(fn));
    TrialResult res;
    res.seed = seed;
    res.trace = h.run();
    res.counters = h.counters();
    return res;
}

std::vector<TrialResult> run_trials(const Scenario& s, const std::vector<uint64_t>& seeds, int jobs,
                                    const MonitorFactory& monitors) {
    std::vector<TrialResult> results(seeds.size());
    if (jobs < 1) jobs = 1;
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= seeds.size()) return;
            results[i] = run_trial(s, seeds[i], monitors);
        }
    };
    if (jobs == 1 || seeds.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return results;
}

}  // namespace stamesh
