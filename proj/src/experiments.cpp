#include "stamesh/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include "stamesh/simnet.hpp"

namespace stamesh {

SelectionStats selection_stats(Config cfg, int n_devices, int epochs,
                               const std::vector<uint64_t>& seeds) {
    cfg.n_devices = n_devices;
    cfg = validate_config(cfg);
    SelectionStats out;
    out.n = n_devices;
    out.policy = cfg.selection_policy;
    double qd_sum = 0, ov_sum = 0, cand_sum = 0;
    size_t qd_n = 0, ov_n = 0, cand_n = 0;

    for (uint64_t seed : seeds) {
        Topology topo = build_topology(cfg.topology, cfg.n_devices, cfg.smart_fraction, seed);
        Network net(topo, cfg.node_bandwidth, 0.0, seed);
        ClusterSet clusters = cluster_devices(topo.positions, cfg.devices_per_kgroup, seed);
        auto view = std::make_shared<ViewData>();
        view->alive.assign(static_cast<size_t>(topo.n), 1);
        view->smart = topo.smart;

        std::vector<EntityId> entities;
        for (int32_t c = 0; c < clusters.count; ++c)
            entities.push_back(
                {EntityKind::DeviceCluster, c, clusters.centers[static_cast<size_t>(c)]});

        std::map<EntityKey, Committee> prev;
        std::map<NodeId, std::vector<double>> monitored;
        for (int e = 0; e < epochs; ++e) {
            SelectBasis basis = make_select_basis(view, static_cast<Epoch>(e), seed, cfg,
                                                  topo.positions, clusters, monitored);
            std::map<EntityKey, Committee> cur;
            for (const EntityId& ent : entities) {
                Committee com = select_committee(basis, ent, cfg.k);
                cur[key_of(ent)] = com;
                std::vector<int> hops;
                for (NodeId m : com.members) {
                    if (m == com.leader) continue;
                    int h = net.hop_distance(com.leader, m);
                    if (h >= 0) hops.push_back(h);
                }
                std::sort(hops.begin(), hops.end());
                int take = std::min<int>(cfg.f, static_cast<int>(hops.size()));
                if (take > 0) {
                    double s = 0;
                    for (int i = 0; i < take; ++i) s += hops[static_cast<size_t>(i)];
                    qd_sum += s / take;
                    ++qd_n;
                }
                if (cfg.selection_policy == SelectionPolicy::LshMix) {
                    cand_sum += com.stage1_candidates;
                    ++cand_n;
                }
                auto p = prev.find(key_of(ent));
                if (p != prev.end()) {
                    int shared = 0;
                    for (NodeId m : com.members)
                        if (std::find(p->second.members.begin(), p->second.members.end(), m) !=
                            p->second.members.end())
                            ++shared;
                    ov_sum += static_cast<double>(shared) / static_cast<double>(com.members.size());
                    ++ov_n;
                }
            }
            // next epoch's appended coordinates come from this epoch's assignments
            monitored.clear();
            std::map<NodeId, std::pair<std::vector<double>, int>> acc;
            for (const auto& [entk, com] : cur) {
                for (NodeId member : com.members) {
                    auto& [sum, cnt] = acc[member];
                    if (sum.empty()) sum.assign(static_cast<size_t>(topo.dim), 0.0);
                    for (NodeId d = 0; d < topo.n; ++d) {
                        if (clusters.assignment[static_cast<size_t>(d)] != entk.id) continue;
                        for (int c = 0; c < topo.dim; ++c)
                            sum[static_cast<size_t>(c)] +=
                                topo.positions[static_cast<size_t>(d)][static_cast<size_t>(c)];
                        ++cnt;
                    }
                }
            }
            for (auto& [member, sc] : acc) {
                auto& [sum, cnt] = sc;
                if (!cnt) continue;
                for (auto& x : sum) x /= cnt;
                monitored[member] = sum;
            }
            prev = std::move(cur);
        }
    }
    out.mean_quorum_distance = qd_n ? qd_sum / qd_n : 0.0;
    out.mean_overlap = ov_n ? ov_sum / ov_n : 0.0;
    out.mean_candidates = cand_n ? cand_sum / cand_n : 0.0;
    out.samples = qd_n;
    return out;
}

MetricsReport run_scenario(const Scenario& s, const std::vector<uint64_t>& seeds, int jobs,
                           const std::string& outdir) {
    auto trials = run_trials(s, seeds, jobs);
    std::vector<Trace> traces;
    traces.reserve(trials.size());
    for (auto& t : trials) traces.push_back(std::move(t.trace));
    MetricsReport rep = aggregate(traces);
    if (!outdir.empty()) write_csv(rep, outdir);
    return rep;
}

VerifyReport verify_scenario(const Scenario& s, const std::vector<uint64_t>& seeds, int jobs) {
    VerifyReport report;
    std::vector<std::unique_ptr<MonitorSuite>> suites(seeds.size());
    std::atomic<size_t> slot{0};
    // one suite per trial; factory hands each harness its own suite
    struct Slot {
        Scenario scenario;
    };
    std::vector<TrialResult> results(seeds.size());
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    int workers = std::max(1, jobs);
    auto work = [&] {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= seeds.size()) return;
            auto factory = [&, i](SimHarness& h) {
                suites[i] = std::make_unique<MonitorSuite>(h.workload(), true);
                return std::vector<SimHarness::MonitorFn>{suites[i]->fn()};
            };
            results[i] = run_trial(s, seeds[i], factory);
        }
    };
    (void)slot;
    if (workers == 1 || seeds.size() <= 1) {
        work();
    } else {
        for (int j = 0; j < workers; ++j) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    for (size_t i = 0; i < seeds.size(); ++i) {
        if (!suites[i]) continue;
        for (const auto& [prop, ok] : suites[i]->verdicts()) {
            auto it = report.verdicts.find(prop);
            if (it == report.verdicts.end())
                report.verdicts[prop] = ok;
            else
                it->second = it->second && ok;
        }
        for (const auto& v : suites[i]->violations()) {
            Violation tagged = v;
            tagged.detail += " (seed " + std::to_string(seeds[i]) + ")";
            report.violations.push_back(tagged);
        }
    }
    return report;
}

namespace {

std::ofstream open_csv(const std::string& outdir, const std::string& name, const std::string& header) {
    std::filesystem::create_directories(outdir);
    std::ofstream out(outdir + "/" + name);
    out << header << "\n";
    return out;
}

}  // namespace

std::vector<DelayRow> experiment_client_delay(const Scenario& base, const std::vector<int>& n_sweep,
                                              const std::vector<uint64_t>& seeds, int jobs,
                                              const std::string& outdir) {
    std::vector<DelayRow> rows;
    for (int n : n_sweep) {
        for (LockingStrategy locking : {LockingStrategy::Sla, LockingStrategy::Ola}) {
            Scenario s = base;
            s.cfg.n_devices = n;
            s.cfg.locking = locking;
            DelayRow row;
            row.n = n;
            row.locking = locking;
            MetricsReport rep = run_scenario(s, seeds, jobs, "");
            row.client_delay = rep.client_delay;
            row.sync_delay = rep.sync_delay;
            row.client_delay.finalize();
            row.sync_delay.finalize();
            rows.push_back(std::move(row));
        }
    }
    if (!outdir.empty()) {
        auto out = open_csv(outdir, "client_delay_sweep.csv",
                            "n_devices,locking,samples,median_time_units,mean_time_units,p90_time_units");
        for (const auto& r : rows)
            out << r.n << "," << to_string(r.locking) << "," << r.client_delay.n() << ","
                << format_double(r.client_delay.median) << "," << format_double(r.client_delay.mean)
                << "," << format_double(r.client_delay.p90) << "\n";
    }
    return rows;
}

std::vector<DelayRow> experiment_churn_delay(const Scenario& base,
                                             const std::vector<double>& churn_sweep,
                                             const std::vector<uint64_t>& seeds, int jobs,
                                             const std::string& outdir) {
    std::vector<DelayRow> rows;
    for (double frac : churn_sweep) {
        Scenario s = base;
        s.churn.smart_fraction = frac;
        DelayRow row;
        row.n = s.cfg.n_devices;
        row.locking = s.cfg.locking;
        row.churn_fraction = frac;
        MetricsReport rep = run_scenario(s, seeds, jobs, "");
        row.client_delay = rep.client_delay;
        row.sync_delay = rep.sync_delay;
        row.client_delay.finalize();
        row.sync_delay.finalize();
        rows.push_back(std::move(row));
    }
    if (!outdir.empty()) {
        auto out = open_csv(outdir, "churn_delay_sweep.csv",
                            "churn_fraction,client_samples,client_median,client_mean,client_p90,"
                            "sync_samples,sync_median,sync_mean,sync_p90");
        for (const auto& r : rows)
            out << format_double(r.churn_fraction) << "," << r.client_delay.n() << ","
                << format_double(r.client_delay.median) << "," << format_double(r.client_delay.mean)
                << "," << format_double(r.client_delay.p90) << "," << r.sync_delay.n() << ","
                << format_double(r.sync_delay.median) << "," << format_double(r.sync_delay.mean)
                << "," << format_double(r.sync_delay.p90) << "\n";
    }
    return rows;
}

namespace {

MicroRow micro_row_from_report(const MetricsReport& rep) {
    MicroRow row;
    row.election_delay = rep.election_delay;
    row.election_rtts = rep.election_rtts;
    row.election_fail_rtts = rep.election_fail_rtts;
    row.lock_service = rep.lock_service;
    row.lock_service_rtts = rep.lock_service_rtts;
    row.state_transfer = rep.state_transfer;
    row.election_delay.finalize();
    row.election_rtts.finalize();
    row.election_fail_rtts.finalize();
    row.lock_service.finalize();
    row.lock_service_rtts.finalize();
    row.state_transfer.finalize();
    return row;
}

void write_micro_csv(const std::string& outdir, const std::string& name,
                     const std::vector<MicroRow>& rows, bool by_churn) {
    auto out = open_csv(outdir, name,
                        std::string(by_churn ? "churn_fraction" : "k") +
                            ",election_median,election_mean,election_rtts_median,"
                            "election_fail_rtts_p90,lock_service_median,lock_service_mean,lock_service_rtts_median,"
                            "state_transfer_median,state_transfer_mean");
    for (const auto& r : rows) {
        if (by_churn)
            out << format_double(r.churn_fraction);
        else
            out << r.k;
        out << "," << format_double(r.election_delay.median) << ","
            << format_double(r.election_delay.mean) << "," << format_double(r.election_rtts.median)
            << "," << format_double(r.election_fail_rtts.p90) << ","
            << format_double(r.lock_service.median) << "," << format_double(r.lock_service.mean)
            << "," << format_double(r.lock_service_rtts.median) << ","
            << format_double(r.state_transfer.median) << ","
            << format_double(r.state_transfer.mean) << "\n";
    }
}

}  // namespace

std::vector<MicroRow> experiment_kgroup_micro(const Scenario& base, const std::vector<int>& k_sweep,
                                              const std::vector<uint64_t>& seeds, int jobs,
                                              const std::string& outdir) {
    std::vector<MicroRow> rows;
    for (int k : k_sweep) {
        Scenario s = base;
        s.cfg.k = k;
        s.cfg.f = (k - 1) / 2;
        // leader-failure injection: cap kills so each group keeps a quorum
        s.churn.per_group_cap = std::max(1, s.cfg.f);
        s.churn.target_leaders = true;
        if (s.churn.smart_fraction <= 0.0) s.churn.smart_fraction = 0.1;
        MetricsReport rep = run_scenario(s, seeds, jobs, "");
        MicroRow row = micro_row_from_report(rep);
        row.k = k;
        rows.push_back(std::move(row));
    }
    if (!outdir.empty()) write_micro_csv(outdir, "kgroup_micro_k.csv", rows, false);
    return rows;
}

std::vector<MicroRow> experiment_kgroup_churn(const Scenario& base,
                                              const std::vector<double>& churn_sweep,
                                              const std::vector<uint64_t>& seeds, int jobs,
                                              const std::string& outdir) {
    std::vector<MicroRow> rows;
    for (double frac : churn_sweep) {
        Scenario s = base;
        s.churn.smart_fraction = frac;
        MetricsReport rep = run_scenario(s, seeds, jobs, "");
        MicroRow row = micro_row_from_report(rep);
        row.k = s.cfg.k;
        row.churn_fraction = frac;
        rows.push_back(std::move(row));
    }
    if (!outdir.empty()) write_micro_csv(outdir, "kgroup_micro_churn.csv", rows, true);
    return rows;
}

std::vector<SelectionRow> experiment_quorum_distance(const Scenario& base,
                                                     const std::vector<int>& n_sweep,
                                                     const std::vector<uint64_t>& seeds,
                                                     const std::string& outdir) {
    std::vector<SelectionRow> rows;
    const int epochs = 8;
    for (int n : n_sweep) {
        for (SelectionPolicy policy : {SelectionPolicy::Random, SelectionPolicy::LshMix}) {
            Scenario s = base;
            s.cfg.selection_policy = policy;
            SelectionRow row;
            row.n = n;
            row.policy = policy;
            row.lsh_m = s.cfg.lsh_m;
            row.stats = selection_stats(s.cfg, n, epochs, seeds);
            rows.push_back(row);
        }
    }
    if (!outdir.empty()) {
        auto out = open_csv(outdir, "quorum_distance_sweep.csv",
                            "n_devices,policy,lsh_m,mean_quorum_distance_hops,mean_overlap_fraction,"
                            "mean_stage1_candidates,samples");
        for (const auto& r : rows)
            out << r.n << "," << to_string(r.policy) << "," << r.lsh_m << ","
                << format_double(r.stats.mean_quorum_distance) << ","
                << format_double(r.stats.mean_overlap) << ","
                << format_double(r.stats.mean_candidates) << "," << r.stats.samples << "\n";
    }
    return rows;
}

std::vector<BandwidthRow> experiment_bandwidth_baseline(const Scenario& base,
                                                        const std::vector<int>& routine_sweep,
                                                        const std::vector<uint64_t>& seeds, int jobs,
                                                        const std::string& outdir) {
    std::vector<BandwidthRow> rows;
    for (bool centralized : {false, true}) {
        for (int routines : routine_sweep) {
            Scenario s = base;
            s.workload.routines = routines;
            if (centralized) {
                s.cfg.selection_policy = SelectionPolicy::Central;
                s.cfg.f = 0;
                s.cfg.k = 1;
                s.cfg.allow_k_override = true;
            }
            MetricsReport rep = run_scenario(s, seeds, jobs, "");
            BandwidthRow row;
            row.centralized = centralized;
            row.routines = routines;
            double fg = 0, total = 0;
            std::map<int, double> h2h_by_trial_max, e2e_by_trial_max;
            for (const NodeAgg& n : rep.nodes) {
                h2h_by_trial_max[n.trial] = std::max(h2h_by_trial_max[n.trial], n.bytes_h2h);
                e2e_by_trial_max[n.trial] = std::max(e2e_by_trial_max[n.trial], n.bytes_e2e);
                fg += n.bytes_fg;
                total += n.bytes_fg + n.bytes_bg;
            }
            double h2h_sum = 0, e2e_sum = 0;
            for (auto& [t, v] : h2h_by_trial_max) h2h_sum += v;
            for (auto& [t, v] : e2e_by_trial_max) e2e_sum += v;
            size_t trials = std::max<size_t>(1, h2h_by_trial_max.size());
            row.max_node_bytes_per_unit = h2h_sum / static_cast<double>(trials) / s.horizon;
            row.max_node_e2e_per_unit = e2e_sum / static_cast<double>(trials) / s.horizon;
            row.fg_share = total > 0 ? fg / total : 0.0;
            rows.push_back(row);
        }
    }
    if (!outdir.empty()) {
        auto out = open_csv(outdir, "bandwidth_baseline.csv",
                            "mode,routines,max_node_h2h_bytes_per_unit,max_node_e2e_bytes_per_unit,"
                            "foreground_share");
        for (const auto& r : rows)
            out << (r.centralized ? "CENTRAL" : "COMESH") << "," << r.routines << ","
                << format_double(r.max_node_bytes_per_unit) << ","
                << format_double(r.max_node_e2e_per_unit) << "," << format_double(r.fg_share)
                << "\n";
    }
    return rows;
}

std::vector<AvailabilityRow> experiment_availability(AvailabilityParams base, int f_max,
                                                     uint64_t mc_trials, uint64_t seed,
                                                     const std::string& outdir) {
    std::vector<AvailabilityRow> rows;
    for (int F = 0; F <= f_max; ++F) {
        AvailabilityRow row;
        row.F = F;
        AvailabilityParams p = base;
        p.F = F;
        row.formula = availability(p);
        AvailabilityParams single = p;
        single.G = 1;
        row.single_group = availability(single);
        if (mc_trials > 0 && F % 5 == 0) {
            auto mc = availability_montecarlo(p, mc_trials, seed + static_cast<uint64_t>(F));
            row.montecarlo = mc.estimate;
            row.stderr_ = mc.stderr_;
        }
        rows.push_back(row);
    }
    if (!outdir.empty()) {
        auto out = open_csv(outdir, "availability_curve.csv",
                            "F,formula_probability,single_group_probability,montecarlo,stderr");
        for (const auto& r : rows)
            out << r.F << "," << format_double(r.formula) << "," << format_double(r.single_group)
                << "," << (r.montecarlo < 0 ? "" : format_double(r.montecarlo)) << ","
                << (r.montecarlo < 0 ? "" : format_double(r.stderr_)) << "\n";
    }
    return rows;
}

int run_experiment(const Scenario& s, const std::vector<uint64_t>& seeds, int jobs,
                   const std::string& outdir, std::ostream& log) {
    switch (s.experiment) {
        case ExperimentKind::ClientDelay: {
            auto rows = experiment_client_delay(s, {50, 250, 500, 750}, seeds, jobs, outdir);
            for (const auto& r : rows)
                log << "N=" << r.n << " " << to_string(r.locking)
                    << " client_delay median=" << format_double(r.client_delay.median) << " ("
                    << r.client_delay.n() << " samples)\n";
            return 0;
        }
        case ExperimentKind::SyncDelay: {
            MetricsReport rep = run_scenario(s, seeds, jobs, outdir);
            print_summary(rep, log);
            return 0;
        }
        case ExperimentKind::Load: {
            for (SelectionPolicy pol : {SelectionPolicy::Random, SelectionPolicy::LshMix}) {
                Scenario sv = s;
                sv.cfg.selection_policy = pol;
                MetricsReport rep =
                    run_scenario(sv, seeds, jobs, outdir + "/" + to_string(pol));
                log << to_string(pol) << ":\n";
                print_summary(rep, log);
            }
            return 0;
        }
        case ExperimentKind::KgroupMicro: {
            auto rows = experiment_kgroup_micro(s, {3, 5, 7, 9, 11}, seeds, jobs, outdir);
            for (const auto& r : rows)
                log << "k=" << r.k
                    << " election median=" << format_double(r.election_delay.median)
                    << " lock_service median=" << format_double(r.lock_service.median)
                    << " state_transfer median=" << format_double(r.state_transfer.median) << "\n";
            auto churn_rows =
                experiment_kgroup_churn(s, {0.0, 0.2, 0.4, 0.6}, seeds, jobs, outdir);
            for (const auto& r : churn_rows)
                log << "churn=" << format_double(r.churn_fraction)
                    << " election median=" << format_double(r.election_delay.median)
                    << " lock_service median=" << format_double(r.lock_service.median) << "\n";
            return 0;
        }
        case ExperimentKind::Availability: {
            AvailabilityParams p{100, 30, 11, 5, 0};
            auto rows = experiment_availability(p, 60, 100000, seeds.empty() ? 1 : seeds[0], outdir);
            log << "availability curve written (" << rows.size() << " points)\n";
            return 0;
        }
        case ExperimentKind::BandwidthBaseline: {
            auto rows = experiment_bandwidth_baseline(
                s, {s.workload.routines, 2 * s.workload.routines}, seeds, jobs, outdir);
            for (const auto& r : rows)
                log << (r.centralized ? "CENTRAL" : "COMESH") << " routines=" << r.routines
                    << " max_node_h2h=" << format_double(r.max_node_bytes_per_unit)
                    << " bytes/unit\n";
            return 0;
        }
        case ExperimentKind::QuorumDistance: {
            auto rows =
                experiment_quorum_distance(s, {50, 250, 500, 750, 1000}, seeds, outdir);
            for (const auto& r : rows)
                log << "N=" << r.n << " " << to_string(r.policy)
                    << " quorum_distance=" << format_double(r.stats.mean_quorum_distance)
                    << " overlap=" << format_double(r.stats.mean_overlap)
                    << " candidates=" << format_double(r.stats.mean_candidates) << "\n";
            return 0;
        }
    }
    return 1;
}

}  // namespace stamesh
