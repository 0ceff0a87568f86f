#include "stamesh/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace stamesh {

void Dist::finalize() {
    if (samples.empty()) {
        median = mean = p90 = 0.0;
        return;
    }
    std::vector<double> sorted = samples;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double v : sorted) sum += v;
    mean = sum / static_cast<double>(sorted.size());
    auto rank = [&](double p) {
        size_t idx = static_cast<size_t>(std::max<long long>(
            0, static_cast<long long>(std::ceil(p * static_cast<double>(sorted.size()))) - 1));
        return sorted[std::min(idx, sorted.size() - 1)];
    };
    median = rank(0.5);
    p90 = rank(0.9);
}

void MetricsReport::finalize() {
    client_delay.finalize();
    sync_delay.finalize();
    election_delay.finalize();
    election_rtts.finalize();
    election_fail_rtts.finalize();
    lock_service.finalize();
    lock_service_rtts.finalize();
    state_transfer.finalize();
    migration_gap.finalize();
    quorum_distance.finalize();
    kgroup_overlap.finalize();
    candidate_count.finalize();
}

MetricsReport aggregate(const std::vector<Trace>& traces) {
    MetricsReport rep;
    int trial = 0;
    for (const Trace& trace : traces) {
        // per-(routine, instance) bookkeeping for delays
        std::map<std::pair<int32_t, int64_t>, double> trigger_at;
        std::map<std::pair<int32_t, int64_t>, bool> first_cmd_seen;
        std::map<std::pair<int32_t, NodeId>, double> lock_req_at;
        std::map<std::pair<int32_t, NodeId>, double> lock_grant_rtt;

        for (const TraceRecord& r : trace) {
            switch (r.kind) {
                case Rec::MsgSend:
                    ++rep.messages;
                    rep.total_bytes += r.bytes;
                    break;
                case Rec::MsgDrop:
                    ++rep.drops;
                    break;
                case Rec::Commit:
                    ++rep.commits;
                    break;
                case Rec::TriggerArrival:
                    trigger_at[{r.routine, r.b}] = r.t;
                    break;
                case Rec::CmdEmit: {
                    auto key = std::make_pair(r.routine, r.a);
                    if (!first_cmd_seen[key]) {
                        first_cmd_seen[key] = true;
                        auto it = trigger_at.find(key);
                        if (it != trigger_at.end()) rep.client_delay.add(r.t - it->second);
                        if (r.value2 >= 0.0) rep.sync_delay.add(r.t - r.value2);
                    }
                    break;
                }
                case Rec::LockRequested:
                    lock_req_at.emplace(std::make_pair(r.routine, r.device), r.t);
                    break;
                case Rec::LockGranted: {
                    lock_grant_rtt[{r.routine, r.device}] = r.bytes;
                    break;
                }
                case Rec::LockServiced: {
                    auto it = lock_req_at.find({r.routine, r.device});
                    if (it != lock_req_at.end() && r.value < 0.0) {
                        double elapsed = r.t - it->second;
                        rep.lock_service.add(elapsed);
                        auto grtt = lock_grant_rtt.find({r.routine, r.device});
                        if (grtt != lock_grant_rtt.end() && grtt->second > 0.0)
                            rep.lock_service_rtts.add(elapsed / grtt->second);
                        lock_req_at.erase(it);
                    }
                    break;
                }
                case Rec::ElectionDone:
                    rep.election_delay.add(r.value);
                    if (r.a == 0 && r.value2 > 0.0)
                        rep.election_rtts.add(r.value / r.value2);
                    if (r.a == 1 && r.bytes > 0.0)
                        rep.election_fail_rtts.add(r.value / r.bytes);
                    break;
                case Rec::GroupFormed:
                    if (r.a > 1) rep.quorum_distance.add(r.value);
                    break;
                case Rec::GroupActive:
                    if (r.epoch > 0) rep.migration_gap.add(r.value);
                    break;
                case Rec::StateTransfer:
                    rep.state_transfer.add(r.value);
                    break;
                case Rec::Overlap:
                    rep.kgroup_overlap.add(r.value);
                    break;
                case Rec::CandidateCount:
                    rep.candidate_count.add(static_cast<double>(r.a));
                    break;
                case Rec::QuorumTimeout:
                    ++rep.quorum_timeouts;
                    break;
                case Rec::GroupDead:
                    ++rep.group_dead;
                    break;
                case Rec::NodeLoad: {
                    NodeAgg agg;
                    agg.trial = trial;
                    agg.node = r.src;
                    agg.leader_frac = r.value;
                    agg.member_frac = r.value2;
                    agg.max_groups = r.hops;
                    agg.avg_groups = static_cast<double>(r.b) / 1e6;
                    rep.nodes.push_back(agg);
                    break;
                }
                case Rec::NodeBandwidth: {
                    // pairs with the NodeLoad row emitted just before it
                    if (!rep.nodes.empty() && rep.nodes.back().node == r.src &&
                        rep.nodes.back().trial == trial) {
                        rep.nodes.back().bytes_e2e = r.value;
                        rep.nodes.back().bytes_h2h = r.value2;
                        rep.nodes.back().bytes_fg = static_cast<double>(r.a);
                        rep.nodes.back().bytes_bg = static_cast<double>(r.b);
                    }
                    break;
                }
                default:
                    break;
            }
        }
        ++trial;
    }
    rep.finalize();
    return rep;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

namespace {

void dump_dist(const std::string& dir, const std::string& name, const std::string& unit,
               const Dist& d) {
    std::ofstream out(dir + "/" + name + ".csv");
    out << "sample_index,value_" << unit << "\n";
    for (size_t i = 0; i < d.samples.size(); ++i)
        out << i << "," << format_double(d.samples[i]) << "\n";
}

}  // namespace

void write_csv(const MetricsReport& rep, const std::string& dir) {
    std::filesystem::create_directories(dir);
    dump_dist(dir, "client_delay", "time_units", rep.client_delay);
    dump_dist(dir, "sync_delay", "time_units", rep.sync_delay);
    dump_dist(dir, "election_delay", "time_units", rep.election_delay);
    dump_dist(dir, "election_rtts", "group_rtts", rep.election_rtts);
    dump_dist(dir, "election_fail_rtts", "group_rtts", rep.election_fail_rtts);
    dump_dist(dir, "lock_service", "time_units", rep.lock_service);
    dump_dist(dir, "lock_service_rtts", "group_rtts", rep.lock_service_rtts);
    dump_dist(dir, "state_transfer", "time_units", rep.state_transfer);
    dump_dist(dir, "migration_gap", "time_units", rep.migration_gap);
    dump_dist(dir, "quorum_distance", "hops", rep.quorum_distance);
    dump_dist(dir, "kgroup_overlap", "fraction", rep.kgroup_overlap);
    dump_dist(dir, "candidate_count", "count", rep.candidate_count);

    std::ofstream nodes(dir + "/node_load_bandwidth.csv");
    nodes << "trial,node,leader_frac,member_frac,max_groups,avg_groups,bytes_e2e,bytes_h2h,"
             "bytes_fg,bytes_bg\n";
    for (const NodeAgg& n : rep.nodes)
        nodes << n.trial << "," << n.node << "," << format_double(n.leader_frac) << ","
              << format_double(n.member_frac) << "," << n.max_groups << ","
              << format_double(n.avg_groups) << "," << format_double(n.bytes_e2e) << ","
              << format_double(n.bytes_h2h) << "," << format_double(n.bytes_fg) << ","
              << format_double(n.bytes_bg) << "\n";

    std::ofstream counters(dir + "/counters.csv");
    counters << "metric,value\n";
    counters << "messages," << rep.messages << "\n";
    counters << "drops," << rep.drops << "\n";
    counters << "commits," << rep.commits << "\n";
    counters << "quorum_timeouts," << rep.quorum_timeouts << "\n";
    counters << "group_dead," << rep.group_dead << "\n";
    counters << "total_bytes," << format_double(rep.total_bytes) << "\n";
}

namespace {

void summary_row(std::ostream& out, const std::string& name, const Dist& d, const std::string& unit) {
    out << "  " << name;
    for (size_t i = name.size(); i < 22; ++i) out << ' ';
    if (d.samples.empty()) {
        out << "(no samples)\n";
        return;
    }
    out << "n=" << d.samples.size() << "  median=" << format_double(d.median)
        << "  mean=" << format_double(d.mean) << "  p90=" << format_double(d.p90) << "  [" << unit
        << "]\n";
}

}  // namespace

namespace {

std::string lossless(double v) {  // trace dumps must survive a read-back bit-exact
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void write_trace(const Trace& trace, const std::string& path) {
    std::ofstream out(path);
    out << "t\tkind\tekind\teid\tepoch\tsrc\tdst\troutine\tdevice\thops\tbytes\tvalue\tvalue2\ta\tb\t"
           "flag\n";
    for (const TraceRecord& r : trace)
        out << lossless(r.t) << '\t' << static_cast<int>(r.kind) << '\t'
            << static_cast<int>(r.ekind) << '\t' << r.eid << '\t' << r.epoch << '\t' << r.src << '\t'
            << r.dst << '\t' << r.routine << '\t' << r.device << '\t' << r.hops << '\t'
            << lossless(r.bytes) << '\t' << lossless(r.value) << '\t'
            << lossless(r.value2) << '\t' << r.a << '\t' << r.b << '\t' << (r.flag ? 1 : 0)
            << '\n';
}

Trace read_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open trace file " + path, 0);
    Trace trace;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 || line.empty()) continue;  // header
        std::istringstream ss(line);
        TraceRecord r;
        int kind = 0, ekind = 0, flag = 0;
        int64_t epoch = 0;
        if (!(ss >> r.t >> kind >> ekind >> r.eid >> epoch >> r.src >> r.dst >> r.routine >>
              r.device >> r.hops >> r.bytes >> r.value >> r.value2 >> r.a >> r.b >> flag))
            throw ParseError("malformed trace record", line_no);
        if (kind < 0 || kind > static_cast<int>(Rec::InFlightAtEnd))
            throw ParseError("unknown record kind", line_no);
        r.kind = static_cast<Rec>(kind);
        r.ekind = static_cast<EntityKind>(ekind);
        r.epoch = static_cast<Epoch>(epoch);
        r.flag = flag != 0;
        trace.push_back(r);
    }
    return trace;
}

void print_summary(const MetricsReport& rep, std::ostream& out) {
    out << "metric                 distribution (median / mean / P90)\n";
    summary_row(out, "client_delay", rep.client_delay, "time units");
    summary_row(out, "sync_delay", rep.sync_delay, "time units");
    summary_row(out, "election_delay", rep.election_delay, "time units");
    summary_row(out, "election_rtts", rep.election_rtts, "group RTTs");
    summary_row(out, "election_fail_rtts", rep.election_fail_rtts, "group RTT estimates");
    summary_row(out, "lock_service", rep.lock_service, "time units");
    summary_row(out, "lock_service_rtts", rep.lock_service_rtts, "group RTTs");
    summary_row(out, "state_transfer", rep.state_transfer, "time units");
    summary_row(out, "migration_gap", rep.migration_gap, "time units");
    summary_row(out, "quorum_distance", rep.quorum_distance, "hops");
    summary_row(out, "kgroup_overlap", rep.kgroup_overlap, "fraction");
    summary_row(out, "candidate_count", rep.candidate_count, "candidates");
    out << "  messages=" << rep.messages << " drops=" << rep.drops << " commits=" << rep.commits
        << " quorum_timeouts=" << rep.quorum_timeouts << " group_dead=" << rep.group_dead << "\n";
}

}  // namespace stamesh
