#include "stamesh/model.hpp"

#include <cmath>

#include "json.hpp"

namespace stamesh {

const char* to_string(Stage s) {
    switch (s) {
        case Stage::NotTriggered: return "NOT_TRIGGERED";
        case Stage::AcquiringLocks: return "ACQUIRING_LOCKS";
        case Stage::Executing: return "EXECUTING";
        case Stage::ReleasingLocks: return "RELEASING_LOCKS";
    }
    return "?";
}

bool TimeWindow::contains(Time t) const {
    if (period > 0.0) {
        double phase = std::fmod(t, period);
        if (phase < 0) phase += period;
        return phase >= begin && phase <= end;
    }
    return t >= begin && t <= end;
}

static void collect(const TriggerNode& n, std::set<NodeId>& out) {
    if (n.kind == TriggerNode::Kind::Leaf) {
        out.insert(n.device);
        return;
    }
    for (const auto& c : n.children) collect(c, out);
}

void TriggerClause::collect_devices(std::set<NodeId>& out) const { collect(root, out); }

std::set<NodeId> Routine::trigger_set() const {
    std::set<NodeId> s;
    trigger.collect_devices(s);
    return s;
}

std::set<NodeId> Routine::command_set() const {
    std::set<NodeId> s;
    for (const auto& c : commands) s.insert(c.device);
    return s;
}

std::set<NodeId> Routine::touched() const {
    std::set<NodeId> s = trigger_set();
    for (const auto& c : commands) s.insert(c.device);
    return s;
}

TopologyKind topology_from_string(const std::string& s) {
    if (s == "GRID3D") return TopologyKind::Grid3d;
    if (s == "RANDOM") return TopologyKind::Random;
    if (s == "CLUSTERED") return TopologyKind::Clustered;
    throw ConfigError("unknown topology kind: " + s);
}

SelectionPolicy policy_from_string(const std::string& s) {
    if (s == "RANDOM") return SelectionPolicy::Random;
    if (s == "LSH_MIX") return SelectionPolicy::LshMix;
    if (s == "CENTRAL") return SelectionPolicy::Central;
    throw ConfigError("unknown selection policy: " + s);
}

LockingStrategy locking_from_string(const std::string& s) {
    if (s == "SLA") return LockingStrategy::Sla;
    if (s == "OLA") return LockingStrategy::Ola;
    throw ConfigError("unknown locking strategy: " + s);
}

const char* to_string(TopologyKind k) {
    switch (k) {
        case TopologyKind::Grid3d: return "GRID3D";
        case TopologyKind::Random: return "RANDOM";
        case TopologyKind::Clustered: return "CLUSTERED";
    }
    return "?";
}

const char* to_string(SelectionPolicy p) {
    switch (p) {
        case SelectionPolicy::Random: return "RANDOM";
        case SelectionPolicy::LshMix: return "LSH_MIX";
        case SelectionPolicy::Central: return "CENTRAL";
    }
    return "?";
}

const char* to_string(LockingStrategy l) {
    switch (l) {
        case LockingStrategy::Sla: return "SLA";
        case LockingStrategy::Ola: return "OLA";
    }
    return "?";
}

int Config::smart_count() const {
    return static_cast<int>(std::ceil(smart_fraction * n_devices));
}

Config validate_config(Config c) {
    if (c.n_devices < 1) throw ConfigError("n_devices must be >= 1");
    if (c.smart_fraction <= 0.0 || c.smart_fraction > 1.0)
        throw ConfigError("smart_fraction must be in (0,1]");
    if (c.f < 0) throw ConfigError("f must be >= 0");
    if (c.k == 0) c.k = 2 * c.f + 1;
    if (c.k != 2 * c.f + 1 && !c.allow_k_override)
        throw ConfigError("k must equal 2f+1 (k=" + std::to_string(c.k) + ", f=" +
                          std::to_string(c.f) + "); set allow_k_override for baselines");
    if (c.smart_count() < 3)
        throw ConfigError("need at least 3 smart devices, got " + std::to_string(c.smart_count()));
    if (c.k > c.smart_count())
        throw ConfigError("k exceeds smart device count");
    if (c.epoch_length <= 0) throw ConfigError("epoch_length must be > 0");
    if (c.node_bandwidth <= 0) throw ConfigError("node_bandwidth must be > 0");
    if (c.lsh_r <= 0) throw ConfigError("lsh_r must be > 0");
    if (c.lsh_m < 1 || c.lsh_l < 1) throw ConfigError("lsh_m and lsh_l must be >= 1");
    if (c.devices_per_kgroup < 1) throw ConfigError("devices_per_kgroup must be >= 1");
    if (c.monitor_period <= 0) throw ConfigError("monitor_period must be > 0");
    if (c.seeds.empty()) throw ConfigError("at least one seed required");
    if (c.loss_probability < 0 || c.loss_probability >= 1)
        throw ConfigError("loss_probability must be in [0,1)");
    if (c.trigger_refractory == 0.0) c.trigger_refractory = 10.0 * c.monitor_period;
    return c;
}

using nlohmann::json;

std::string config_to_json(const Config& c) {
    json j;
    j["n_devices"] = c.n_devices;
    j["smart_fraction"] = c.smart_fraction;
    j["f"] = c.f;
    j["k"] = c.k;
    j["allow_k_override"] = c.allow_k_override;
    j["epoch_length"] = c.epoch_length;
    j["seeds"] = c.seeds;
    j["max_routine_length"] = c.max_routine_length;
    j["avg_devices_per_routine"] = c.avg_devices_per_routine;
    j["devices_per_kgroup"] = c.devices_per_kgroup;
    j["node_bandwidth"] = c.node_bandwidth;
    j["lsh"] = {{"m", c.lsh_m}, {"l", c.lsh_l}, {"r", c.lsh_r},
                {"jitter_sigma", c.lsh_jitter_sigma},
                {"borrow_neighbor_clusters", c.borrow_neighbor_clusters}};
    j["selection_policy"] = to_string(c.selection_policy);
    j["locking"] = to_string(c.locking);
    j["monitor_period"] = c.monitor_period;
    j["ola_backoff_base"] = c.ola_backoff_base;
    j["ola_backoff_cap"] = c.ola_backoff_cap;
    j["detection_delay"] = c.detection_delay;
    j["trigger_refractory"] = c.trigger_refractory;
    j["topology"] = to_string(c.topology);
    j["loss_probability"] = c.loss_probability;
    j["power_domain_size"] = c.power_domain_size;
    j["command_duration"] = c.command_duration;
    j["reading_walk_sigma"] = c.reading_walk_sigma;
    j["reading_change_prob"] = c.reading_change_prob;
    j["replicate_batch_window"] = c.replicate_batch_window;
    return j.dump(2);
}

Config config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    Config c;
    try {
        if (j.contains("n_devices")) c.n_devices = j["n_devices"].get<int>();
        if (j.contains("smart_fraction")) c.smart_fraction = j["smart_fraction"].get<double>();
        if (j.contains("f")) c.f = j["f"].get<int>();
        if (j.contains("k")) c.k = j["k"].get<int>();
        if (j.contains("allow_k_override")) c.allow_k_override = j["allow_k_override"].get<bool>();
        if (j.contains("epoch_length")) c.epoch_length = j["epoch_length"].get<double>();
        if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<uint64_t>>();
        if (j.contains("max_routine_length")) c.max_routine_length = j["max_routine_length"].get<int>();
        if (j.contains("avg_devices_per_routine"))
            c.avg_devices_per_routine = j["avg_devices_per_routine"].get<int>();
        if (j.contains("devices_per_kgroup")) c.devices_per_kgroup = j["devices_per_kgroup"].get<int>();
        if (j.contains("node_bandwidth")) c.node_bandwidth = j["node_bandwidth"].get<double>();
        if (j.contains("lsh")) {
            const auto& l = j["lsh"];
            if (l.contains("m")) c.lsh_m = l["m"].get<int>();
            if (l.contains("l")) c.lsh_l = l["l"].get<int>();
            if (l.contains("r")) c.lsh_r = l["r"].get<double>();
            if (l.contains("jitter_sigma")) c.lsh_jitter_sigma = l["jitter_sigma"].get<double>();
            if (l.contains("borrow_neighbor_clusters"))
                c.borrow_neighbor_clusters = l["borrow_neighbor_clusters"].get<int>();
        }
        if (j.contains("selection_policy"))
            c.selection_policy = policy_from_string(j["selection_policy"].get<std::string>());
        if (j.contains("locking")) c.locking = locking_from_string(j["locking"].get<std::string>());
        if (j.contains("monitor_period")) c.monitor_period = j["monitor_period"].get<double>();
        if (j.contains("ola_backoff_base")) c.ola_backoff_base = j["ola_backoff_base"].get<double>();
        if (j.contains("ola_backoff_cap")) c.ola_backoff_cap = j["ola_backoff_cap"].get<double>();
        if (j.contains("detection_delay")) c.detection_delay = j["detection_delay"].get<double>();
        if (j.contains("trigger_refractory")) c.trigger_refractory = j["trigger_refractory"].get<double>();
        if (j.contains("topology")) c.topology = topology_from_string(j["topology"].get<std::string>());
        if (j.contains("loss_probability")) c.loss_probability = j["loss_probability"].get<double>();
        if (j.contains("power_domain_size")) c.power_domain_size = j["power_domain_size"].get<int>();
        if (j.contains("command_duration")) c.command_duration = j["command_duration"].get<double>();
        if (j.contains("reading_walk_sigma"))
            c.reading_walk_sigma = j["reading_walk_sigma"].get<double>();
        if (j.contains("reading_change_prob"))
            c.reading_change_prob = j["reading_change_prob"].get<double>();
        if (j.contains("replicate_batch_window"))
            c.replicate_batch_window = j["replicate_batch_window"].get<double>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field error: ") + e.what());
    }
    return c;
}

}  // namespace stamesh
