#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace stamesh {

using NodeId = int32_t;
using Time = double;
using Seq = uint64_t;
using Epoch = uint64_t;

constexpr NodeId kNoNode = -1;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InsufficientSmartNodes : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InvalidParameter : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class NodeStatus : uint8_t { Alive, Failed };

struct NodeRecord {
    NodeId id = kNoNode;
    std::vector<double> location;  // d in {2,3}, meters
    bool is_smart = false;
    NodeStatus status = NodeStatus::Alive;
    int power_domain = 0;
};

// Idealized membership: every smart node holds an identical snapshot that
// advances in lockstep (churn event + detection delay). Snapshots are shared
// immutably, so copying a "view" is a pointer copy.
struct ViewData {
    uint64_t version = 0;  // bumps on every visible churn change
    std::vector<uint8_t> alive;  // by node id
    std::vector<uint8_t> smart;  // by node id

    int alive_smart_count() const {
        int c = 0;
        for (size_t i = 0; i < alive.size(); ++i)
            if (alive[i] && smart[i]) ++c;
        return c;
    }
    bool is_alive_smart(NodeId n) const {
        return n >= 0 && static_cast<size_t>(n) < alive.size() && alive[static_cast<size_t>(n)] &&
               smart[static_cast<size_t>(n)];
    }
};
using MembershipView = std::shared_ptr<const ViewData>;

enum class EntityKind : uint8_t { DeviceCluster = 0, Routine = 1 };

struct EntityId {
    EntityKind kind = EntityKind::DeviceCluster;
    int32_t id = 0;
    NodeId representative_device = kNoNode;

    friend bool operator==(const EntityId& a, const EntityId& b) {
        return a.kind == b.kind && a.id == b.id;
    }
};

// Map key for entity-indexed tables (representative excluded: identity is kind+id).
struct EntityKey {
    EntityKind kind;
    int32_t id;
    friend auto operator<=>(const EntityKey&, const EntityKey&) = default;
};
inline EntityKey key_of(const EntityId& e) { return {e.kind, e.id}; }

enum class Stage : uint8_t { NotTriggered = 0, AcquiringLocks, Executing, ReleasingLocks };
const char* to_string(Stage s);

// --- Routine trigger expressions -------------------------------------------

enum class CmpOp : uint8_t { Lt, Le, Gt, Ge, Eq, Ne };

struct TriggerNode {
    enum class Kind : uint8_t { Leaf, And, Or } kind = Kind::Leaf;
    // leaf
    NodeId device = kNoNode;
    CmpOp op = CmpOp::Ge;
    double threshold = 0.0;
    // internal
    std::vector<TriggerNode> children;
};

struct TimeWindow {
    Time begin = 0.0;
    Time end = 0.0;
    Time period = 0.0;  // 0 = one-shot absolute window
    bool contains(Time t) const;
};

struct TriggerClause {
    TriggerNode root;
    std::optional<TimeWindow> window;
    void collect_devices(std::set<NodeId>& out) const;
};

struct Command {
    NodeId device = kNoNode;
    uint64_t payload_tag = 0;  // opaque fixed-size payload stand-in
    Time duration = 1.0;
};

struct Routine {
    int32_t id = 0;
    TriggerClause trigger;
    std::vector<Command> commands;

    std::set<NodeId> trigger_set() const;
    std::set<NodeId> command_set() const;
    std::set<NodeId> touched() const;  // union of both
};

struct DeviceState {
    NodeId device = kNoNode;
    bool up = true;
    double reading = 0.0;
    uint64_t version = 0;  // strictly increases on every recorded change
};

// --- Configuration ----------------------------------------------------------

enum class TopologyKind : uint8_t { Grid3d = 0, Random, Clustered };
enum class SelectionPolicy : uint8_t { Random = 0, LshMix, Central };
enum class LockingStrategy : uint8_t { Sla = 0, Ola };

TopologyKind topology_from_string(const std::string& s);
SelectionPolicy policy_from_string(const std::string& s);
LockingStrategy locking_from_string(const std::string& s);
const char* to_string(TopologyKind k);
const char* to_string(SelectionPolicy p);
const char* to_string(LockingStrategy l);

struct Config {
    int n_devices = 250;
    double smart_fraction = 0.4;
    int f = 2;
    int k = 0;  // 0 = derive 2f+1 at validation
    bool allow_k_override = false;
    Time epoch_length = 200.0;
    std::vector<uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    int max_routine_length = 5;
    int avg_devices_per_routine = 5;
    int devices_per_kgroup = 25;
    double node_bandwidth = 625000.0;  // bytes per time unit
    int lsh_m = 2;
    int lsh_l = 2;
    double lsh_r = 4.0;
    double lsh_jitter_sigma = 0.0;
    int borrow_neighbor_clusters = 2;
    SelectionPolicy selection_policy = SelectionPolicy::LshMix;
    LockingStrategy locking = LockingStrategy::Sla;
    Time monitor_period = 10.0;
    Time ola_backoff_base = 4.0;
    Time ola_backoff_cap = 128.0;
    Time detection_delay = 2.0;
    Time trigger_refractory = 0.0;  // 0 = derive 10 * monitor_period
    TopologyKind topology = TopologyKind::Grid3d;
    double loss_probability = 0.0;
    int power_domain_size = 0;  // 0 = one node per domain
    Time command_duration = 2.0;
    double reading_walk_sigma = 0.5;   // random-walk step size for synthetic readings
    double reading_change_prob = 0.05;  // chance per monitor quantum that a reading moves
    Time replicate_batch_window = 3.0;  // low-urgency commits share one replication round

    int smart_count() const;
};

// Normalizes a raw config: derives k from f when absent, checks k = 2f+1
// (unless the centralized-baseline override is set) and the minimum smart
// population. Throws ConfigError.
Config validate_config(Config raw);

std::string config_to_json(const Config& c);
Config config_from_json(const std::string& text);

}  // namespace stamesh
