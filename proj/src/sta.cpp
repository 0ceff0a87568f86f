#include "stamesh/sta.hpp"

namespace stamesh {

TriggerSubscription TriggerSubscription::build(const std::vector<Routine>& routines) {
    TriggerSubscription sub;
    for (const auto& r : routines) {
        auto devs = r.trigger_set();
        sub.routine_to_devices[r.id] = devs;
        for (NodeId d : devs) sub.device_to_routines[d].push_back(r.id);
    }
    for (auto& [d, rs] : sub.device_to_routines) std::sort(rs.begin(), rs.end());
    return sub;
}

namespace {

bool eval_node(const TriggerNode& n, const std::map<NodeId, double>& readings) {
    switch (n.kind) {
        case TriggerNode::Kind::Leaf: {
            auto it = readings.find(n.device);
            if (it == readings.end()) return false;
            double v = it->second;
            switch (n.op) {
                case CmpOp::Lt: return v < n.threshold;
                case CmpOp::Le: return v <= n.threshold;
                case CmpOp::Gt: return v > n.threshold;
                case CmpOp::Ge: return v >= n.threshold;
                case CmpOp::Eq: return v == n.threshold;
                case CmpOp::Ne: return v != n.threshold;
            }
            return false;
        }
        case TriggerNode::Kind::And: {
            for (const auto& c : n.children)
                if (!eval_node(c, readings)) return false;
            return !n.children.empty();
        }
        case TriggerNode::Kind::Or: {
            for (const auto& c : n.children)
                if (eval_node(c, readings)) return true;
            return false;
        }
    }
    return false;
}

}  // namespace

bool eval_trigger(const TriggerClause& clause, const std::map<NodeId, double>& readings, Time now) {
    if (clause.window && !clause.window->contains(now)) return false;
    return eval_node(clause.root, readings);
}

}  // namespace stamesh
