#pragma once

#include <map>
#include <set>
#include <vector>

#include "stamesh/model.hpp"

namespace stamesh {

// Forward map routine -> trigger-set devices plus the reverse index used by
// device leaders to fan out state updates.
struct TriggerSubscription {
    std::map<int32_t, std::set<NodeId>> routine_to_devices;
    std::map<NodeId, std::vector<int32_t>> device_to_routines;  // ascending routine ids

    static TriggerSubscription build(const std::vector<Routine>& routines);
};

// Trigger clause evaluation against the leader's latest known readings.
// A leaf whose device has no known reading evaluates false (conservative);
// a time window at the root gates the whole clause.
bool eval_trigger(const TriggerClause& clause, const std::map<NodeId, double>& readings, Time now);

}  // namespace stamesh
