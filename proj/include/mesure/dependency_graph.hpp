#pragma once

#include <map>
#include <string>
#include <vector>

namespace mesure {

/// Operations and the auxiliary operations each one depends on.
struct OpDependencyGraph {
    std::vector<std::string> nodes;
    std::map<std::string, std::vector<std::string>> edges;  ///< op -> auxiliaries (duplicates allowed)

    void add_node(const std::string& id, std::vector<std::string> auxiliaries = {});
};

/// Auxiliaries before dependents; ties keep node insertion order.
/// Throws CycleDetected naming the cycle, or MissingMeasurement for an edge to an unknown node.
[[nodiscard]] std::vector<std::string> topological_order(const OpDependencyGraph& graph);

}  // namespace mesure
