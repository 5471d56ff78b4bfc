#include "mesure/dependency_graph.hpp"

#include <algorithm>
#include <functional>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "mesure/error.hpp"

namespace mesure {

void OpDependencyGraph::add_node(const std::string& id, std::vector<std::string> auxiliaries) {
    if (std::ranges::find(nodes, id) == nodes.end()) nodes.push_back(id);
    edges[id] = std::move(auxiliaries);
}

std::vector<std::string> topological_order(const OpDependencyGraph& graph) {
    enum class Mark { None, Active, Done };
    std::map<std::string, Mark> marks;
    for (const auto& n : graph.nodes) marks[n] = Mark::None;

    std::vector<std::string> order;
    std::vector<std::string> path;
    order.reserve(graph.nodes.size());

    std::function<void(const std::string&)> visit = [&](const std::string& id) {
        auto it = marks.find(id);
        if (it == marks.end()) {
            throw Error(ErrorKind::MissingMeasurement,
                        fmt::format("'{}' is referenced as an auxiliary but is not in the graph", id));
        }
        if (it->second == Mark::Done) return;
        if (it->second == Mark::Active) {
            auto start = std::ranges::find(path, id);
            std::vector<std::string> cycle(start, path.end());
            cycle.push_back(id);
            throw Error(ErrorKind::CycleDetected, fmt::format("{}", fmt::join(cycle, " -> ")));
        }
        it->second = Mark::Active;
        path.push_back(id);
        if (auto e = graph.edges.find(id); e != graph.edges.end()) {
            for (const auto& aux : e->second) visit(aux);
        }
        path.pop_back();
        marks[id] = Mark::Done;
        order.push_back(id);
    };

    for (const auto& n : graph.nodes) visit(n);
    return order;
}

}  // namespace mesure
