#pragma once

// Outlier filtering and isolation of per-operation execution times.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mesure/dependency_graph.hpp"
#include "mesure/harness.hpp"
#include "mesure/stats.hpp"

namespace mesure {

struct FilterPolicy {
    double n_sigma = 2.0;
    std::size_t min_retained = 2;
};

/// Mean isolated execution time of one operation.
struct IsolatedTime {
    std::string feature_id;
    double mean = 0.0;    ///< ns per execution, may be negative under heavy noise
    double spread = 0.0;  ///< sqrt(var(op) + var(ref)) / L
    std::uint32_t loop_size = 1;
    std::size_t sample_count = 0;
    bool negative_warning = false;

    friend bool operator==(const IsolatedTime&, const IsolatedTime&) = default;
};

/// Keeps samples inside [mean - n_sigma*sd, mean + n_sigma*sd] (inclusive), computed once
/// from the input. Throws InsufficientSamples or OverFiltered.
[[nodiscard]] MeasurementSet filter_confidence(const MeasurementSet& set, const FilterPolicy& policy);

/// (mean(op) - mean(ref)) / L - sum(aux_means). Throws LoopSizeMismatch.
[[nodiscard]] IsolatedTime isolate_one(const MeasurementSet& op_set, const MeasurementSet& ref_set,
                                       std::span<const double> aux_means, std::uint32_t loop_size);

/// Filters every set, then isolates operations with auxiliaries first.
/// Throws CycleDetected before any arithmetic, MissingMeasurement naming the feature.
[[nodiscard]] std::map<std::string, IsolatedTime> isolate_all(const std::map<std::string, CaseMeasurements>& results,
                                                              const OpDependencyGraph& graph, const FilterPolicy& filter);

/// |measured - reference| / reference. Throws ZeroReference.
[[nodiscard]] double relative_deviation(double measured, double reference);

}  // namespace mesure
