#pragma once

// Feature usage profiling from execution traces and domain-weighted marks.
//
// Trace format, one event per line:
//   ENTER <name>           method entry
//   EXIT                   leaves the innermost method
//   BC <name> [k=v ...]    bytecode execution with optional attributes
//   # ...                  comment
//
// Scoring: N = R / M per feature, W = N * alpha per (feature, domain),
// P = sum of W per domain, overall = mean of P over domains.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mesure::profiler {

enum class EventKind { Enter, Exit, Bytecode };

using Attributes = std::vector<std::pair<std::string, std::string>>;

struct TraceEvent {
    EventKind kind = EventKind::Bytecode;
    std::string name;  ///< empty for Exit
    Attributes attributes;

    friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

using FeatureCounts = std::map<std::string, std::uint64_t>;

struct CallNode {
    EventKind kind = EventKind::Enter;  ///< Enter for method nodes, Bytecode for leaves
    std::string name;
    Attributes attributes;
    std::vector<CallNode> children;
    FeatureCounts bytecode_counts;  ///< bytecodes executed anywhere below this node
};

struct InvocationTree {
    std::vector<CallNode> roots;
};

struct ParsedTrace {
    InvocationTree tree;
    FeatureCounts counts;  ///< enter events per method plus bytecode events per bytecode
};

/// Throws TraceParseError or UnbalancedTrace, both carrying "line N".
[[nodiscard]] std::vector<TraceEvent> parse_events(std::string_view text);
[[nodiscard]] ParsedTrace parse_trace(std::string_view text);

/// Events in original order, EXIT closing each method node.
[[nodiscard]] std::vector<TraceEvent> flatten(const InvocationTree& tree);
/// Indented listing; runs of identical bytecodes collapse to "name x<count>".
[[nodiscard]] std::string render(const InvocationTree& tree);

struct FeatureUsage {
    std::string domain;
    FeatureCounts beta;
    std::size_t trace_count = 0;
};

struct DomainWeights {
    std::string domain;
    std::map<std::string, double> alpha;
    std::size_t feature_count = 0;

    friend bool operator==(const DomainWeights&, const DomainWeights&) = default;
};

/// Elementwise sum of per-trace counts. Throws NoTraces for no traces or all-zero counts.
[[nodiscard]] FeatureUsage aggregate_usage(std::string domain, std::span<const FeatureCounts> traces);
/// alpha_f = beta_f / sum(beta). Throws ZeroUsage.
[[nodiscard]] DomainWeights compute_weights(const FeatureUsage& usage);

struct ReferenceBase {
    std::map<std::string, double> r;  ///< ns
    std::size_t source_card_count = 0;

    friend bool operator==(const ReferenceBase&, const ReferenceBase&) = default;
};

enum class ReferenceAggregation { Arithmetic, Geometric };

/// card id -> (feature -> isolated mean). Throws MissingFeature or NonPositiveMean.
[[nodiscard]] ReferenceBase build_reference(const std::map<std::string, std::map<std::string, double>>& per_card,
                                            ReferenceAggregation aggregation = ReferenceAggregation::Arithmetic);

/// r_f / m_cf. Throws NonPositiveInput.
[[nodiscard]] double compute_mark(double r_f, double m_cf);

/// Marks for every feature measured on the card that the reference base also covers.
[[nodiscard]] std::map<std::string, double> compute_marks(const ReferenceBase& reference,
                                                          const std::map<std::string, double>& card_means);

struct WeightedMark {
    double alpha = 0.0;
    double w = 0.0;

    friend bool operator==(const WeightedMark&, const WeightedMark&) = default;
};

struct ScoreCard {
    std::string card_id;
    std::map<std::string, double> marks;
    std::map<std::pair<std::string, std::string>, WeightedMark> weighted;  ///< (feature, domain)
    std::map<std::string, double> domain_marks;
    double overall = 0.0;

    friend bool operator==(const ScoreCard&, const ScoreCard&) = default;
};

/// Features with alpha = 0 need no mark. Throws FeatureWithoutMark or NoDomains.
[[nodiscard]] ScoreCard score(std::string card_id, const std::map<std::string, double>& marks,
                              std::span<const DomainWeights> weights);

}  // namespace mesure::profiler
