#include "mesure/analysis.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mesure/error.hpp"

namespace mesure {

MeasurementSet filter_confidence(const MeasurementSet& set, const FilterPolicy& policy) {
    if (!(policy.n_sigma > 0.0)) throw Error(ErrorKind::ConfigError, "n_sigma must be > 0");
    const double mu = stats::mean(set);
    const double sigma = stats::std_dev(set);
    const double lo = mu - policy.n_sigma * sigma;
    const double hi = mu + policy.n_sigma * sigma;

    std::vector<RawSample> kept;
    kept.reserve(set.size());
    for (const auto& s : set.samples()) {
        const auto d = static_cast<double>(s.duration);
        if (d >= lo && d <= hi) kept.push_back(s);
    }
    if (kept.size() < policy.min_retained) {
        throw Error(ErrorKind::OverFiltered, fmt::format("set '{}': {} of {} samples inside the {}-sigma interval",
                                                         set.test_id(), kept.size(), set.size(), policy.n_sigma));
    }
    return MeasurementSet(set.test_id(), set.loop_size(), std::move(kept));
}

IsolatedTime isolate_one(const MeasurementSet& op_set, const MeasurementSet& ref_set, std::span<const double> aux_means,
                         std::uint32_t loop_size) {
    if (loop_size == 0 || op_set.loop_size() != loop_size || ref_set.loop_size() != loop_size) {
        throw Error(ErrorKind::LoopSizeMismatch, fmt::format("'{}' at L={}, '{}' at L={}, expected L={}", op_set.test_id(),
                                                             op_set.loop_size(), ref_set.test_id(), ref_set.loop_size(),
                                                             loop_size));
    }
    const auto& op = op_set.stats();
    const auto& ref = ref_set.stats();
    const double l = static_cast<double>(loop_size);
    const double aux = std::accumulate(aux_means.begin(), aux_means.end(), 0.0);

    // mean(op) - mean(ref) as one integer fraction, so constants shared by both sets cancel exactly.
    auto sum = [](const MeasurementSet& s) {
        __int128 total = 0;
        for (const auto& r : s.samples()) total += r.duration;
        return total;
    };
    const auto n_op = static_cast<__int128>(op.count);
    const auto n_ref = static_cast<__int128>(ref.count);
    const __int128 diff = sum(op_set) * n_ref - sum(ref_set) * n_op;

    IsolatedTime out;
    out.feature_id = op_set.test_id();
    out.mean = static_cast<double>(diff) / static_cast<double>(n_op * n_ref) / l - aux;
    out.spread = std::sqrt(op.std_dev * op.std_dev + ref.std_dev * ref.std_dev) / l;
    out.loop_size = loop_size;
    out.sample_count = op.count;
    if (out.mean < 0.0) {
        out.negative_warning = true;
        spdlog::warn("'{}' isolates to {:.3f} ns; noise dominates or the auxiliary chain is wrong", out.feature_id, out.mean);
    }
    return out;
}

std::map<std::string, IsolatedTime> isolate_all(const std::map<std::string, CaseMeasurements>& results,
                                                const OpDependencyGraph& graph, const FilterPolicy& filter) {
    const auto order = topological_order(graph);
    for (const auto& id : order) {
        if (!results.contains(id)) throw Error(ErrorKind::MissingMeasurement, fmt::format("no measurements for '{}'", id));
    }

    std::map<std::string, IsolatedTime> isolated;
    for (const auto& id : order) {
        const auto& m = results.at(id);
        const auto op = filter_confidence(m.operation, filter);
        const auto ref = filter_confidence(m.reference, filter);
        std::vector<double> aux_means;
        if (auto e = graph.edges.find(id); e != graph.edges.end()) {
            for (const auto& aux : e->second) aux_means.push_back(isolated.at(aux).mean);
        }
        auto t = isolate_one(op, ref, aux_means, m.loop_size.l());
        t.feature_id = id;
        isolated.emplace(id, std::move(t));
    }
    return isolated;
}

double relative_deviation(double measured, double reference) {
    if (reference <= 0.0) throw Error(ErrorKind::ZeroReference, fmt::format("reference value {} is not positive", reference));
    return std::abs(measured - reference) / reference;
}

}  // namespace mesure
