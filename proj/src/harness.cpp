#include "mesure/harness.hpp"

#include <cmath>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mesure/error.hpp"

namespace mesure {

LoopSize::LoopSize(int p2) {
    if (p2 < 1 || p2 > 255) throw Error(ErrorKind::ConfigError, fmt::format("P2 must be in [1, 255], got {}", p2));
    p2_ = static_cast<std::uint8_t>(p2);
}

void CalibrationPolicy::validate() const {
    if (!(ratio > 0.0)) throw Error(ErrorKind::ConfigError, "calibration ratio must be > 0");
    if (probe_reps < 2 || confirm_reps < 2) throw Error(ErrorKind::ConfigError, "calibration repetitions must be >= 2");
}

ApduCommand phase_command(const TestCaseSpec& spec, Phase phase, LoopSize loop) {
    return {.cla = kBenchCla, .ins = spec.ins, .p1 = static_cast<std::uint8_t>(phase), .p2 = loop.p2(), .data = {}};
}

namespace {

void expect_success(const TimedExchange& ex, const TestCaseSpec& spec, std::string_view phase) {
    if (!ex.response.ok()) throw DeviceError(ex.response.sw, fmt::format("case '{}', {} phase", spec.id, phase));
}

}  // namespace

MeasurementSet measure(Channel& channel, const TestCaseSpec& spec, LoopSize loop, std::size_t repetitions) {
    expect_success(channel.exchange(phase_command(spec, Phase::SetUp, loop)), spec, "setUp");

    const auto run = phase_command(spec, Phase::Run, loop);
    std::vector<RawSample> samples;
    samples.reserve(repetitions);
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
        const auto ex = channel.exchange(run);
        expect_success(ex, spec, "run");
        samples.push_back({.duration = ex.elapsed, .sequence_index = static_cast<std::uint32_t>(rep), .wall_time = channel.now()});
    }

    expect_success(channel.exchange(phase_command(spec, Phase::CleanUp, loop)), spec, "cleanUp");
    return MeasurementSet(spec.id, loop.l(), std::move(samples));
}

bool meets_policy(const MeasurementSet& set, const CalibrationPolicy& policy) {
    const auto& s = set.stats();
    if (s.mean < static_cast<double>(policy.min_duration)) return false;
    if (s.std_dev == 0.0) return true;
    if (s.mean <= 0.0) return false;
    return s.std_dev / s.mean <= policy.ratio;
}

LoopSize calibrate(Channel& channel, const TestCaseSpec& spec, const CalibrationPolicy& policy) {
    policy.validate();
    const auto min_duration = static_cast<double>(policy.min_duration);
    auto long_enough = [&](int p2) {
        return measure(channel, spec, LoopSize(p2), policy.probe_reps).stats().mean >= min_duration;
    };

    if (!long_enough(255)) {
        throw Error(ErrorKind::CalibrationFailed,
                    fmt::format("case '{}': mean duration stays below {} ns even at P2=255", spec.id, policy.min_duration));
    }
    // Mean duration grows with L, so bisect on P2 for the duration criterion.
    int lo = 1;
    int hi = 255;
    while (lo < hi) {
        const int mid = lo + (hi - lo) / 2;
        if (long_enough(mid)) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }

    for (int p2 = lo; p2 <= 255; ++p2) {
        const auto confirm = measure(channel, spec, LoopSize(p2), policy.confirm_reps);
        if (meets_policy(confirm, policy)) {
            spdlog::debug("calibrated '{}' at P2={} (L={}, mean {:.0f} ns)", spec.id, p2, p2 * p2, confirm.stats().mean);
            return LoopSize(p2);
        }
    }
    throw Error(ErrorKind::CalibrationFailed,
                fmt::format("case '{}': no P2 in [{}, 255] satisfies sigma/mean <= {}", spec.id, lo, policy.ratio));
}

MeasurementSet run_bench(Channel& channel, const TestCaseSpec& spec, const BenchPlan& plan) {
    if (plan.repetitions == 0) throw Error(ErrorKind::ConfigError, "bench needs at least one repetition");
    if (plan.repetitions < 30) spdlog::warn("case '{}': {} repetitions is below the recommended 30", spec.id, plan.repetitions);
    return measure(channel, spec, plan.loop_size, plan.repetitions);
}

std::map<std::string, CaseMeasurements> run_suite(Channel& channel, const Suite& suite, std::span<const std::string> ids,
                                                  const CalibrationPolicy& policy, const SuiteOverrides& overrides) {
    const auto requested = ids.empty() ? suite.measurable_ids() : std::vector<std::string>(ids.begin(), ids.end());
    const auto order = suite.dependency_closure(requested);

    std::map<std::string, CaseMeasurements> results;
    for (const auto& id : order) {
        const auto& spec = suite.at(id);
        const auto& reference = suite.at(spec.reference_id);
        try {
            const LoopSize loop = overrides.fixed_loop ? *overrides.fixed_loop : calibrate(channel, spec, policy);
            const BenchPlan plan{.repetitions = overrides.repetitions, .loop_size = loop};
            auto operation = run_bench(channel, spec, plan);
            auto ref = run_bench(channel, reference, plan);
            results.emplace(id, CaseMeasurements{.loop_size = loop, .operation = std::move(operation), .reference = std::move(ref)});
        } catch (const DeviceError& e) {
            throw DeviceError(e.status_word(), fmt::format("while measuring case '{}'", id));
        } catch (const Error& e) {
            throw Error(e.kind(), fmt::format("case '{}': {}", id, e.detail()));
        }
    }
    return results;
}

std::map<std::string, CaseMeasurements> run_suite(Channel& channel, std::vector<TestCaseSpec> cases,
                                                  const CalibrationPolicy& policy, const SuiteOverrides& overrides) {
    const Suite suite(std::move(cases));
    return run_suite(channel, suite, {}, policy, overrides);
}

}  // namespace mesure
