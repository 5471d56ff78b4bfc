#pragma once

// Loop-size calibration and repeated measurement of test cases.

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>

#include "mesure/stats.hpp"
#include "mesure/suite.hpp"
#include "mesure/transport.hpp"

namespace mesure {

/// Number of run() iterations per APDU, carried as P2 with L = P2^2.
class LoopSize {
public:
    /// Throws ConfigError unless 1 <= p2 <= 255.
    explicit LoopSize(int p2);

    [[nodiscard]] std::uint8_t p2() const noexcept { return p2_; }
    [[nodiscard]] std::uint32_t l() const noexcept { return static_cast<std::uint32_t>(p2_) * p2_; }

    friend bool operator==(const LoopSize&, const LoopSize&) = default;

private:
    std::uint8_t p2_;
};

struct CalibrationPolicy {
    double ratio = 0.02;  ///< upper bound on sigma / mean
    Nanos min_duration = 1'000'000'000;
    std::size_t probe_reps = 10;
    std::size_t confirm_reps = 30;

    /// Throws ConfigError.
    void validate() const;
};

struct BenchPlan {
    std::size_t repetitions = 30;
    LoopSize loop_size{1};
};

/// Run-phase (or setUp / cleanUp) command for a case.
[[nodiscard]] ApduCommand phase_command(const TestCaseSpec& spec, Phase phase, LoopSize loop);

/// setUp, `repetitions` timed run exchanges, cleanUp. Only run exchanges are kept.
/// Throws DeviceError on any non-success status.
[[nodiscard]] MeasurementSet measure(Channel& channel, const TestCaseSpec& spec, LoopSize loop, std::size_t repetitions);

/// True when the set meets both precision criteria of the policy.
[[nodiscard]] bool meets_policy(const MeasurementSet& set, const CalibrationPolicy& policy);

/// Smallest P2 whose confirm_reps measurements have mean >= min_duration and
/// sigma / mean <= ratio. Throws CalibrationFailed when no P2 <= 255 qualifies.
[[nodiscard]] LoopSize calibrate(Channel& channel, const TestCaseSpec& spec, const CalibrationPolicy& policy);

[[nodiscard]] MeasurementSet run_bench(Channel& channel, const TestCaseSpec& spec, const BenchPlan& plan);

struct CaseMeasurements {
    LoopSize loop_size{1};
    MeasurementSet operation;
    MeasurementSet reference;
};

struct SuiteOverrides {
    std::size_t repetitions = 30;
    std::optional<LoopSize> fixed_loop;  ///< skip calibration
};

/// Calibrates and benches every requested case and its auxiliary closure, each
/// alongside its empty-loop reference at the same loop size. Empty `ids`
/// selects every non-reference case of the suite.
[[nodiscard]] std::map<std::string, CaseMeasurements> run_suite(Channel& channel, const Suite& suite,
                                                                 std::span<const std::string> ids,
                                                                 const CalibrationPolicy& policy,
                                                                 const SuiteOverrides& overrides = {});

/// Validates `cases` as a suite before any exchange, then runs all of them.
[[nodiscard]] std::map<std::string, CaseMeasurements> run_suite(Channel& channel, std::vector<TestCaseSpec> cases,
                                                                 const CalibrationPolicy& policy,
                                                                 const SuiteOverrides& overrides = {});

}  // namespace mesure
