#pragma once

// Statistical primitives shared by the measurement pipeline.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mesure {

/// Integer nanoseconds, as captured from a channel.
using Nanos = std::uint64_t;

struct RawSample {
    Nanos duration = 0;
    std::uint32_t sequence_index = 0;
    Nanos wall_time = 0;  ///< monotonic timestamp at capture

    friend bool operator==(const RawSample&, const RawSample&) = default;
};

struct MeasurementStats {
    double mean = 0.0;
    double std_dev = 0.0;  ///< sample (n-1) deviation; 0 for a single sample
    std::size_t count = 0;

    friend bool operator==(const MeasurementStats&, const MeasurementStats&) = default;
};

/// A batch of timed exchanges for one test case at one loop size.
///
/// Statistics are cached and recomputed on every mutation, so stats() always
/// agrees with samples(). Reading stats of an empty set throws EmptySet.
class MeasurementSet {
public:
    MeasurementSet() = default;
    MeasurementSet(std::string test_id, std::uint32_t loop_size);
    MeasurementSet(std::string test_id, std::uint32_t loop_size, std::vector<RawSample> samples);

    [[nodiscard]] const std::string& test_id() const noexcept { return test_id_; }
    [[nodiscard]] std::uint32_t loop_size() const noexcept { return loop_size_; }
    [[nodiscard]] std::span<const RawSample> samples() const noexcept { return samples_; }
    [[nodiscard]] std::size_t size() const noexcept { return samples_.size(); }
    [[nodiscard]] bool empty() const noexcept { return samples_.empty(); }

    [[nodiscard]] const MeasurementStats& stats() const;

    /// Durations as reals, in sample order.
    [[nodiscard]] std::vector<double> durations() const;

    /// Appends a sample; its sequence_index must be unused in this set.
    void add(RawSample sample);
    void reserve(std::size_t n) { samples_.reserve(n); }

    friend bool operator==(const MeasurementSet& a, const MeasurementSet& b) {
        return a.test_id_ == b.test_id_ && a.loop_size_ == b.loop_size_ && a.samples_ == b.samples_;
    }

private:
    void recompute();

    std::string test_id_;
    std::uint32_t loop_size_ = 1;
    std::vector<RawSample> samples_;
    MeasurementStats stats_;
};

struct NormalityReport {
    double w_statistic = 0.0;
    std::size_t sample_count = 0;
};

struct Peak {
    double center = 0.0;  ///< bin midpoint, ns
    double mass = 0.0;    ///< fraction of all samples attributed to this peak
};

struct PeakReport {
    std::vector<Peak> peaks;  ///< ascending by center
    std::optional<double> step_estimate;
    double bin_width = 0.0;
};

struct PeakOptions {
    std::optional<double> bin_width;  ///< nullopt selects Freedman-Diaconis
    double mass_threshold = 0.05;
};

namespace stats {

[[nodiscard]] double mean(std::span<const double> values);
/// Sample standard deviation (divisor n-1). Throws InsufficientSamples below 2 values.
[[nodiscard]] double std_dev(std::span<const double> values);

[[nodiscard]] double mean(const MeasurementSet& set);
[[nodiscard]] double std_dev(const MeasurementSet& set);

/// Shapiro-Wilk W statistic using Royston's AS R94 coefficients.
/// Valid for 3 <= n <= 5000; input order does not matter.
[[nodiscard]] NormalityReport shapiro_wilk(std::span<const double> values);

/// Histogram local maxima whose mass exceeds options.mass_threshold.
[[nodiscard]] PeakReport detect_peaks(std::span<const double> values, const PeakOptions& options = {});

/// Median of consecutive peak gaps (lower middle for an even count); nullopt below 2 peaks.
[[nodiscard]] std::optional<double> estimate_step(const PeakReport& report);

/// Freedman-Diaconis bin width, 2 * IQR * n^(-1/3).
[[nodiscard]] double freedman_diaconis_width(std::span<const double> values);

/// Inverse of the standard normal CDF (AS 241, PPND16).
[[nodiscard]] double normal_quantile(double p);

}  // namespace stats
}  // namespace mesure
