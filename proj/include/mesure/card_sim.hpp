#pragma once

// Simulated benchmark device: applet-style test cases executed against a
// ground-truth latency table, with configurable channel noise.

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mesure/apdu.hpp"
#include "mesure/stats.hpp"
#include "mesure/suite.hpp"

namespace mesure::sim {

struct NoNoise {
    friend bool operator==(const NoNoise&, const NoNoise&) = default;
};

struct GaussianNoise {
    double sigma = 0.0;  ///< ns
    friend bool operator==(const GaussianNoise&, const GaussianNoise&) = default;
};

/// step * k + |jitter|, k drawn from weights over {0, 1, 2, ...}.
struct SteppedNoise {
    double step = 0.0;  ///< ns
    std::vector<double> weights;
    double jitter_sigma = 0.0;  ///< ns
    friend bool operator==(const SteppedNoise&, const SteppedNoise&) = default;
};

using NoiseModel = std::variant<NoNoise, GaussianNoise, SteppedNoise>;

/// Throws ProfileInvariantError.
void validate(const NoiseModel& model);

/// One noise draw in ns. Gaussian draws are signed; the device clamps the total
/// exchange duration at zero instead of the draw so the duration stays normal.
[[nodiscard]] double sample_noise(const NoiseModel& model, std::mt19937_64& rng);

struct DeviceProfile {
    std::string name;
    std::map<std::string, Nanos> op_latencies;
    Nanos exchange_overhead = 0;
    Nanos per_iteration_overhead = 0;
    NoiseModel noise = NoNoise{};
    std::uint64_t rng_seed = 0;

    friend bool operator==(const DeviceProfile&, const DeviceProfile&) = default;
};

/// Parses and validates a profile document; unknown keys are rejected.
/// Throws ProfileParseError (with byte position) or ProfileInvariantError.
[[nodiscard]] DeviceProfile load_profile(std::string_view json_text);
[[nodiscard]] DeviceProfile load_profile_file(const std::filesystem::path& path);
[[nodiscard]] nlohmann::json profile_to_json(const DeviceProfile& profile);

struct AppletEntry {
    TestCaseSpec spec;
    std::vector<std::string> run_body;
};

/// Test cases indexed by INS byte.
class AppletSuite {
public:
    explicit AppletSuite(const Suite& suite);

    [[nodiscard]] const AppletEntry* find(std::uint8_t ins) const noexcept;
    [[nodiscard]] const std::map<std::uint8_t, AppletEntry>& entries() const noexcept { return entries_; }

private:
    std::map<std::uint8_t, AppletEntry> entries_;
};

struct DeviceReply {
    ApduResponse response;
    Nanos duration = 0;
};

/// A single-session device. Exchanges must be serialized by the caller.
class Device {
public:
    /// Throws ProfileInvariantError if a run body names a feature missing from the profile.
    Device(DeviceProfile profile, AppletSuite suite);

    /// Errors are reported in-band as status words, never thrown.
    [[nodiscard]] DeviceReply handle_apdu(const ApduCommand& command);

    /// Noise-free duration of a run-phase exchange for the case at INS and loop size l.
    [[nodiscard]] Nanos nominal_run_duration(std::uint8_t ins, std::uint64_t l) const;

    [[nodiscard]] const DeviceProfile& profile() const noexcept { return profile_; }
    [[nodiscard]] const AppletSuite& suite() const noexcept { return suite_; }

private:
    DeviceProfile profile_;
    AppletSuite suite_;
    std::map<std::uint8_t, Nanos> body_cost_;
    std::mt19937_64 rng_;
};

}  // namespace mesure::sim
