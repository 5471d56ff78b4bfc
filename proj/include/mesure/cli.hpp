#pragma once

#include <atomic>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mesure/analysis.hpp"
#include "mesure/harness.hpp"

namespace mesure::cli {

enum ExitCode : int { kOk = 0, kRuntimeFailure = 1, kUsageFailure = 2 };

/// Campaign settings. JSON keys match the field names; relative paths resolve
/// against the config file's directory.
struct CampaignConfig {
    std::optional<std::filesystem::path> device_profile;  ///< in-process virtual channel
    std::optional<std::string> device_endpoint;           ///< host:port of a serving device
    std::filesystem::path suite;
    std::vector<std::string> cases;  ///< empty: every non-reference case
    CalibrationPolicy calibration;
    std::size_t repetitions = 30;
    std::optional<int> loop_p2;  ///< fixed loop size, skips calibration
    FilterPolicy filter;
    std::filesystem::path output_dir = "results";
    std::optional<std::uint64_t> rng_seed;  ///< overrides the profile seed

    nlohmann::json snapshot;  ///< effective document, as written by the user plus overrides
};

/// Throws ConfigError for unknown keys, bad values, or referenced files that do not exist.
[[nodiscard]] CampaignConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
[[nodiscard]] CampaignConfig load_config(const std::filesystem::path& path, const nlohmann::json& overrides = nlohmann::json::object());

/// Set by SIGINT / SIGTERM; `serve` returns once it is true.
std::atomic<bool>& shutdown_flag();

/// Full command line without the program name. Returns an ExitCode.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mesure::cli
