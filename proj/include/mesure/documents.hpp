#pragma once

// JSON and CSV artifacts written and read by the command-line tool. Every JSON
// document carries a top-level schema_version.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mesure/analysis.hpp"
#include "mesure/harness.hpp"
#include "mesure/profiler.hpp"
#include "mesure/stats.hpp"

namespace mesure::doc {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kToolVersion = "1.0.0";

/// Per-set diagnostics; a statistic that could not be computed keeps its error text.
struct SetDiagnostics {
    std::optional<NormalityReport> normality;
    std::string normality_error;
    std::optional<PeakReport> peaks;
    std::string peaks_error;
};

struct SetRecord {
    MeasurementSet raw;
    MeasurementStats filtered;
    SetDiagnostics diagnostics;
};

struct CaseRecord {
    std::uint8_t p2 = 1;
    SetRecord operation;
    SetRecord reference;
};

struct ResultsDocument {
    std::string card;
    nlohmann::json metadata = nlohmann::json::object();
    std::map<std::string, CaseRecord> cases;
    std::map<std::string, IsolatedTime> isolated;
};

[[nodiscard]] nlohmann::json to_json(const ResultsDocument& doc);
[[nodiscard]] ResultsDocument results_from_json(const nlohmann::json& j);

/// Accepts a results document or any document with "card" and "isolated" sections.
[[nodiscard]] std::pair<std::string, std::map<std::string, double>> isolated_means_from_json(const nlohmann::json& j);

[[nodiscard]] nlohmann::json to_json(const profiler::DomainWeights& w);
[[nodiscard]] profiler::DomainWeights weights_from_json(const nlohmann::json& j);

[[nodiscard]] nlohmann::json to_json(const profiler::ReferenceBase& r);
[[nodiscard]] profiler::ReferenceBase reference_from_json(const nlohmann::json& j);

[[nodiscard]] nlohmann::json to_json(const profiler::ScoreCard& card);
[[nodiscard]] profiler::ScoreCard scorecard_from_json(const nlohmann::json& j);

/// case,rep,L,duration_ns; reference rows are labelled "<reference>@<case>".
[[nodiscard]] std::string samples_csv(const ResultsDocument& doc);
/// feature,domain,N,alpha,W rows, then one "P" row per domain and an "overall" row.
[[nodiscard]] std::string scorecard_csv(const profiler::ScoreCard& card);

/// Two-space indented, trailing newline. Throws DocumentError.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
void write_text_file(const std::filesystem::path& path, const std::string& text);
[[nodiscard]] nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace mesure::doc
