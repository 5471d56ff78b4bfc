#pragma once

// Test-case descriptions shared by the device simulator and the harness.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mesure/dependency_graph.hpp"

namespace mesure {

enum class FeatureKind { Bytecode, Api, Jcre };

[[nodiscard]] std::string_view to_string(FeatureKind kind) noexcept;
[[nodiscard]] std::optional<FeatureKind> parse_feature_kind(std::string_view text) noexcept;

struct TestCaseSpec {
    std::string id;
    std::uint8_t ins = 0;
    FeatureKind kind = FeatureKind::Bytecode;
    std::vector<std::string> auxiliaries;  ///< executed before the operation of interest, in order
    std::string reference_id;

    /// A case naming itself as reference is an empty loop: its run body does nothing.
    [[nodiscard]] bool is_reference() const noexcept { return reference_id == id; }
    /// Operations run() executes once per iteration: auxiliaries then the case itself.
    [[nodiscard]] std::vector<std::string> run_body() const;

    friend bool operator==(const TestCaseSpec&, const TestCaseSpec&) = default;
};

/// A validated collection of test cases: unique ids and INS bytes, references
/// resolving to empty-loop cases, auxiliaries present and acyclic.
class Suite {
public:
    Suite() = default;
    explicit Suite(std::vector<TestCaseSpec> cases);

    [[nodiscard]] std::span<const TestCaseSpec> cases() const noexcept { return cases_; }
    [[nodiscard]] const TestCaseSpec* find(std::string_view id) const noexcept;
    [[nodiscard]] const TestCaseSpec& at(std::string_view id) const;
    [[nodiscard]] const TestCaseSpec* find_by_ins(std::uint8_t ins) const noexcept;

    /// Non-reference case ids in document order.
    [[nodiscard]] std::vector<std::string> measurable_ids() const;
    /// ids plus all their transitive auxiliaries, auxiliaries first.
    [[nodiscard]] std::vector<std::string> dependency_closure(std::span<const std::string> ids) const;
    /// Dependency graph over the non-reference cases.
    [[nodiscard]] OpDependencyGraph graph() const;

private:
    std::vector<TestCaseSpec> cases_;
};

[[nodiscard]] Suite parse_suite(std::string_view json_text);
[[nodiscard]] Suite load_suite_file(const std::filesystem::path& path);
[[nodiscard]] nlohmann::json suite_to_json(const Suite& suite);

}  // namespace mesure
