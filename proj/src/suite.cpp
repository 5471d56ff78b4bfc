#include "mesure/suite.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "mesure/error.hpp"

namespace mesure {

std::string_view to_string(FeatureKind kind) noexcept {
    switch (kind) {
        case FeatureKind::Bytecode: return "bytecode";
        case FeatureKind::Api: return "api";
        case FeatureKind::Jcre: return "jcre";
    }
    return "bytecode";
}

std::optional<FeatureKind> parse_feature_kind(std::string_view text) noexcept {
    if (text == "bytecode") return FeatureKind::Bytecode;
    if (text == "api") return FeatureKind::Api;
    if (text == "jcre") return FeatureKind::Jcre;
    return std::nullopt;
}

std::vector<std::string> TestCaseSpec::run_body() const {
    if (is_reference()) return {};
    std::vector<std::string> body = auxiliaries;
    body.push_back(id);
    return body;
}

Suite::Suite(std::vector<TestCaseSpec> cases) : cases_(std::move(cases)) {
    std::set<std::string> ids;
    std::set<std::uint8_t> ins;
    for (const auto& c : cases_) {
        if (c.id.empty()) throw Error(ErrorKind::InvalidSuite, "case with empty id");
        if (!ids.insert(c.id).second) throw Error(ErrorKind::InvalidSuite, fmt::format("duplicate case id '{}'", c.id));
        if (!ins.insert(c.ins).second) throw Error(ErrorKind::InvalidSuite, fmt::format("duplicate INS 0x{:02X}", c.ins));
    }
    bool has_reference = false;
    for (const auto& c : cases_) {
        if (c.is_reference()) {
            has_reference = true;
            if (!c.auxiliaries.empty()) {
                throw Error(ErrorKind::InvalidSuite, fmt::format("reference case '{}' must have an empty run body", c.id));
            }
            continue;
        }
        const auto* ref = find(c.reference_id);
        if (ref == nullptr || !ref->is_reference()) {
            throw Error(ErrorKind::InvalidSuite,
                        fmt::format("case '{}' references '{}', which is not an empty-loop case", c.id, c.reference_id));
        }
        for (const auto& aux : c.auxiliaries) {
            const auto* a = find(aux);
            if (a == nullptr || a->is_reference()) {
                throw Error(ErrorKind::InvalidSuite, fmt::format("case '{}' has unknown auxiliary '{}'", c.id, aux));
            }
        }
    }
    if (!cases_.empty() && !has_reference) throw Error(ErrorKind::InvalidSuite, "suite has no empty-loop reference case");
    (void)topological_order(graph());
}

const TestCaseSpec* Suite::find(std::string_view id) const noexcept {
    auto it = std::ranges::find(cases_, id, &TestCaseSpec::id);
    return it == cases_.end() ? nullptr : &*it;
}

const TestCaseSpec& Suite::at(std::string_view id) const {
    const auto* c = find(id);
    if (c == nullptr) throw Error(ErrorKind::InvalidSuite, fmt::format("no case '{}' in suite", id));
    return *c;
}

const TestCaseSpec* Suite::find_by_ins(std::uint8_t ins) const noexcept {
    auto it = std::ranges::find(cases_, ins, &TestCaseSpec::ins);
    return it == cases_.end() ? nullptr : &*it;
}

std::vector<std::string> Suite::measurable_ids() const {
    std::vector<std::string> out;
    for (const auto& c : cases_) {
        if (!c.is_reference()) out.push_back(c.id);
    }
    return out;
}

OpDependencyGraph Suite::graph() const {
    OpDependencyGraph g;
    for (const auto& c : cases_) {
        if (!c.is_reference()) g.add_node(c.id, c.auxiliaries);
    }
    return g;
}

std::vector<std::string> Suite::dependency_closure(std::span<const std::string> ids) const {
    OpDependencyGraph sub;
    std::vector<std::string> pending(ids.begin(), ids.end());
    while (!pending.empty()) {
        const std::string id = pending.back();
        pending.pop_back();
        if (sub.edges.contains(id)) continue;
        const auto& c = at(id);
        if (c.is_reference()) continue;
        sub.add_node(id, c.auxiliaries);
        pending.insert(pending.end(), c.auxiliaries.begin(), c.auxiliaries.end());
    }
    // Keep document order among independent cases.
    OpDependencyGraph ordered;
    for (const auto& c : cases_) {
        if (sub.edges.contains(c.id)) ordered.add_node(c.id, c.auxiliaries);
    }
    return topological_order(ordered);
}

namespace {

TestCaseSpec case_from_json(const nlohmann::json& j, std::size_t index) {
    static const std::set<std::string> allowed{"id", "ins", "kind", "auxiliaries", "reference_id"};
    if (!j.is_object()) throw Error(ErrorKind::InvalidSuite, fmt::format("entry {} is not an object", index));
    for (const auto& [key, _] : j.items()) {
        if (!allowed.contains(key)) throw Error(ErrorKind::InvalidSuite, fmt::format("entry {}: unknown key '{}'", index, key));
    }
    for (const auto& key : allowed) {
        if (!j.contains(key)) throw Error(ErrorKind::InvalidSuite, fmt::format("entry {}: missing key '{}'", index, key));
    }
    try {
        TestCaseSpec c;
        c.id = j.at("id").get<std::string>();
        const auto ins = j.at("ins").get<int>();
        if (ins < 0 || ins > 255) throw Error(ErrorKind::InvalidSuite, fmt::format("entry {}: ins {} is not a byte", index, ins));
        c.ins = static_cast<std::uint8_t>(ins);
        const auto kind = j.at("kind").get<std::string>();
        auto parsed = parse_feature_kind(kind);
        if (!parsed) throw Error(ErrorKind::InvalidSuite, fmt::format("entry {}: unknown kind '{}'", index, kind));
        c.kind = *parsed;
        c.auxiliaries = j.at("auxiliaries").get<std::vector<std::string>>();
        c.reference_id = j.at("reference_id").get<std::string>();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidSuite, fmt::format("entry {}: {}", index, e.what()));
    }
}

}  // namespace

Suite parse_suite(std::string_view json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::InvalidSuite, fmt::format("byte {}: {}", e.byte, e.what()));
    }
    if (!doc.is_array()) throw Error(ErrorKind::InvalidSuite, "suite document must be a JSON list");
    std::vector<TestCaseSpec> cases;
    for (std::size_t i = 0; i < doc.size(); ++i) cases.push_back(case_from_json(doc[i], i));
    return Suite(std::move(cases));
}

Suite load_suite_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::ConfigError, fmt::format("cannot open suite '{}'", path.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_suite(buf.str());
}

nlohmann::json suite_to_json(const Suite& suite) {
    auto out = nlohmann::json::array();
    for (const auto& c : suite.cases()) {
        out.push_back({{"id", c.id},
                       {"ins", c.ins},
                       {"kind", to_string(c.kind)},
                       {"auxiliaries", c.auxiliaries},
                       {"reference_id", c.reference_id}});
    }
    return out;
}

}  // namespace mesure
