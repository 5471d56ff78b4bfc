#include "mesure/profiler.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "mesure/error.hpp"

namespace mesure::profiler {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        const auto start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

[[noreturn]] void bad_line(std::size_t line, const std::string& why) {
    throw Error(ErrorKind::TraceParseError, fmt::format("line {}: {}", line, why));
}

}  // namespace

std::vector<TraceEvent> parse_events(std::string_view text) {
    std::vector<TraceEvent> events;
    std::vector<std::pair<std::size_t, std::string>> open;  // line, method
    std::size_t line_no = 0;

    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

        const auto tokens = split_ws(line);
        if (tokens.empty() || tokens.front().starts_with('#')) {
            if (end == text.size()) break;
            continue;
        }
        const auto keyword = tokens.front();
        if (keyword == "ENTER") {
            if (tokens.size() != 2) bad_line(line_no, "ENTER takes exactly one method name");
            events.push_back({.kind = EventKind::Enter, .name = std::string(tokens[1]), .attributes = {}});
            open.emplace_back(line_no, std::string(tokens[1]));
        } else if (keyword == "EXIT") {
            if (tokens.size() != 1) bad_line(line_no, "EXIT takes no arguments");
            if (open.empty()) throw Error(ErrorKind::UnbalancedTrace, fmt::format("line {}: EXIT without a matching ENTER", line_no));
            events.push_back({.kind = EventKind::Exit, .name = {}, .attributes = {}});
            open.pop_back();
        } else if (keyword == "BC") {
            if (tokens.size() < 2) bad_line(line_no, "BC needs a bytecode name");
            TraceEvent ev{.kind = EventKind::Bytecode, .name = std::string(tokens[1]), .attributes = {}};
            for (std::size_t t = 2; t < tokens.size(); ++t) {
                const auto eq = tokens[t].find('=');
                if (eq == std::string_view::npos || eq == 0) {
                    bad_line(line_no, fmt::format("attribute '{}' is not key=value", tokens[t]));
                }
                ev.attributes.emplace_back(std::string(tokens[t].substr(0, eq)), std::string(tokens[t].substr(eq + 1)));
            }
            events.push_back(std::move(ev));
        } else {
            bad_line(line_no, fmt::format("unknown event '{}'", keyword));
        }
        if (end == text.size()) break;
    }
    if (!open.empty()) {
        throw Error(ErrorKind::UnbalancedTrace,
                    fmt::format("line {}: ENTER '{}' never exits", open.back().first, open.back().second));
    }
    return events;
}

ParsedTrace parse_trace(std::string_view text) {
    const auto events = parse_events(text);
    ParsedTrace out;
    // Open method nodes, innermost last.
    std::vector<CallNode*> stack;
    auto siblings = [&]() -> std::vector<CallNode>& { return stack.empty() ? out.tree.roots : stack.back()->children; };

    for (const auto& ev : events) {
        switch (ev.kind) {
            case EventKind::Enter: {
                auto& list = siblings();
                list.push_back({.kind = EventKind::Enter, .name = ev.name, .attributes = {}, .children = {}, .bytecode_counts = {}});
                stack.push_back(&list.back());
                ++out.counts[ev.name];
                break;
            }
            case EventKind::Exit: {
                CallNode* done = stack.back();
                stack.pop_back();
                if (!stack.empty()) {
                    for (const auto& [name, n] : done->bytecode_counts) stack.back()->bytecode_counts[name] += n;
                }
                break;
            }
            case EventKind::Bytecode: {
                siblings().push_back(
                    {.kind = EventKind::Bytecode, .name = ev.name, .attributes = ev.attributes, .children = {}, .bytecode_counts = {}});
                if (!stack.empty()) ++stack.back()->bytecode_counts[ev.name];
                ++out.counts[ev.name];
                break;
            }
        }
    }
    return out;
}

namespace {

void flatten_into(const CallNode& node, std::vector<TraceEvent>& out) {
    if (node.kind == EventKind::Bytecode) {
        out.push_back({.kind = EventKind::Bytecode, .name = node.name, .attributes = node.attributes});
        return;
    }
    out.push_back({.kind = EventKind::Enter, .name = node.name, .attributes = {}});
    for (const auto& child : node.children) flatten_into(child, out);
    out.push_back({.kind = EventKind::Exit, .name = {}, .attributes = {}});
}

void render_into(const std::vector<CallNode>& nodes, std::size_t depth, std::ostringstream& out) {
    const std::string indent(depth * 2, ' ');
    for (std::size_t i = 0; i < nodes.size();) {
        const auto& node = nodes[i];
        if (node.kind == EventKind::Enter) {
            out << indent << node.name << "()";
            for (const auto& [name, n] : node.bytecode_counts) out << ' ' << name << ':' << n;
            out << '\n';
            render_into(node.children, depth + 1, out);
            ++i;
            continue;
        }
        std::size_t run = 1;
        while (i + run < nodes.size() && nodes[i + run].kind == EventKind::Bytecode && nodes[i + run].name == node.name &&
               nodes[i + run].attributes.empty() && node.attributes.empty()) {
            ++run;
        }
        out << indent << node.name;
        if (run > 1) out << " x" << run;
        for (const auto& [k, v] : node.attributes) out << ' ' << k << '=' << v;
        out << '\n';
        i += run;
    }
}

}  // namespace

std::vector<TraceEvent> flatten(const InvocationTree& tree) {
    std::vector<TraceEvent> out;
    for (const auto& root : tree.roots) flatten_into(root, out);
    return out;
}

std::string render(const InvocationTree& tree) {
    std::ostringstream out;
    render_into(tree.roots, 0, out);
    return out.str();
}

FeatureUsage aggregate_usage(std::string domain, std::span<const FeatureCounts> traces) {
    if (traces.empty()) throw Error(ErrorKind::NoTraces, fmt::format("domain '{}' has no traces", domain));
    FeatureUsage usage{.domain = std::move(domain), .beta = {}, .trace_count = traces.size()};
    std::uint64_t total = 0;
    for (const auto& counts : traces) {
        for (const auto& [feature, n] : counts) {
            usage.beta[feature] += n;
            total += n;
        }
    }
    if (total == 0) throw Error(ErrorKind::NoTraces, fmt::format("domain '{}': traces record no feature usage", usage.domain));
    return usage;
}

DomainWeights compute_weights(const FeatureUsage& usage) {
    std::uint64_t total = 0;
    for (const auto& [_, n] : usage.beta) total += n;
    if (total == 0) throw Error(ErrorKind::ZeroUsage, fmt::format("domain '{}' has zero total usage", usage.domain));

    DomainWeights w{.domain = usage.domain, .alpha = {}, .feature_count = usage.beta.size()};
    const auto denom = static_cast<double>(total);
    for (const auto& [feature, n] : usage.beta) w.alpha[feature] = static_cast<double>(n) / denom;
    return w;
}

ReferenceBase build_reference(const std::map<std::string, std::map<std::string, double>>& per_card,
                              ReferenceAggregation aggregation) {
    std::set<std::string> features;
    for (const auto& [_, means] : per_card) {
        for (const auto& [feature, __] : means) features.insert(feature);
    }
    ReferenceBase base{.r = {}, .source_card_count = per_card.size()};
    for (const auto& feature : features) {
        double acc = 0.0;
        for (const auto& [card, means] : per_card) {
            auto it = means.find(feature);
            if (it == means.end()) {
                throw Error(ErrorKind::MissingFeature, fmt::format("feature '{}' was not measured on card '{}'", feature, card));
            }
            if (!(it->second > 0.0)) {
                throw Error(ErrorKind::NonPositiveMean,
                            fmt::format("feature '{}' on card '{}' has mean {}", feature, card, it->second));
            }
            acc += aggregation == ReferenceAggregation::Geometric ? std::log(it->second) : it->second;
        }
        const double n = static_cast<double>(per_card.size());
        base.r[feature] = aggregation == ReferenceAggregation::Geometric ? std::exp(acc / n) : acc / n;
    }
    return base;
}

double compute_mark(double r_f, double m_cf) {
    if (!(r_f > 0.0) || !(m_cf > 0.0)) {
        throw Error(ErrorKind::NonPositiveInput, fmt::format("mark needs positive times, got R={} M={}", r_f, m_cf));
    }
    return r_f / m_cf;
}

std::map<std::string, double> compute_marks(const ReferenceBase& reference, const std::map<std::string, double>& card_means) {
    std::map<std::string, double> marks;
    for (const auto& [feature, mean] : card_means) {
        if (auto it = reference.r.find(feature); it != reference.r.end()) marks[feature] = compute_mark(it->second, mean);
    }
    return marks;
}

ScoreCard score(std::string card_id, const std::map<std::string, double>& marks, std::span<const DomainWeights> weights) {
    if (weights.empty()) throw Error(ErrorKind::NoDomains, "no domain weights to score against");
    ScoreCard card{.card_id = std::move(card_id), .marks = marks, .weighted = {}, .domain_marks = {}, .overall = 0.0};
    for (const auto& dw : weights) {
        if (card.domain_marks.contains(dw.domain)) {
            throw Error(ErrorKind::DocumentError, fmt::format("domain '{}' given twice", dw.domain));
        }
        double p = 0.0;
        for (const auto& [feature, alpha] : dw.alpha) {
            if (alpha == 0.0) continue;
            auto it = marks.find(feature);
            if (it == marks.end()) {
                throw Error(ErrorKind::FeatureWithoutMark,
                            fmt::format("feature '{}' is weighted in domain '{}' but has no mark", feature, dw.domain));
            }
            const double w = it->second * alpha;
            card.weighted[{feature, dw.domain}] = {.alpha = alpha, .w = w};
            p += w;
        }
        card.domain_marks[dw.domain] = p;
    }
    double total = 0.0;
    for (const auto& [_, p] : card.domain_marks) total += p;
    card.overall = total / static_cast<double>(card.domain_marks.size());
    return card;
}

}  // namespace mesure::profiler
