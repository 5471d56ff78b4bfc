#include "mesure/documents.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "mesure/error.hpp"

namespace mesure::doc {

using nlohmann::json;

namespace {

void check_schema(const json& j, std::string_view what) {
    if (!j.is_object() || !j.contains("schema_version")) {
        throw Error(ErrorKind::DocumentError, fmt::format("{} document has no schema_version", what));
    }
    if (j.at("schema_version").get<int>() != kSchemaVersion) {
        throw Error(ErrorKind::DocumentError,
                    fmt::format("{} document has schema_version {}, expected {}", what, j.at("schema_version").dump(), kSchemaVersion));
    }
}

template <typename F>
auto guarded(std::string_view what, F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::DocumentError, fmt::format("{} document: {}", what, e.what()));
    }
}

json stats_json(const MeasurementStats& s) { return {{"mean_ns", s.mean}, {"std_dev_ns", s.std_dev}, {"count", s.count}}; }

MeasurementStats stats_from(const json& j) {
    return {.mean = j.at("mean_ns").get<double>(), .std_dev = j.at("std_dev_ns").get<double>(), .count = j.at("count").get<std::size_t>()};
}

json set_json(const SetRecord& rec) {
    json seq = json::array();
    json dur = json::array();
    json wall = json::array();
    for (const auto& s : rec.raw.samples()) {
        seq.push_back(s.sequence_index);
        dur.push_back(s.duration);
        wall.push_back(s.wall_time);
    }
    json out{{"test_id", rec.raw.test_id()},
             {"loop_size", rec.raw.loop_size()},
             {"sequence_index", seq},
             {"duration_ns", dur},
             {"wall_time_ns", wall},
             {"stats", rec.raw.empty() ? json(nullptr) : stats_json(rec.raw.stats())},
             {"filtered_stats", stats_json(rec.filtered)}};

    const auto& d = rec.diagnostics;
    if (d.normality) {
        out["normality"] = {{"w", d.normality->w_statistic}, {"sample_count", d.normality->sample_count}};
    } else {
        out["normality"] = {{"error", d.normality_error}};
    }
    if (d.peaks) {
        json peaks = json::array();
        for (const auto& p : d.peaks->peaks) peaks.push_back({{"center_ns", p.center}, {"mass", p.mass}});
        out["peaks"] = {{"bin_width_ns", d.peaks->bin_width},
                        {"peaks", peaks},
                        {"step_estimate_ns", d.peaks->step_estimate ? json(*d.peaks->step_estimate) : json(nullptr)}};
    } else {
        out["peaks"] = {{"error", d.peaks_error}};
    }
    return out;
}

SetRecord set_from(const json& j) {
    const auto seq = j.at("sequence_index").get<std::vector<std::uint32_t>>();
    const auto dur = j.at("duration_ns").get<std::vector<Nanos>>();
    const auto wall = j.at("wall_time_ns").get<std::vector<Nanos>>();
    if (seq.size() != dur.size() || seq.size() != wall.size()) {
        throw Error(ErrorKind::DocumentError, "sample columns have different lengths");
    }
    std::vector<RawSample> samples;
    samples.reserve(seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i) samples.push_back({.duration = dur[i], .sequence_index = seq[i], .wall_time = wall[i]});

    SetRecord rec;
    rec.raw = MeasurementSet(j.at("test_id").get<std::string>(), j.at("loop_size").get<std::uint32_t>(), std::move(samples));
    rec.filtered = stats_from(j.at("filtered_stats"));
    const auto& n = j.at("normality");
    if (n.contains("error")) {
        rec.diagnostics.normality_error = n.at("error").get<std::string>();
    } else {
        rec.diagnostics.normality = NormalityReport{.w_statistic = n.at("w").get<double>(), .sample_count = n.at("sample_count").get<std::size_t>()};
    }
    const auto& p = j.at("peaks");
    if (p.contains("error")) {
        rec.diagnostics.peaks_error = p.at("error").get<std::string>();
    } else {
        PeakReport report;
        report.bin_width = p.at("bin_width_ns").get<double>();
        for (const auto& peak : p.at("peaks")) {
            report.peaks.push_back({.center = peak.at("center_ns").get<double>(), .mass = peak.at("mass").get<double>()});
        }
        if (!p.at("step_estimate_ns").is_null()) report.step_estimate = p.at("step_estimate_ns").get<double>();
        rec.diagnostics.peaks = std::move(report);
    }
    return rec;
}

json isolated_json(const IsolatedTime& t) {
    return {{"mean_ns", t.mean},
            {"spread_ns", t.spread},
            {"loop_size", t.loop_size},
            {"sample_count", t.sample_count},
            {"negative_warning", t.negative_warning}};
}

}  // namespace

json to_json(const ResultsDocument& doc) {
    json cases = json::object();
    for (const auto& [id, rec] : doc.cases) {
        cases[id] = {{"p2", rec.p2}, {"operation", set_json(rec.operation)}, {"reference", set_json(rec.reference)}};
    }
    json isolated = json::object();
    for (const auto& [id, t] : doc.isolated) isolated[id] = isolated_json(t);
    return {{"schema_version", kSchemaVersion},
            {"kind", "results"},
            {"card", doc.card},
            {"metadata", doc.metadata},
            {"cases", cases},
            {"isolated", isolated}};
}

ResultsDocument results_from_json(const json& j) {
    return guarded("results", [&] {
        check_schema(j, "results");
        ResultsDocument doc;
        doc.card = j.at("card").get<std::string>();
        doc.metadata = j.at("metadata");
        for (const auto& [id, c] : j.at("cases").items()) {
            doc.cases[id] = CaseRecord{.p2 = c.at("p2").get<std::uint8_t>(),
                                       .operation = set_from(c.at("operation")),
                                       .reference = set_from(c.at("reference"))};
        }
        for (const auto& [id, t] : j.at("isolated").items()) {
            if (!doc.cases.contains(id)) {
                throw Error(ErrorKind::DocumentError, fmt::format("isolated time '{}' has no raw measurements", id));
            }
            doc.isolated[id] = IsolatedTime{.feature_id = id,
                                            .mean = t.at("mean_ns").get<double>(),
                                            .spread = t.at("spread_ns").get<double>(),
                                            .loop_size = t.at("loop_size").get<std::uint32_t>(),
                                            .sample_count = t.at("sample_count").get<std::size_t>(),
                                            .negative_warning = t.at("negative_warning").get<bool>()};
        }
        return doc;
    });
}

std::pair<std::string, std::map<std::string, double>> isolated_means_from_json(const json& j) {
    return guarded("isolated", [&] {
        check_schema(j, "isolated");
        std::map<std::string, double> means;
        for (const auto& [id, t] : j.at("isolated").items()) means[id] = t.at("mean_ns").get<double>();
        return std::pair{j.at("card").get<std::string>(), std::move(means)};
    });
}

json to_json(const profiler::DomainWeights& w) {
    json alpha = json::object();
    for (const auto& [f, a] : w.alpha) alpha[f] = a;
    return {{"schema_version", kSchemaVersion}, {"kind", "weights"}, {"domain", w.domain}, {"feature_count", w.feature_count}, {"alpha", alpha}};
}

profiler::DomainWeights weights_from_json(const json& j) {
    return guarded("weights", [&] {
        check_schema(j, "weights");
        profiler::DomainWeights w;
        w.domain = j.at("domain").get<std::string>();
        w.feature_count = j.at("feature_count").get<std::size_t>();
        for (const auto& [f, a] : j.at("alpha").items()) w.alpha[f] = a.get<double>();
        return w;
    });
}

json to_json(const profiler::ReferenceBase& r) {
    json times = json::object();
    for (const auto& [f, t] : r.r) times[f] = t;
    return {{"schema_version", kSchemaVersion}, {"kind", "reference"}, {"source_card_count", r.source_card_count}, {"r_ns", times}};
}

profiler::ReferenceBase reference_from_json(const json& j) {
    return guarded("reference", [&] {
        check_schema(j, "reference");
        profiler::ReferenceBase r;
        r.source_card_count = j.at("source_card_count").get<std::size_t>();
        for (const auto& [f, t] : j.at("r_ns").items()) {
            r.r[f] = t.get<double>();
            if (!(r.r[f] > 0.0)) throw Error(ErrorKind::NonPositiveMean, fmt::format("reference time for '{}' is not positive", f));
        }
        return r;
    });
}

json to_json(const profiler::ScoreCard& card) {
    json marks = json::object();
    for (const auto& [f, n] : card.marks) marks[f] = n;
    json weighted = json::array();
    for (const auto& [key, wm] : card.weighted) {
        weighted.push_back({{"feature", key.first}, {"domain", key.second}, {"alpha", wm.alpha}, {"W", wm.w}});
    }
    json domains = json::object();
    for (const auto& [d, p] : card.domain_marks) domains[d] = p;
    return {{"schema_version", kSchemaVersion},
            {"kind", "scorecard"},
            {"card", card.card_id},
            {"marks", marks},
            {"weighted", weighted},
            {"domain_marks", domains},
            {"overall", card.overall}};
}

profiler::ScoreCard scorecard_from_json(const json& j) {
    return guarded("scorecard", [&] {
        check_schema(j, "scorecard");
        profiler::ScoreCard card;
        card.card_id = j.at("card").get<std::string>();
        for (const auto& [f, n] : j.at("marks").items()) card.marks[f] = n.get<double>();
        for (const auto& e : j.at("weighted")) {
            card.weighted[{e.at("feature").get<std::string>(), e.at("domain").get<std::string>()}] = {
                .alpha = e.at("alpha").get<double>(), .w = e.at("W").get<double>()};
        }
        for (const auto& [d, p] : j.at("domain_marks").items()) card.domain_marks[d] = p.get<double>();
        card.overall = j.at("overall").get<double>();
        return card;
    });
}

std::string samples_csv(const ResultsDocument& doc) {
    std::string out = "case,rep,L,duration_ns\n";
    auto emit = [&](const std::string& label, const MeasurementSet& set) {
        for (const auto& s : set.samples()) {
            out += fmt::format("{},{},{},{}\n", label, s.sequence_index, set.loop_size(), s.duration);
        }
    };
    for (const auto& [id, rec] : doc.cases) {
        emit(id, rec.operation.raw);
        emit(fmt::format("{}@{}", rec.reference.raw.test_id(), id), rec.reference.raw);
    }
    return out;
}

std::string scorecard_csv(const profiler::ScoreCard& card) {
    std::string out = "feature,domain,N,alpha,W\n";
    for (const auto& [key, wm] : card.weighted) {
        out += fmt::format("{},{},{},{},{}\n", key.first, key.second, card.marks.at(key.first), wm.alpha, wm.w);
    }
    for (const auto& [domain, p] : card.domain_marks) out += fmt::format("P,{},,,{}\n", domain, p);
    out += fmt::format("overall,,,,{}\n", card.overall);
    return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::DocumentError, fmt::format("cannot write '{}'", path.string()));
    out << text;
    if (!out) throw Error(ErrorKind::DocumentError, fmt::format("short write to '{}'", path.string()));
}

void write_json_file(const std::filesystem::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::DocumentError, fmt::format("cannot open '{}'", path.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return json::parse(buf.str());
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::DocumentError, fmt::format("'{}' byte {}: {}", path.string(), e.byte, e.what()));
    }
}

}  // namespace mesure::doc
