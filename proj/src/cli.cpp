#include "mesure/cli.hpp"

#include <algorithm>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "mesure/card_sim.hpp"
#include "mesure/documents.hpp"
#include "mesure/error.hpp"
#include "mesure/profiler.hpp"
#include "mesure/transport.hpp"

namespace mesure::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void config_fail(const std::string& why) { throw Error(ErrorKind::ConfigError, why); }

fs::path existing_path(const json& j, const std::string& key, const fs::path& base_dir) {
    if (!j.at(key).is_string()) config_fail(fmt::format("'{}' must be a path string", key));
    fs::path p = j.at(key).get<std::string>();
    if (p.is_relative()) p = (base_dir / p).lexically_normal();
    if (!fs::exists(p)) config_fail(fmt::format("'{}' points to missing file '{}'", key, p.string()));
    return p;
}

template <typename T>
T number(const json& j, const std::string& key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        config_fail(fmt::format("'{}' has the wrong type", key));
    }
}

}  // namespace

CampaignConfig parse_config(const json& j, const fs::path& base_dir) {
    static const std::set<std::string> allowed{"device_profile", "device_endpoint", "suite", "cases", "ratio",
                                               "min_duration_ns", "probe_reps", "confirm_reps", "repetitions", "loop_p2",
                                               "n_sigma", "min_retained", "output_dir", "rng_seed"};
    if (!j.is_object()) config_fail("config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!allowed.contains(key)) config_fail(fmt::format("unknown config key '{}'", key));
    }

    CampaignConfig cfg;
    cfg.snapshot = j;
    if (j.contains("device_profile") == j.contains("device_endpoint")) {
        config_fail("exactly one of device_profile and device_endpoint must be set");
    }
    if (j.contains("device_profile")) cfg.device_profile = existing_path(j, "device_profile", base_dir);
    if (j.contains("device_endpoint")) {
        cfg.device_endpoint = number<std::string>(j, "device_endpoint");
        (void)parse_endpoint(*cfg.device_endpoint);
    }
    if (!j.contains("suite")) config_fail("missing 'suite'");
    cfg.suite = existing_path(j, "suite", base_dir);
    if (j.contains("cases")) cfg.cases = number<std::vector<std::string>>(j, "cases");

    if (j.contains("ratio")) cfg.calibration.ratio = number<double>(j, "ratio");
    if (j.contains("min_duration_ns")) cfg.calibration.min_duration = number<Nanos>(j, "min_duration_ns");
    if (j.contains("probe_reps")) cfg.calibration.probe_reps = number<std::size_t>(j, "probe_reps");
    if (j.contains("confirm_reps")) cfg.calibration.confirm_reps = number<std::size_t>(j, "confirm_reps");
    cfg.calibration.validate();

    if (j.contains("repetitions")) cfg.repetitions = number<std::size_t>(j, "repetitions");
    if (cfg.repetitions < 2) config_fail("repetitions must be >= 2");
    if (j.contains("loop_p2")) {
        cfg.loop_p2 = number<int>(j, "loop_p2");
        (void)LoopSize(*cfg.loop_p2);
    }
    if (j.contains("n_sigma")) cfg.filter.n_sigma = number<double>(j, "n_sigma");
    if (!(cfg.filter.n_sigma > 0.0)) config_fail("n_sigma must be > 0");
    if (j.contains("min_retained")) cfg.filter.min_retained = number<std::size_t>(j, "min_retained");
    if (j.contains("output_dir")) {
        fs::path out = number<std::string>(j, "output_dir");
        cfg.output_dir = out.is_relative() ? (base_dir / out).lexically_normal() : out;
    } else {
        cfg.output_dir = base_dir / cfg.output_dir;
    }
    if (j.contains("rng_seed")) cfg.rng_seed = number<std::uint64_t>(j, "rng_seed");
    return cfg;
}

CampaignConfig load_config(const fs::path& path, const json& overrides) {
    json j;
    try {
        j = doc::read_json_file(path);
    } catch (const Error& e) {
        config_fail(e.detail());
    }
    if (!j.is_object()) config_fail("config must be a JSON object");
    for (const auto& [key, value] : overrides.items()) {
        // A flag replaces the other device selector rather than conflicting with it.
        if (key == "device_profile") j.erase("device_endpoint");
        if (key == "device_endpoint") j.erase("device_profile");
        j[key] = value;
    }
    return parse_config(j, fs::absolute(path).parent_path());
}

std::atomic<bool>& shutdown_flag() {
    static std::atomic<bool> flag{false};
    return flag;
}

namespace {

extern "C" void on_signal(int) { shutdown_flag().store(true); }

void init_logging() {
    static const bool once = [] {
        auto logger = spdlog::stderr_color_mt("mesure");
        spdlog::set_default_logger(logger);
        spdlog::set_pattern("[%l] %v");
        const char* level = std::getenv("MESURE_LOG");
        spdlog::set_level(level != nullptr ? spdlog::level::from_str(level) : spdlog::level::warn);
        return true;
    }();
    (void)once;
}

// An error raised during one pipeline stage.
struct StageError {
    std::string stage;
    std::string message;
};

template <typename F>
auto stage(const std::string& name, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        throw StageError{name, e.what()};
    }
}

struct Device {
    std::unique_ptr<Channel> channel;
    std::string card;
    std::string kind;
};

Device open_device(const CampaignConfig& cfg, const Suite& suite) {
    if (cfg.device_profile) {
        auto profile = sim::load_profile_file(*cfg.device_profile);
        if (cfg.rng_seed) profile.rng_seed = *cfg.rng_seed;
        auto card = profile.name;
        return {std::make_unique<VirtualChannel>(sim::Device(std::move(profile), sim::AppletSuite(suite))), card, "virtual"};
    }
    auto channel = stage("connect", [&] { return TcpChannel::connect(*cfg.device_endpoint); });
    return {std::move(channel), *cfg.device_endpoint, "tcp"};
}

doc::SetRecord describe_set(const MeasurementSet& raw, const FilterPolicy& filter) {
    doc::SetRecord rec;
    rec.raw = raw;
    rec.filtered = filter_confidence(raw, filter).stats();
    const auto values = raw.durations();
    try {
        rec.diagnostics.normality = stats::shapiro_wilk(values);
    } catch (const Error& e) {
        rec.diagnostics.normality_error = e.what();
    }
    try {
        rec.diagnostics.peaks = stats::detect_peaks(values);
    } catch (const Error& e) {
        rec.diagnostics.peaks_error = e.what();
    }
    return rec;
}

SuiteOverrides suite_overrides(const CampaignConfig& cfg) {
    SuiteOverrides o{.repetitions = cfg.repetitions, .fixed_loop = std::nullopt};
    if (cfg.loop_p2) o.fixed_loop = LoopSize(*cfg.loop_p2);
    return o;
}

int cmd_calibrate(const CampaignConfig& cfg, std::ostream& out) {
    const auto suite = load_suite_file(cfg.suite);
    auto device = open_device(cfg, suite);
    const auto ids = cfg.cases.empty() ? suite.measurable_ids() : cfg.cases;
    json report = json::object();
    for (const auto& id : suite.dependency_closure(ids)) {
        const auto loop = stage("calibrate", [&] { return calibrate(*device.channel, suite.at(id), cfg.calibration); });
        report[id] = {{"p2", loop.p2()}, {"loop_size", loop.l()}};
    }
    out << report.dump(2) << '\n';
    return kOk;
}

int cmd_bench(const CampaignConfig& cfg, std::ostream& out) {
    const auto suite = load_suite_file(cfg.suite);
    auto device = open_device(cfg, suite);
    Channel& channel = *device.channel;

    const Nanos clock_start = channel.now();
    const auto measured = stage("bench", [&] {
        return run_suite(channel, suite, cfg.cases, cfg.calibration, suite_overrides(cfg));
    });
    const Nanos clock_end = channel.now();

    OpDependencyGraph graph;
    for (const auto& [id, _] : measured) graph.add_node(id, suite.at(id).auxiliaries);

    doc::ResultsDocument results;
    results.card = device.card;
    results.metadata = {{"tool", "mesure"},
                        {"tool_version", doc::kToolVersion},
                        {"config", cfg.snapshot},
                        {"channel", device.kind},
                        {"clock_start_ns", clock_start},
                        {"clock_end_ns", clock_end}};
    stage("filter", [&] {
        for (const auto& [id, m] : measured) {
            results.cases[id] = doc::CaseRecord{.p2 = m.loop_size.p2(),
                                                .operation = describe_set(m.operation, cfg.filter),
                                                .reference = describe_set(m.reference, cfg.filter)};
        }
        return 0;
    });
    results.isolated = stage("extract", [&] { return isolate_all(measured, graph, cfg.filter); });

    stage("write", [&] {
        fs::create_directories(cfg.output_dir);
        doc::write_json_file(cfg.output_dir / "results.json", doc::to_json(results));
        doc::write_text_file(cfg.output_dir / "samples.csv", doc::samples_csv(results));
        return 0;
    });

    for (const auto& [id, t] : results.isolated) {
        out << fmt::format("{:<16} {:>14.3f} ns  (spread {:.3f} ns, L={}, n={}){}\n", id, t.mean, t.spread, t.loop_size,
                           t.sample_count, t.negative_warning ? "  NEGATIVE" : "");
    }
    out << "wrote " << (cfg.output_dir / "results.json").string() << '\n';
    return kOk;
}

int cmd_serve(const fs::path& profile_path, const fs::path& suite_path, const std::string& listen, std::ostream& out) {
    const auto profile = sim::load_profile_file(profile_path);
    const auto suite = load_suite_file(suite_path);
    sim::Device device(profile, sim::AppletSuite(suite));
    ApduServer server(std::move(device));
    server.bind(listen);
    out << fmt::format("serving '{}' on port {}\n", profile.name, server.port()) << std::flush;
    auto previous_int = std::signal(SIGINT, on_signal);
    auto previous_term = std::signal(SIGTERM, on_signal);
    server.run(&shutdown_flag());
    server.stop();
    std::signal(SIGINT, previous_int);
    std::signal(SIGTERM, previous_term);
    return kOk;
}

int cmd_profile(const fs::path& traces_dir, const fs::path& out_dir, std::ostream& out) {
    if (!fs::is_directory(traces_dir)) throw Error(ErrorKind::ConfigError, fmt::format("'{}' is not a directory", traces_dir.string()));
    std::vector<fs::path> domains;
    for (const auto& entry : fs::directory_iterator(traces_dir)) {
        if (entry.is_directory()) domains.push_back(entry.path());
    }
    std::ranges::sort(domains);
    if (domains.empty()) {
        throw StageError{"profile", fmt::format("NoTraces: '{}' has no domain directories", traces_dir.string())};
    }

    fs::create_directories(out_dir);
    for (const auto& dir : domains) {
        const auto domain = dir.filename().string();
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.is_regular_file()) files.push_back(entry.path());
        }
        std::ranges::sort(files);

        std::vector<profiler::FeatureCounts> counts;
        std::string trees;
        for (const auto& file : files) {
            std::ifstream in(file);
            std::stringstream buf;
            buf << in.rdbuf();
            const auto parsed = stage(fmt::format("profile {}", file.string()), [&] { return profiler::parse_trace(buf.str()); });
            counts.push_back(parsed.counts);
            trees += fmt::format("# {}\n{}", file.filename().string(), profiler::render(parsed.tree));
        }
        const auto weights = stage(fmt::format("profile {}", domain), [&] {
            return profiler::compute_weights(profiler::aggregate_usage(domain, counts));
        });
        const auto path = out_dir / fmt::format("weights_{}.json", domain);
        doc::write_json_file(path, doc::to_json(weights));
        doc::write_text_file(out_dir / fmt::format("tree_{}.txt", domain), trees);
        out << fmt::format("{}: {} trace(s), {} feature(s) -> {}\n", domain, files.size(), weights.feature_count, path.string());
    }
    return kOk;
}

struct ScoreArgs {
    std::vector<fs::path> isolated;
    fs::path reference;
    std::vector<fs::path> weights;
    fs::path out_dir = ".";
    bool write_reference = false;
    bool geometric = false;
};

int cmd_score(const ScoreArgs& args, std::ostream& out) {
    std::map<std::string, std::map<std::string, double>> per_card;
    for (const auto& path : args.isolated) {
        auto [card, means] = doc::isolated_means_from_json(doc::read_json_file(path));
        if (!per_card.emplace(card, std::move(means)).second) {
            throw Error(ErrorKind::DocumentError, fmt::format("card '{}' appears in more than one isolated document", card));
        }
    }
    profiler::ReferenceBase reference;
    if (args.write_reference) {
        reference = stage("reference", [&] {
            return profiler::build_reference(per_card, args.geometric ? profiler::ReferenceAggregation::Geometric
                                                                      : profiler::ReferenceAggregation::Arithmetic);
        });
        doc::write_json_file(args.reference, doc::to_json(reference));
    } else {
        reference = doc::reference_from_json(doc::read_json_file(args.reference));
    }
    std::vector<profiler::DomainWeights> weights;
    for (const auto& path : args.weights) weights.push_back(doc::weights_from_json(doc::read_json_file(path)));

    fs::create_directories(args.out_dir);
    for (const auto& [card, means] : per_card) {
        const auto scorecard = stage("score", [&] { return profiler::score(card, profiler::compute_marks(reference, means), weights); });
        const auto path = args.out_dir / fmt::format("scorecard_{}.json", card);
        doc::write_json_file(path, doc::to_json(scorecard));
        out << fmt::format("{}: overall {:.6f} -> {}\n", card, scorecard.overall, path.string());
    }
    return kOk;
}

int cmd_report(const fs::path& scorecard_path, const std::string& format, const std::string& out_path, std::ostream& out) {
    const auto card = doc::scorecard_from_json(doc::read_json_file(scorecard_path));
    const std::string text = format == "csv" ? doc::scorecard_csv(card) : doc::to_json(card).dump(2) + "\n";
    if (out_path.empty()) {
        out << text;
    } else {
        doc::write_text_file(out_path, text);
    }
    return kOk;
}

// Config overrides collected from kebab-case flags.
struct OverrideFlags {
    std::string device_profile, device_endpoint, suite, output_dir;
    std::vector<std::string> cases;
    std::optional<double> ratio, n_sigma;
    std::optional<Nanos> min_duration_ns;
    std::optional<std::size_t> probe_reps, confirm_reps, repetitions, min_retained;
    std::optional<int> loop_p2;
    std::optional<std::uint64_t> rng_seed;

    void attach(CLI::App* cmd) {
        cmd->add_option("--device-profile", device_profile, "Simulated device profile (in-process channel)");
        cmd->add_option("--device-endpoint", device_endpoint, "host:port of a serving device");
        cmd->add_option("--suite", suite, "Suite document");
        cmd->add_option("--output-dir", output_dir, "Directory for results.json and samples.csv");
        cmd->add_option("--cases", cases, "Cases to measure (default: all)");
        cmd->add_option("--ratio", ratio, "Upper bound on sigma/mean");
        cmd->add_option("--min-duration-ns", min_duration_ns, "Minimum mean exchange duration");
        cmd->add_option("--probe-reps", probe_reps);
        cmd->add_option("--confirm-reps", confirm_reps);
        cmd->add_option("--repetitions", repetitions, "Measurements per case");
        cmd->add_option("--loop-p2", loop_p2, "Fixed P2 (skips calibration)");
        cmd->add_option("--n-sigma", n_sigma, "Filter half-width in standard deviations");
        cmd->add_option("--min-retained", min_retained);
        cmd->add_option("--rng-seed", rng_seed, "Seed for simulated noise");
    }

    [[nodiscard]] json to_json() const {
        json j = json::object();
        auto path = [](const std::string& p) { return fs::absolute(p).string(); };
        if (!device_profile.empty()) j["device_profile"] = path(device_profile);
        if (!device_endpoint.empty()) j["device_endpoint"] = device_endpoint;
        if (!suite.empty()) j["suite"] = path(suite);
        if (!output_dir.empty()) j["output_dir"] = path(output_dir);
        if (!cases.empty()) j["cases"] = cases;
        if (ratio) j["ratio"] = *ratio;
        if (min_duration_ns) j["min_duration_ns"] = *min_duration_ns;
        if (probe_reps) j["probe_reps"] = *probe_reps;
        if (confirm_reps) j["confirm_reps"] = *confirm_reps;
        if (repetitions) j["repetitions"] = *repetitions;
        if (loop_p2) j["loop_p2"] = *loop_p2;
        if (n_sigma) j["n_sigma"] = *n_sigma;
        if (min_retained) j["min_retained"] = *min_retained;
        if (rng_seed) j["rng_seed"] = *rng_seed;
        return j;
    }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    init_logging();

    CLI::App app{"Benchmark harness for devices reachable through a request/response channel", "mesure"};
    app.require_subcommand(1);

    std::string profile_path, suite_path, listen = "127.0.0.1:7816";
    auto* serve = app.add_subcommand("serve", "Serve a simulated device over TCP");
    serve->add_option("--profile", profile_path, "Device profile document")->required();
    serve->add_option("--suite", suite_path, "Suite document")->required();
    serve->add_option("--listen", listen, "host:port to listen on");

    std::string config_path;
    OverrideFlags overrides;
    auto* calibrate_cmd = app.add_subcommand("calibrate", "Find loop sizes meeting the precision policy");
    calibrate_cmd->add_option("config", config_path, "Campaign config")->required();
    overrides.attach(calibrate_cmd);
    auto* bench = app.add_subcommand("bench", "Calibrate, measure, filter and isolate every case");
    bench->add_option("config", config_path, "Campaign config")->required();
    overrides.attach(bench);

    std::string traces_dir, profile_out = ".";
    auto* profile_cmd = app.add_subcommand("profile", "Derive domain weights from trace directories");
    profile_cmd->add_option("traces_dir", traces_dir, "One subdirectory of traces per domain")->required();
    profile_cmd->add_option("--out-dir", profile_out, "Where weights_<domain>.json are written");

    ScoreArgs score_args;
    std::vector<std::string> isolated, weights;
    std::string reference, score_out = ".";
    auto* score_cmd = app.add_subcommand("score", "Compute marks and domain scores");
    score_cmd->add_option("--isolated", isolated, "Results or isolated-times documents, one per card")->required();
    score_cmd->add_option("--reference", reference, "Reference base document")->required();
    score_cmd->add_option("--weights", weights, "Domain weight documents")->required();
    score_cmd->add_option("--out-dir", score_out, "Where scorecard_<card>.json are written");
    score_cmd->add_flag("--write-reference", score_args.write_reference, "Build the reference base from the isolated documents");
    score_cmd->add_flag("--geometric", score_args.geometric, "Aggregate the reference base with a geometric mean");

    std::string scorecard_path, format = "json", report_out;
    auto* report_cmd = app.add_subcommand("report", "Render a scorecard");
    report_cmd->add_option("scorecard", scorecard_path, "Scorecard document")->required();
    report_cmd->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
    report_cmd->add_option("--out", report_out, "Output file (default stdout)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsageFailure;
    }

    auto* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();

    // Usage/config failures exit 2, pipeline failures exit 1.
    auto is_config_error = [](ErrorKind k) {
        return k == ErrorKind::ConfigError || k == ErrorKind::ProfileParseError || k == ErrorKind::ProfileInvariantError ||
               k == ErrorKind::InvalidSuite || k == ErrorKind::BindError;
    };
    try {
        if (cmd == serve) return cmd_serve(profile_path, suite_path, listen, out);
        if (cmd == calibrate_cmd || cmd == bench) {
            const auto cfg = load_config(config_path, overrides.to_json());
            return cmd == bench ? cmd_bench(cfg, out) : cmd_calibrate(cfg, out);
        }
        if (cmd == profile_cmd) return cmd_profile(traces_dir, profile_out, out);
        if (cmd == score_cmd) {
            score_args.isolated.assign(isolated.begin(), isolated.end());
            score_args.weights.assign(weights.begin(), weights.end());
            score_args.reference = reference;
            score_args.out_dir = score_out;
            return cmd_score(score_args, out);
        }
        if (cmd == report_cmd) return cmd_report(scorecard_path, format, report_out, out);
    } catch (const StageError& e) {
        err << fmt::format("mesure {}: {} stage: {}\n", name, e.stage, e.message);
        return kRuntimeFailure;
    } catch (const Error& e) {
        err << fmt::format("mesure {}: {}\n", name, e.what());
        return is_config_error(e.kind()) ? kUsageFailure : kRuntimeFailure;
    } catch (const std::exception& e) {
        err << fmt::format("mesure {}: {}\n", name, e.what());
        return kRuntimeFailure;
    }
    return kUsageFailure;
}

}  // namespace mesure::cli
