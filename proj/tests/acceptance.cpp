// One PASS/FAIL line per acceptance criterion; exit status is the failure count.

#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include <fmt/core.h>

#include "mesure/analysis.hpp"
#include "mesure/apdu.hpp"
#include "mesure/cli.hpp"
#include "mesure/documents.hpp"
#include "mesure/transport.hpp"
#include "support.hpp"

using namespace mesure;
using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
    bool pass;
    std::string detail;
};

Suite demo_suite() { return load_suite_file(testing::kDataDir / "demo_suite.json"); }
sim::DeviceProfile demo_profile() { return sim::load_profile_file(testing::kDataDir / "demo_profile.json"); }
VirtualChannel channel_for(sim::DeviceProfile p, const Suite& s) { return VirtualChannel(sim::Device(std::move(p), sim::AppletSuite(s))); }

OpDependencyGraph graph_of(const Suite& suite, const std::map<std::string, CaseMeasurements>& measured) {
    OpDependencyGraph g;
    for (const auto& [id, _] : measured) g.add_node(id, suite.at(id).auxiliaries);
    return g;
}

int cli_quiet(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    if (code != 0) std::cerr << err.str();
    return code;
}

const CalibrationPolicy kDemoPolicy{.ratio = 0.02, .min_duration = 100'000'000, .probe_reps = 10, .confirm_reps = 30};

Verdict exact_recovery() {
    const auto start = Clock::now();
    const auto suite = demo_suite();
    const auto profile = demo_profile();
    auto ch = channel_for(profile, suite);
    const auto measured = run_suite(ch, suite, {}, kDemoPolicy);
    const auto iso = isolate_all(measured, graph_of(suite, measured), {});
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    double worst = 0;
    for (const auto& [id, truth] : profile.op_latencies) {
        const double t = static_cast<double>(truth);
        worst = std::max(worst, std::abs(iso.at(id).mean - t) / t);
    }
    return {worst <= 1e-9 && secs < 5.0, fmt::format("max relative error {:.3g}, {:.2f} s", worst, secs)};
}

Verdict noisy_recovery() {
    const auto start = Clock::now();
    const auto suite = demo_suite();
    const std::vector<std::string> want{"sadd"};
    // sigma is 5% of the noise-free empty-loop exchange at the loop size calibrated for sadd
    auto quiet = channel_for(demo_profile(), suite);
    const auto loop = calibrate(quiet, suite.at("sadd"), kDemoPolicy);
    const auto p = demo_profile();
    const double sigma = 0.05 * static_cast<double>(p.exchange_overhead + loop.l() * p.per_iteration_overhead);

    int within = 0;
    for (int seed = 0; seed < 100; ++seed) {
        auto noisy = demo_profile();
        noisy.noise = sim::GaussianNoise{.sigma = sigma};
        noisy.rng_seed = static_cast<std::uint64_t>(seed);
        auto ch = channel_for(noisy, suite);
        const auto measured = run_suite(ch, suite, want, kDemoPolicy);
        const auto iso = isolate_all(measured, graph_of(suite, measured), {});
        if (relative_deviation(iso.at("sadd").mean, 10'000.0) <= 0.05) ++within;
    }
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    return {within >= 95 && secs < 120.0, fmt::format("{}/100 seeds within 5% (sigma {:.0f} ns, P2 {}), {:.2f} s", within, sigma, loop.p2(), secs)};
}

Verdict normality_findings() {
    const auto suite = demo_suite();
    double stepped_max = 0, gaussian_min = 1;
    for (int seed = 0; seed < 10; ++seed) {
        for (const bool stepped : {true, false}) {
            auto p = sim::load_profile_file(testing::kDataDir / (stepped ? "demo_profile_stepped.json" : "demo_profile_noisy.json"));
            p.rng_seed = static_cast<std::uint64_t>(1000 + seed);
            auto ch = channel_for(p, suite);
            const auto set = run_bench(ch, suite.at("sadd"), {.repetitions = 1000, .loop_size = LoopSize(41)});
            const double w = stats::shapiro_wilk(set.durations()).w_statistic;
            if (stepped) {
                stepped_max = std::max(stepped_max, w);
            } else {
                gaussian_min = std::min(gaussian_min, w);
            }
        }
    }
    return {stepped_max < 0.9 && gaussian_min >= 0.9, fmt::format("stepped max W {:.4f}, gaussian min W {:.4f}", stepped_max, gaussian_min)};
}

Verdict shapiro_oracle() {
    const auto doc = testing::read_json(testing::kTestDataDir / "shapiro_reference.json");
    double worst = 0;
    std::size_t n = 0;
    for (const auto& ds : doc.at("datasets")) {
        const auto data = ds.at("data").get<std::vector<double>>();
        worst = std::max(worst, std::abs(stats::shapiro_wilk(data).w_statistic - ds.at("w_ref").get<double>()));
        ++n;
    }
    return {n >= 20 && worst <= 5e-3, fmt::format("{} datasets, max |W - W_ref| {:.2e}", n, worst)};
}

Verdict filter_retention() {
    const auto v = testing::normal_draws(10'000, 5e6, 2e4, 314);
    std::vector<Nanos> d;
    for (double x : v) d.push_back(static_cast<Nanos>(std::llround(x)));
    const auto set = testing::make_set(d);
    const double expected[] = {68.3, 95.4, 99.7};
    bool ok = true;
    std::string detail;
    for (int k = 1; k <= 3; ++k) {
        const auto kept = filter_confidence(set, {.n_sigma = static_cast<double>(k), .min_retained = 2}).size();
        const double pct = 100.0 * static_cast<double>(kept) / 10'000.0;
        ok = ok && std::abs(pct - expected[k - 1]) <= 2.0;
        detail += fmt::format("{}{}sigma {:.2f}%", detail.empty() ? "" : ", ", k, pct);
    }
    return {ok, detail};
}

Verdict calibration_contract() {
    const auto suite = demo_suite();
    const auto& sadd = suite.at("sadd");
    const CalibrationPolicy policy{.ratio = 0.02, .min_duration = 1'000'000'000, .probe_reps = 10, .confirm_reps = 30};
    auto quiet = channel_for(demo_profile(), suite);
    const auto base = calibrate(quiet, sadd, policy);
    const auto p = demo_profile();
    const double sigma = 0.02 * static_cast<double>(p.exchange_overhead + base.l() * p.per_iteration_overhead);

    int ok = 0;
    for (int seed = 0; seed < 100; ++seed) {
        auto noisy = demo_profile();
        noisy.noise = sim::GaussianNoise{.sigma = sigma};
        noisy.rng_seed = static_cast<std::uint64_t>(seed);
        auto ch = channel_for(noisy, suite);
        const auto loop = calibrate(ch, sadd, policy);
        if (meets_policy(measure(ch, sadd, loop, policy.confirm_reps), policy)) ++ok;
    }

    int failed = 0;
    for (int attempt = 0; attempt < 2; ++attempt) {
        sim::DeviceProfile slow{.name = "slow", .op_latencies = {{"sspush", 0}, {"sadd", 0}, {"arrayCopy", 0}}, .exchange_overhead = 1'000'000,
                                .per_iteration_overhead = 10, .noise = sim::NoNoise{}, .rng_seed = 1};
        auto ch = channel_for(slow, suite);
        try {
            (void)calibrate(ch, suite.at("Emptyloop"), policy);
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::CalibrationFailed) ++failed;
        }
    }
    return {ok >= 95 && failed == 2, fmt::format("{}/100 seeds re-verify (P2 {} noise-free), 10 ns/iteration failed {}/2", ok, base.p2(), failed)};
}

Verdict scoring_algebra() {
    testing::TempDir dir("accept_score");
    const auto& d = dir.path;

    // worked example from files
    doc::write_json_file(d / "w.json", doc::to_json(profiler::DomainWeights{.domain = "banking", .alpha = {{"a", 0.75}, {"b", 0.25}}, .feature_count = 2}));
    doc::write_json_file(d / "ref.json", doc::to_json(profiler::ReferenceBase{.r = {{"a", 12'000}, {"b", 4'000}}, .source_card_count = 1}));
    doc::write_json_file(d / "x.json", {{"schema_version", doc::kSchemaVersion},
                                        {"card", "worked"},
                                        {"isolated", {{"a", {{"mean_ns", 10'000}}}, {"b", {{"mean_ns", 5'000}}}}}});
    if (cli_quiet({"score", "--isolated", (d / "x.json").string(), "--reference", (d / "ref.json").string(), "--weights",
                   (d / "w.json").string(), "--out-dir", (d / "worked").string()}) != 0) {
        return {false, "score command failed"};
    }
    const auto worked = doc::scorecard_from_json(doc::read_json_file(d / "worked" / "scorecard_worked.json"));
    const double p = worked.domain_marks.at("banking");

    // identical card against a reference built from it
    json cfg = doc::read_json_file(testing::kDataDir / "demo_config.json");
    cfg["device_profile"] = (testing::kDataDir / "demo_profile.json").string();
    cfg["suite"] = (testing::kDataDir / "demo_suite.json").string();
    cfg["output_dir"] = (d / "bench").string();
    doc::write_json_file(d / "cfg.json", cfg);
    if (cli_quiet({"bench", (d / "cfg.json").string()}) != 0) return {false, "bench failed"};
    if (cli_quiet({"profile", (testing::kDataDir / "traces").string(), "--out-dir", (d / "weights").string()}) != 0) {
        return {false, "profile failed"};
    }
    std::vector<std::string> score_args{"score", "--isolated", (d / "bench" / "results.json").string(), "--reference",
                                        (d / "self_ref.json").string(), "--out-dir", (d / "self").string(), "--write-reference", "--weights"};
    double worst_sum = 0;
    std::size_t weight_docs = 0;
    for (const auto& entry : fs::directory_iterator(d / "weights")) {
        if (entry.path().extension() != ".json") continue;
        score_args.push_back(entry.path().string());
        double total = 0;
        for (const auto& [f, a] : doc::weights_from_json(doc::read_json_file(entry.path())).alpha) total += a;
        worst_sum = std::max(worst_sum, std::abs(total - 1.0));
        ++weight_docs;
    }
    if (cli_quiet(score_args) != 0) return {false, "identity score failed"};
    const auto self = doc::scorecard_from_json(doc::read_json_file(d / "self" / "scorecard_demo-card.json"));

    const bool ok = std::abs(p - 1.1) <= 1e-12 && std::abs(self.overall - 1.0) <= 1e-9 && weight_docs >= 2 && worst_sum <= 1e-12;
    return {ok, fmt::format("P = {:.12f}, identity overall = {:.12f}, {} weight docs max |sum alpha - 1| {:.1e}", p, self.overall,
                            weight_docs, worst_sum)};
}

Verdict protocol_robustness() {
    std::mt19937_64 rng(0xACCE);
    std::uniform_int_distribution<int> byte(0, 255);
    std::size_t failures = 0;
    for (int i = 0; i < 100'000; ++i) {
        ApduCommand c{.cla = static_cast<std::uint8_t>(byte(rng)),
                      .ins = static_cast<std::uint8_t>(byte(rng)),
                      .p1 = static_cast<std::uint8_t>(byte(rng)),
                      .p2 = static_cast<std::uint8_t>(byte(rng)),
                      .data = {}};
        c.data.resize(static_cast<std::size_t>(byte(rng)));
        for (auto& b : c.data) b = static_cast<std::uint8_t>(byte(rng));
        if (decode_command(encode_command(c)) != c) ++failures;
        ApduResponse r{.data = c.data, .sw = static_cast<std::uint16_t>(byte(rng) << 8 | byte(rng))};
        if (decode_response(encode_response(r)) != r) ++failures;
    }

    auto profile = demo_profile();
    profile.exchange_overhead = 20'000'000;
    ApduServer server(sim::Device(profile, sim::AppletSuite(demo_suite())));
    server.bind("127.0.0.1:0");
    server.start();
    const std::string ep = "127.0.0.1:" + std::to_string(server.port());
    const ApduCommand empty{.cla = kBenchCla, .ins = 0x10, .p1 = 0x01, .p2 = 1, .data = {}};

    // malformed frames: short APDU, oversized prefix, Lc mismatch, truncated frame
    const std::vector<Bytes> junk{{0x00, 0x02, 0x80, 0x01}, {0xFF, 0xFF}, {0x00, 0x06, 0x80, 0x10, 0x01, 0x01, 0x05, 0xAA}, {0x00, 0x10, 0x80}};
    for (const auto& frame : junk) {
        const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(server.port());
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0) {
            (void)::send(fd, frame.data(), frame.size(), MSG_NOSIGNAL);
        }
        ::close(fd);
    }
    bool survived = false;
    try {
        survived = TcpChannel::connect(ep)->exchange(empty).response.ok();
    } catch (const Error&) {
    }

    constexpr int kPerClient = 5;
    std::vector<Clock::time_point> ends;
    std::mutex m;
    std::atomic<int> ok_replies = 0;
    auto client = [&] {
        auto ch = TcpChannel::connect(ep);
        for (int i = 0; i < kPerClient; ++i) {
            if (ch->exchange(empty).response.ok()) ++ok_replies;
            std::lock_guard lock(m);
            ends.push_back(Clock::now());
        }
    };
    const auto begin = Clock::now();
    std::thread a(client), b(client);
    a.join();
    b.join();
    const auto total = Clock::now() - begin;
    server.stop();

    std::ranges::sort(ends);
    auto min_gap = std::chrono::nanoseconds::max();
    for (std::size_t i = 1; i < ends.size(); ++i) min_gap = std::min(min_gap, std::chrono::nanoseconds(ends[i] - ends[i - 1]));
    const bool serialized = total >= std::chrono::nanoseconds(2 * kPerClient * 20'000'500LL) && min_gap >= std::chrono::milliseconds(19);
    const bool ok = failures == 0 && survived && ok_replies == 2 * kPerClient && serialized;
    return {ok, fmt::format("{} fuzz failures, server {} malformed frames, {} replies, min reply gap {:.1f} ms", failures,
                            survived ? "survived" : "did not survive", ok_replies.load(),
                            std::chrono::duration<double, std::milli>(min_gap).count())};
}

Verdict determinism() {
    testing::TempDir dir("accept_det");
    json cfg = doc::read_json_file(testing::kDataDir / "demo_config.json");
    cfg["device_profile"] = (testing::kDataDir / "demo_profile_noisy.json").string();
    cfg["suite"] = (testing::kDataDir / "demo_suite.json").string();
    cfg["output_dir"] = (dir.path / "out").string();
    doc::write_json_file(dir.path / "cfg.json", cfg);
    std::string first;
    for (int run = 0; run < 2; ++run) {
        if (cli_quiet({"bench", (dir.path / "cfg.json").string()}) != 0) return {false, "bench failed"};
        const auto bytes = testing::read_text(dir.path / "out" / "results.json");
        if (run == 0) {
            first = bytes;
        } else {
            return {bytes == first, fmt::format("{} bytes, {}", bytes.size(), bytes == first ? "identical" : "different")};
        }
    }
    return {false, "unreachable"};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"exact recovery, noise-free virtual channel", exact_recovery},
        {"noisy recovery, 5% gaussian", noisy_recovery},
        {"normality findings, stepped vs gaussian", normality_findings},
        {"shapiro-wilk oracle equivalence", shapiro_oracle},
        {"filter retention", filter_retention},
        {"calibration contract", calibration_contract},
        {"scoring algebra from files", scoring_algebra},
        {"protocol robustness", protocol_robustness},
        {"bench determinism", determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto start = Clock::now();
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, fmt::format("threw {}", e.what())};
        }
        const double secs = std::chrono::duration<double>(Clock::now() - start).count();
        failed += v.pass ? 0 : 1;
        std::cout << fmt::format("criterion {}: {} {} ({}; {:.2f} s)\n", i + 1, v.pass ? "PASS" : "FAIL", criteria[i].first, v.detail, secs)
                  << std::flush;
    }
    return failed;
}
