#include "mesure/card_sim.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "mesure/error.hpp"

namespace mesure::sim {

void validate(const NoiseModel& model) {
    auto fail = [](const std::string& why) { throw Error(ErrorKind::ProfileInvariantError, why); };
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, GaussianNoise>) {
                if (!(m.sigma >= 0.0) || !std::isfinite(m.sigma)) fail("gaussian sigma must be finite and >= 0");
            } else if constexpr (std::is_same_v<T, SteppedNoise>) {
                if (!(m.step > 0.0) || !std::isfinite(m.step)) fail("stepped step must be > 0");
                if (!(m.jitter_sigma >= 0.0) || !std::isfinite(m.jitter_sigma)) fail("stepped jitter_sigma must be >= 0");
                if (m.weights.empty()) fail("stepped weights must not be empty");
                for (double w : m.weights) {
                    if (!(w >= 0.0) || !std::isfinite(w)) fail("stepped weights must be >= 0");
                }
                const double total = std::accumulate(m.weights.begin(), m.weights.end(), 0.0);
                if (std::abs(total - 1.0) > 1e-12) fail(fmt::format("stepped weights sum to {}, expected 1", total));
            }
        },
        model);
}

double sample_noise(const NoiseModel& model, std::mt19937_64& rng) {
    return std::visit(
        [&](const auto& m) -> double {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, NoNoise>) {
                return 0.0;
            } else if constexpr (std::is_same_v<T, GaussianNoise>) {
                if (m.sigma == 0.0) return 0.0;
                return std::normal_distribution<double>(0.0, m.sigma)(rng);
            } else {
                std::discrete_distribution<std::size_t> pick(m.weights.begin(), m.weights.end());
                const double stepped = m.step * static_cast<double>(pick(rng));
                if (m.jitter_sigma == 0.0) return stepped;
                return stepped + std::max(0.0, std::normal_distribution<double>(0.0, m.jitter_sigma)(rng));
            }
        },
        model);
}

namespace {

[[noreturn]] void parse_fail(const std::string& where, const std::string& why) {
    throw Error(ErrorKind::ProfileParseError, fmt::format("at {}: {}", where, why));
}

void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) parse_fail(where, "expected an object");
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.contains(key)) parse_fail(where, fmt::format("unknown key '{}'", key));
    }
}

const nlohmann::json& require(const nlohmann::json& obj, const std::string& key, const std::string& where) {
    if (!obj.contains(key)) parse_fail(where, fmt::format("missing key '{}'", key));
    return obj.at(key);
}

Nanos read_nanos(const nlohmann::json& v, const std::string& where) {
    if (!v.is_number_integer()) parse_fail(where, "expected an integer number of nanoseconds");
    if (v.is_number_unsigned()) return v.get<Nanos>();
    const auto signed_value = v.get<std::int64_t>();
    if (signed_value < 0) throw Error(ErrorKind::ProfileInvariantError, fmt::format("{} is negative ({})", where, signed_value));
    return static_cast<Nanos>(signed_value);
}

double read_real(const nlohmann::json& v, const std::string& where) {
    if (!v.is_number()) parse_fail(where, "expected a number");
    return v.get<double>();
}

NoiseModel noise_from_json(const nlohmann::json& j) {
    const auto& variant = require(j, "variant", "noise");
    if (!variant.is_string()) parse_fail("noise.variant", "expected a string");
    const auto name = variant.get<std::string>();
    NoiseModel model;
    if (name == "none") {
        reject_unknown(j, {"variant"}, "noise");
        model = NoNoise{};
    } else if (name == "gaussian") {
        reject_unknown(j, {"variant", "sigma"}, "noise");
        model = GaussianNoise{.sigma = read_real(require(j, "sigma", "noise"), "noise.sigma")};
    } else if (name == "stepped") {
        reject_unknown(j, {"variant", "step", "weights", "jitter_sigma"}, "noise");
        SteppedNoise s;
        s.step = read_real(require(j, "step", "noise"), "noise.step");
        const auto& w = require(j, "weights", "noise");
        if (!w.is_array()) parse_fail("noise.weights", "expected a list");
        for (std::size_t i = 0; i < w.size(); ++i) s.weights.push_back(read_real(w[i], fmt::format("noise.weights[{}]", i)));
        s.jitter_sigma = j.contains("jitter_sigma") ? read_real(j.at("jitter_sigma"), "noise.jitter_sigma") : 0.0;
        model = std::move(s);
    } else {
        parse_fail("noise.variant", fmt::format("unknown variant '{}'", name));
    }
    validate(model);
    return model;
}

nlohmann::json noise_to_json(const NoiseModel& model) {
    return std::visit(
        [](const auto& m) -> nlohmann::json {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, NoNoise>) {
                return {{"variant", "none"}};
            } else if constexpr (std::is_same_v<T, GaussianNoise>) {
                return {{"variant", "gaussian"}, {"sigma", m.sigma}};
            } else {
                return {{"variant", "stepped"}, {"step", m.step}, {"weights", m.weights}, {"jitter_sigma", m.jitter_sigma}};
            }
        },
        model);
}

}  // namespace

DeviceProfile load_profile(std::string_view json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        parse_fail(fmt::format("byte {}", e.byte), e.what());
    }
    reject_unknown(doc, {"name", "exchange_overhead_ns", "per_iteration_overhead_ns", "rng_seed", "op_latencies_ns", "noise"},
                   "profile");

    DeviceProfile p;
    const auto& name = require(doc, "name", "profile");
    if (!name.is_string()) parse_fail("name", "expected a string");
    p.name = name.get<std::string>();
    p.exchange_overhead = read_nanos(require(doc, "exchange_overhead_ns", "profile"), "exchange_overhead_ns");
    p.per_iteration_overhead = read_nanos(require(doc, "per_iteration_overhead_ns", "profile"), "per_iteration_overhead_ns");
    const auto& seed = require(doc, "rng_seed", "profile");
    if (!seed.is_number_unsigned()) parse_fail("rng_seed", "expected a non-negative integer");
    p.rng_seed = seed.get<std::uint64_t>();

    const auto& ops = require(doc, "op_latencies_ns", "profile");
    if (!ops.is_object()) parse_fail("op_latencies_ns", "expected an object");
    for (const auto& [feature, latency] : ops.items()) {
        p.op_latencies[feature] = read_nanos(latency, fmt::format("op_latencies_ns.{}", feature));
    }
    p.noise = noise_from_json(require(doc, "noise", "profile"));
    return p;
}

DeviceProfile load_profile_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::ConfigError, fmt::format("cannot open profile '{}'", path.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    return load_profile(buf.str());
}

nlohmann::json profile_to_json(const DeviceProfile& profile) {
    nlohmann::json ops = nlohmann::json::object();
    for (const auto& [feature, latency] : profile.op_latencies) ops[feature] = latency;
    return {{"name", profile.name},
            {"exchange_overhead_ns", profile.exchange_overhead},
            {"per_iteration_overhead_ns", profile.per_iteration_overhead},
            {"rng_seed", profile.rng_seed},
            {"op_latencies_ns", ops},
            {"noise", noise_to_json(profile.noise)}};
}

AppletSuite::AppletSuite(const Suite& suite) {
    bool has_reference = false;
    for (const auto& c : suite.cases()) {
        has_reference = has_reference || c.is_reference();
        entries_.emplace(c.ins, AppletEntry{.spec = c, .run_body = c.run_body()});
    }
    if (!has_reference) throw Error(ErrorKind::InvalidSuite, "applet suite needs an empty-loop case");
}

const AppletEntry* AppletSuite::find(std::uint8_t ins) const noexcept {
    auto it = entries_.find(ins);
    return it == entries_.end() ? nullptr : &it->second;
}

Device::Device(DeviceProfile profile, AppletSuite suite)
    : profile_(std::move(profile)), suite_(std::move(suite)), rng_(profile_.rng_seed) {
    validate(profile_.noise);
    for (const auto& [ins, entry] : suite_.entries()) {
        Nanos cost = 0;
        for (const auto& op : entry.run_body) {
            auto it = profile_.op_latencies.find(op);
            if (it == profile_.op_latencies.end()) {
                throw Error(ErrorKind::ProfileInvariantError,
                            fmt::format("case '{}' executes '{}', which has no latency in profile '{}'", entry.spec.id, op,
                                        profile_.name));
            }
            cost += it->second;
        }
        body_cost_[ins] = cost;
    }
}

Nanos Device::nominal_run_duration(std::uint8_t ins, std::uint64_t l) const {
    return profile_.exchange_overhead + l * (profile_.per_iteration_overhead + body_cost_.at(ins));
}

DeviceReply Device::handle_apdu(const ApduCommand& command) {
    DeviceReply reply{.response = {.data = {}, .sw = kSwSuccess}, .duration = profile_.exchange_overhead};
    if (suite_.find(command.ins) == nullptr) {
        reply.response.sw = kSwInsNotSupported;
        return reply;
    }
    if (command.p2 == 0 || command.p1 > static_cast<std::uint8_t>(Phase::CleanUp)) {
        reply.response.sw = kSwIncorrectP1P2;
        return reply;
    }
    if (static_cast<Phase>(command.p1) != Phase::Run) return reply;

    const std::uint64_t l = static_cast<std::uint64_t>(command.p2) * command.p2;
    Nanos iteration_work = 0;
    Nanos base = 0;
    if (__builtin_mul_overflow(l, profile_.per_iteration_overhead + body_cost_.at(command.ins), &iteration_work) ||
        __builtin_add_overflow(iteration_work, profile_.exchange_overhead, &base)) {
        reply.response.sw = kSwInternalFault;
        return reply;
    }
    const double total = static_cast<double>(base) + sample_noise(profile_.noise, rng_);
    reply.duration = total <= 0.0 ? 0 : static_cast<Nanos>(std::llround(total));
    return reply;
}

}  // namespace mesure::sim
