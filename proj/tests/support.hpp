#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mesure/error.hpp"
#include "mesure/stats.hpp"

namespace testing {

// Kind of the mesure::Error thrown by f, or nullopt when nothing is thrown.
template <typename F>
std::optional<mesure::ErrorKind> error_kind(F&& f) {
    try {
        f();
    } catch (const mesure::Error& e) {
        return e.kind();
    }
    return std::nullopt;
}

template <typename F>
std::string error_text(F&& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

inline const std::filesystem::path kDataDir{MESURE_DATA_DIR};
inline const std::filesystem::path kTestDataDir{MESURE_TEST_DATA_DIR};

inline mesure::MeasurementSet make_set(const std::vector<mesure::Nanos>& durations, std::uint32_t loop = 1,
                                       std::string id = "op") {
    std::vector<mesure::RawSample> samples;
    for (std::size_t i = 0; i < durations.size(); ++i) {
        samples.push_back({.duration = durations[i], .sequence_index = static_cast<std::uint32_t>(i), .wall_time = i * 10});
    }
    return mesure::MeasurementSet(std::move(id), loop, std::move(samples));
}

inline std::vector<double> normal_draws(std::size_t n, double mu, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(mu, sigma);
    std::vector<double> out(n);
    for (auto& x : out) x = d(rng);
    return out;
}

// Two-pass textbook formulas, kept separate from the library's integer accumulation.
inline double naive_mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double naive_sd(const std::vector<double>& v) {
    const double m = naive_mean(v);
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
    std::ifstream in(p);
    return nlohmann::json::parse(in);
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Fresh directory under the system temp dir, removed by the destructor.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("mesure_" + tag + "_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

}  // namespace testing
