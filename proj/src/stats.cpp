#include "mesure/stats.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mesure/error.hpp"

namespace mesure {

MeasurementSet::MeasurementSet(std::string test_id, std::uint32_t loop_size)
    : test_id_(std::move(test_id)), loop_size_(loop_size) {}

MeasurementSet::MeasurementSet(std::string test_id, std::uint32_t loop_size, std::vector<RawSample> samples)
    : test_id_(std::move(test_id)), loop_size_(loop_size), samples_(std::move(samples)) {
    std::vector<std::uint32_t> seen;
    seen.reserve(samples_.size());
    for (const auto& s : samples_) seen.push_back(s.sequence_index);
    std::ranges::sort(seen);
    if (std::ranges::adjacent_find(seen) != seen.end()) {
        throw Error(ErrorKind::DocumentError, fmt::format("duplicate sequence_index in set '{}'", test_id_));
    }
    recompute();
}

const MeasurementStats& MeasurementSet::stats() const {
    if (samples_.empty()) throw Error(ErrorKind::EmptySet, fmt::format("set '{}' has no samples", test_id_));
    return stats_;
}

std::vector<double> MeasurementSet::durations() const {
    std::vector<double> out;
    out.reserve(samples_.size());
    for (const auto& s : samples_) out.push_back(static_cast<double>(s.duration));
    return out;
}

void MeasurementSet::add(RawSample sample) {
    for (const auto& s : samples_) {
        if (s.sequence_index == sample.sequence_index) {
            throw Error(ErrorKind::DocumentError,
                        fmt::format("sequence_index {} already present in set '{}'", sample.sequence_index, test_id_));
        }
    }
    samples_.push_back(sample);
    recompute();
}

void MeasurementSet::recompute() {
    stats_ = {};
    stats_.count = samples_.size();
    if (samples_.empty()) return;
    // Integer sums are exact, which keeps constant-shift properties tight.
    unsigned __int128 sum = 0;
    for (const auto& s : samples_) sum += s.duration;
    const auto n = static_cast<double>(samples_.size());
    stats_.mean = static_cast<double>(sum) / n;
    if (samples_.size() >= 2) {
        double ss = 0.0;
        for (const auto& s : samples_) {
            const double d = static_cast<double>(s.duration) - stats_.mean;
            ss += d * d;
        }
        stats_.std_dev = std::sqrt(ss / (n - 1.0));
    }
}

namespace stats {

double mean(std::span<const double> values) {
    if (values.empty()) throw Error(ErrorKind::EmptySet, "mean of an empty sample");
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double std_dev(std::span<const double> values) {
    if (values.size() < 2) {
        throw Error(ErrorKind::InsufficientSamples,
                    fmt::format("standard deviation needs at least 2 samples, got {}", values.size()));
    }
    const double mu = mean(values);
    double ss = 0.0;
    for (double v : values) ss += (v - mu) * (v - mu);
    return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

double mean(const MeasurementSet& set) { return set.stats().mean; }

double std_dev(const MeasurementSet& set) {
    if (set.size() < 2) {
        throw Error(ErrorKind::InsufficientSamples,
                    fmt::format("set '{}' has {} sample(s), need 2", set.test_id(), set.size()));
    }
    return set.stats().std_dev;
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::DocumentError, "normal quantile needs 0 < p < 1");

    const double q = p - 0.5;
    if (std::abs(q) <= 0.425) {
        const double r = 0.180625 - q * q;
        return q *
               (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r + 6.7265770927008700853e+4) * r +
                    4.5921953931549871457e+4) * r + 1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
                 1.3314166789178437745e+2) * r + 3.3871328727963666080e0) /
               (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r + 3.9307895800092710610e+4) * r +
                    2.1213794301586595867e+4) * r + 5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
                 4.2313330701600911252e+1) * r + 1.0);
    }
    double r = q < 0.0 ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double val;
    if (r <= 5.0) {
        r -= 1.6;
        val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r + 2.41780725177450611770e-1) * r +
                   1.27045825245236838258e0) * r + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
                4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
              (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r + 1.51986665636164571966e-2) * r +
                   1.48103976427480074590e-1) * r + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
                2.05319162663775882187e0) * r + 1.0);
    } else {
        r -= 5.0;
        val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 1.24266094738807843860e-3) * r +
                   2.65321895265761230930e-2) * r + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
                5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
              (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r + 1.84631831751005468180e-5) * r +
                   7.86869131145613259100e-4) * r + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
                5.99832206555887937690e-1) * r + 1.0);
    }
    return q < 0.0 ? -val : val;
}

namespace {

double poly(std::span<const double> cc, double x) {
    double result = 0.0;
    for (auto it = cc.rbegin(); it != cc.rend(); ++it) result = result * x + *it;
    return result;
}

// Royston's approximation of the half vector of Shapiro-Wilk coefficients,
// a[0] paired with the extreme order statistics.
std::vector<double> royston_coefficients(std::size_t n) {
    const std::size_t half = n / 2;
    std::vector<double> a(half);
    if (n == 3) {
        a[0] = std::sqrt(0.5);
        return a;
    }
    constexpr std::array<double, 6> c1{0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056};
    constexpr std::array<double, 6> c2{0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};

    const double an25 = static_cast<double>(n) + 0.25;
    std::vector<double> m(half);
    double summ2 = 0.0;
    for (std::size_t i = 0; i < half; ++i) {
        m[i] = normal_quantile((static_cast<double>(i + 1) - 0.375) / an25);
        summ2 += m[i] * m[i];
    }
    summ2 *= 2.0;
    const double ssumm2 = std::sqrt(summ2);
    const double rsn = 1.0 / std::sqrt(static_cast<double>(n));
    const double a1 = poly(c1, rsn) - m[0] / ssumm2;

    std::size_t first_scaled;
    double fac;
    if (n > 5) {
        first_scaled = 2;
        const double a2 = -m[1] / ssumm2 + poly(c2, rsn);
        fac = std::sqrt((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
        a[1] = a2;
    } else {
        first_scaled = 1;
        fac = std::sqrt((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1));
    }
    a[0] = a1;
    for (std::size_t i = first_scaled; i < half; ++i) a[i] = -m[i] / fac;
    return a;
}

}  // namespace

NormalityReport shapiro_wilk(std::span<const double> values) {
    const std::size_t n = values.size();
    if (n < 3 || n > 5000) {
        throw Error(ErrorKind::SampleSizeOutOfRange, fmt::format("Shapiro-Wilk needs 3..5000 samples, got {}", n));
    }
    std::vector<double> x(values.begin(), values.end());
    std::ranges::sort(x);
    if (x.back() - x.front() <= 0.0) throw Error(ErrorKind::ZeroVariance, "all samples are identical");

    // Center and scale by the range so affine maps of the input give the same W.
    const double range = x.back() - x.front();
    const double mu = mean(x);
    for (double& v : x) v = (v - mu) / range;

    const auto a = royston_coefficients(n);
    double numerator = 0.0;
    double a_ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        numerator += a[i] * (x[n - 1 - i] - x[i]);
        a_ss += 2.0 * a[i] * a[i];
    }
    double ss = 0.0;
    for (double v : x) ss += v * v;

    double w = numerator * numerator / (a_ss * ss);
    w = std::min(w, 1.0);
    return {.w_statistic = w, .sample_count = n};
}

double freedman_diaconis_width(std::span<const double> values) {
    if (values.size() < 2) throw Error(ErrorKind::InsufficientSamples, "bin width needs at least 2 samples");
    std::vector<double> x(values.begin(), values.end());
    std::ranges::sort(x);
    auto quantile = [&](double p) {
        const double pos = p * static_cast<double>(x.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, x.size() - 1);
        return x[lo] + (pos - static_cast<double>(lo)) * (x[hi] - x[lo]);
    };
    const double iqr = quantile(0.75) - quantile(0.25);
    return 2.0 * iqr / std::cbrt(static_cast<double>(x.size()));
}

namespace {

struct Hill {
    std::size_t first = 0;  // bin range [first, last]
    std::size_t last = 0;
    std::size_t top = 0;  // bin holding the maximum
    std::size_t mass = 0;
};

}  // namespace

PeakReport detect_peaks(std::span<const double> values, const PeakOptions& options) {
    if (values.size() < 10) {
        throw Error(ErrorKind::InsufficientSamples, fmt::format("peak detection needs 10 samples, got {}", values.size()));
    }
    const auto [min_it, max_it] = std::ranges::minmax_element(values);
    const double lo = *min_it;
    const double span_width = *max_it - lo;

    double width = options.bin_width.value_or(0.0);
    if (!options.bin_width) {
        width = freedman_diaconis_width(values);
        if (width <= 0.0) width = span_width > 0.0 ? span_width / std::sqrt(static_cast<double>(values.size())) : 1.0;
    }
    if (!(width > 0.0)) throw Error(ErrorKind::DocumentError, "bin width must be positive");

    const auto bins = static_cast<std::size_t>(std::floor(span_width / width)) + 1;
    std::vector<std::size_t> counts(bins, 0);
    for (double v : values) {
        auto idx = static_cast<std::size_t>(std::floor((v - lo) / width));
        counts[std::min(idx, bins - 1)] += 1;
    }

    // Split the histogram into hills at the deepest bin between consecutive maxima.
    std::vector<std::size_t> tops;
    for (std::size_t i = 0; i < bins; ++i) {
        if (counts[i] == 0) continue;
        const bool rises = i == 0 || counts[i] > counts[i - 1];
        if (!rises) continue;
        std::size_t j = i;
        while (j + 1 < bins && counts[j + 1] == counts[i]) ++j;  // plateau
        const bool falls = j + 1 == bins || counts[j + 1] < counts[i];
        if (falls) tops.push_back(i + (j - i) / 2);
        i = j;
    }

    std::vector<Hill> hills;
    std::size_t start = 0;
    for (std::size_t k = 0; k < tops.size(); ++k) {
        std::size_t end = bins - 1;
        if (k + 1 < tops.size()) {
            end = tops[k];
            for (std::size_t b = tops[k]; b < tops[k + 1]; ++b) {
                if (counts[b] < counts[end]) end = b;
            }
        }
        Hill h{.first = start, .last = end, .top = tops[k], .mass = 0};
        for (std::size_t b = start; b <= end; ++b) h.mass += counts[b];
        hills.push_back(h);
        start = end + 1;
    }

    auto merge = [&](std::size_t left) {
        Hill& a = hills[left];
        const Hill& b = hills[left + 1];
        a.last = b.last;
        a.mass += b.mass;
        if (counts[b.top] > counts[a.top]) a.top = b.top;
        hills.erase(hills.begin() + static_cast<std::ptrdiff_t>(left) + 1);
    };

    // Valleys that are within counting noise of the lower neighbour do not separate peaks.
    for (bool merged = true; merged && hills.size() > 1;) {
        merged = false;
        for (std::size_t k = 0; k + 1 < hills.size(); ++k) {
            const auto lower = static_cast<double>(std::min(counts[hills[k].top], counts[hills[k + 1].top]));
            const auto valley = static_cast<double>(counts[hills[k].last]);
            if (lower - valley < 2.0 * std::sqrt(lower)) {
                merge(k);
                merged = true;
                break;
            }
        }
    }

    // Fold hills below the mass threshold into the neighbour across the shallower valley.
    const double min_mass = options.mass_threshold * static_cast<double>(values.size());
    while (hills.size() > 1) {
        auto smallest = std::ranges::min_element(hills, {}, &Hill::mass);
        if (static_cast<double>(smallest->mass) > min_mass) break;
        const auto k = static_cast<std::size_t>(smallest - hills.begin());
        if (k == 0) {
            merge(0);
        } else if (k + 1 == hills.size()) {
            merge(k - 1);
        } else {
            const auto left_valley = counts[hills[k - 1].last];
            const auto right_valley = counts[hills[k].last];
            merge(left_valley >= right_valley ? k - 1 : k);
        }
    }

    PeakReport report;
    report.bin_width = width;
    const auto total = static_cast<double>(values.size());
    for (const auto& h : hills) {
        const double mass = static_cast<double>(h.mass) / total;
        if (h.mass == 0 || mass <= options.mass_threshold) continue;
        report.peaks.push_back({.center = lo + (static_cast<double>(h.top) + 0.5) * width, .mass = mass});
    }
    report.step_estimate = estimate_step(report);
    return report;
}

std::optional<double> estimate_step(const PeakReport& report) {
    if (report.peaks.size() < 2) return std::nullopt;
    std::vector<double> gaps;
    gaps.reserve(report.peaks.size() - 1);
    for (std::size_t i = 1; i < report.peaks.size(); ++i) {
        gaps.push_back(report.peaks[i].center - report.peaks[i - 1].center);
    }
    std::ranges::sort(gaps);
    return gaps[(gaps.size() - 1) / 2];
}

}  // namespace stats
}  // namespace mesure
