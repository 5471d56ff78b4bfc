#include "mesure/error.hpp"

#include <fmt/format.h>

namespace mesure {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::EmptySet: return "EmptySet";
        case ErrorKind::InsufficientSamples: return "InsufficientSamples";
        case ErrorKind::ZeroVariance: return "ZeroVariance";
        case ErrorKind::SampleSizeOutOfRange: return "SampleSizeOutOfRange";
        case ErrorKind::ProfileParseError: return "ProfileParseError";
        case ErrorKind::ProfileInvariantError: return "ProfileInvariantError";
        case ErrorKind::DataTooLong: return "DataTooLong";
        case ErrorKind::MalformedApdu: return "MalformedApdu";
        case ErrorKind::ChannelClosed: return "ChannelClosed";
        case ErrorKind::ProtocolViolation: return "ProtocolViolation";
        case ErrorKind::BindError: return "BindError";
        case ErrorKind::InvalidSuite: return "InvalidSuite";
        case ErrorKind::CycleDetected: return "CycleDetected";
        case ErrorKind::CalibrationFailed: return "CalibrationFailed";
        case ErrorKind::DeviceError: return "DeviceError";
        case ErrorKind::LoopSizeMismatch: return "LoopSizeMismatch";
        case ErrorKind::OverFiltered: return "OverFiltered";
        case ErrorKind::MissingMeasurement: return "MissingMeasurement";
        case ErrorKind::ZeroReference: return "ZeroReference";
        case ErrorKind::TraceParseError: return "TraceParseError";
        case ErrorKind::UnbalancedTrace: return "UnbalancedTrace";
        case ErrorKind::NoTraces: return "NoTraces";
        case ErrorKind::ZeroUsage: return "ZeroUsage";
        case ErrorKind::MissingFeature: return "MissingFeature";
        case ErrorKind::NonPositiveMean: return "NonPositiveMean";
        case ErrorKind::NonPositiveInput: return "NonPositiveInput";
        case ErrorKind::FeatureWithoutMark: return "FeatureWithoutMark";
        case ErrorKind::NoDomains: return "NoDomains";
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::DocumentError: return "DocumentError";
    }
    return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& detail)
    : std::runtime_error(fmt::format("{}: {}", to_string(kind), detail)), kind_(kind), detail_(detail) {}

DeviceError::DeviceError(std::uint16_t sw, const std::string& context)
    : Error(ErrorKind::DeviceError,
            context.empty() ? fmt::format("status word {:04X}", sw)
                            : fmt::format("status word {:04X} ({})", sw, context)),
      sw_(sw) {}

}  // namespace mesure
