#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mesure {

enum class ErrorKind {
    EmptySet,
    InsufficientSamples,
    ZeroVariance,
    SampleSizeOutOfRange,
    ProfileParseError,
    ProfileInvariantError,
    DataTooLong,
    MalformedApdu,
    ChannelClosed,
    ProtocolViolation,
    BindError,
    InvalidSuite,
    CycleDetected,
    CalibrationFailed,
    DeviceError,
    LoopSizeMismatch,
    OverFiltered,
    MissingMeasurement,
    ZeroReference,
    TraceParseError,
    UnbalancedTrace,
    NoTraces,
    ZeroUsage,
    MissingFeature,
    NonPositiveMean,
    NonPositiveInput,
    FeatureWithoutMark,
    NoDomains,
    ConfigError,
    DocumentError,
};

[[nodiscard]] std::string_view to_string(ErrorKind kind) noexcept;

// Every failure raised by the library. what() is prefixed with the kind name so
// diagnostics can be grepped for it.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& detail);

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }
    [[nodiscard]] const std::string& detail() const noexcept { return detail_; }

private:
    ErrorKind kind_;
    std::string detail_;
};

// Non-success status word returned by the device.
class DeviceError : public Error {
public:
    explicit DeviceError(std::uint16_t sw, const std::string& context = {});

    [[nodiscard]] std::uint16_t status_word() const noexcept { return sw_; }

private:
    std::uint16_t sw_;
};

}  // namespace mesure
