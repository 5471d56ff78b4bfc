#pragma once

// ISO 7816-style command/response APDUs, short form only.

#include <cstdint>
#include <span>
#include <vector>

namespace mesure {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint16_t kSwSuccess = 0x9000;
inline constexpr std::uint16_t kSwInsNotSupported = 0x6D00;
inline constexpr std::uint16_t kSwIncorrectP1P2 = 0x6A86;
inline constexpr std::uint16_t kSwInternalFault = 0x6F00;

inline constexpr std::uint8_t kBenchCla = 0x80;

// P1 selects the applet life-cycle phase.
enum class Phase : std::uint8_t { SetUp = 0x00, Run = 0x01, CleanUp = 0x02 };

struct ApduCommand {
    std::uint8_t cla = 0;
    std::uint8_t ins = 0;
    std::uint8_t p1 = 0;
    std::uint8_t p2 = 0;
    Bytes data;

    friend bool operator==(const ApduCommand&, const ApduCommand&) = default;
};

struct ApduResponse {
    Bytes data;
    std::uint16_t sw = kSwSuccess;

    [[nodiscard]] bool ok() const noexcept { return sw == kSwSuccess; }
    friend bool operator==(const ApduResponse&, const ApduResponse&) = default;
};

/// [cla ins p1 p2] or [cla ins p1 p2 Lc data...]. Throws DataTooLong above 255 data bytes.
[[nodiscard]] Bytes encode_command(const ApduCommand& cmd);
/// Throws MalformedApdu on a short header or a length byte that disagrees with the payload.
[[nodiscard]] ApduCommand decode_command(std::span<const std::uint8_t> bytes);

/// data followed by SW1 SW2.
[[nodiscard]] Bytes encode_response(const ApduResponse& rsp);
[[nodiscard]] ApduResponse decode_response(std::span<const std::uint8_t> bytes);

}  // namespace mesure
