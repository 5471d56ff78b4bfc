#include "mesure/apdu.hpp"

#include <fmt/format.h>

#include "mesure/error.hpp"

namespace mesure {

Bytes encode_command(const ApduCommand& cmd) {
    if (cmd.data.size() > 255) {
        throw Error(ErrorKind::DataTooLong, fmt::format("{} data bytes, short APDUs carry at most 255", cmd.data.size()));
    }
    Bytes out{cmd.cla, cmd.ins, cmd.p1, cmd.p2};
    if (!cmd.data.empty()) {
        out.reserve(5 + cmd.data.size());
        out.push_back(static_cast<std::uint8_t>(cmd.data.size()));
        out.insert(out.end(), cmd.data.begin(), cmd.data.end());
    }
    return out;
}

ApduCommand decode_command(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) throw Error(ErrorKind::MalformedApdu, fmt::format("{}-byte command is shorter than a header", bytes.size()));
    ApduCommand cmd{.cla = bytes[0], .ins = bytes[1], .p1 = bytes[2], .p2 = bytes[3], .data = {}};
    if (bytes.size() == 4) return cmd;
    const std::size_t lc = bytes[4];
    if (lc == 0 || bytes.size() != 5 + lc) {
        throw Error(ErrorKind::MalformedApdu, fmt::format("Lc={} but {} data bytes follow", lc, bytes.size() - 5));
    }
    cmd.data.assign(bytes.begin() + 5, bytes.end());
    return cmd;
}

Bytes encode_response(const ApduResponse& rsp) {
    Bytes out = rsp.data;
    out.push_back(static_cast<std::uint8_t>(rsp.sw >> 8));
    out.push_back(static_cast<std::uint8_t>(rsp.sw & 0xFF));
    return out;
}

ApduResponse decode_response(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2) throw Error(ErrorKind::ProtocolViolation, "response shorter than a status word");
    const auto n = bytes.size() - 2;
    return {.data = Bytes(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n)),
            .sw = static_cast<std::uint16_t>((bytes[n] << 8) | bytes[n + 1])};
}

}  // namespace mesure
