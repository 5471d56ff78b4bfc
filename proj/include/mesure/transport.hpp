#pragma once

// Channels to a benchmark device. Every channel times one exchange from the
// first command byte sent to the status word received, on a monotonic clock.

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "mesure/apdu.hpp"
#include "mesure/card_sim.hpp"
#include "mesure/stats.hpp"

namespace mesure {

struct TimedExchange {
    ApduCommand command;
    ApduResponse response;
    Nanos elapsed = 0;
};

class Channel {
public:
    virtual ~Channel() = default;

    /// Throws ChannelClosed once closed, ProtocolViolation on a garbled reply.
    virtual TimedExchange exchange(const ApduCommand& cmd) = 0;
    /// Monotonic timestamp in ns on this channel's clock.
    [[nodiscard]] virtual Nanos now() const = 0;
    virtual void close() = 0;
    [[nodiscard]] virtual bool is_open() const = 0;
};

/// In-process channel whose clock advances by exactly the device-reported duration.
class VirtualChannel final : public Channel {
public:
    explicit VirtualChannel(sim::Device device);

    TimedExchange exchange(const ApduCommand& cmd) override;
    [[nodiscard]] Nanos now() const override { return clock_; }
    void close() override { open_ = false; }
    [[nodiscard]] bool is_open() const override { return open_; }

    [[nodiscard]] const sim::Device& device() const noexcept { return device_; }
    [[nodiscard]] std::uint64_t exchange_count() const noexcept { return exchanges_; }

private:
    sim::Device device_;
    Nanos clock_ = 0;
    std::uint64_t exchanges_ = 0;
    bool open_ = true;
};

inline constexpr std::size_t kMaxFrame = 4096;

struct Endpoint {
    std::string host;
    std::uint16_t port = 0;
};

/// "host:port"; throws ConfigError.
[[nodiscard]] Endpoint parse_endpoint(std::string_view address);

namespace wire {

/// 2-byte big-endian length prefix + payload. Throws ChannelClosed on I/O failure.
void write_frame(int fd, std::span<const std::uint8_t> payload);
/// nullopt on orderly EOF before a frame starts; ProtocolViolation for frames above kMaxFrame
/// or a peer that closes mid-frame.
[[nodiscard]] std::optional<Bytes> read_frame(int fd);

}  // namespace wire

/// Client side of the TCP device protocol.
class TcpChannel final : public Channel {
public:
    /// Throws ChannelClosed if the endpoint does not accept the connection.
    [[nodiscard]] static std::unique_ptr<TcpChannel> connect(std::string_view address);
    ~TcpChannel() override;

    TcpChannel(const TcpChannel&) = delete;
    TcpChannel& operator=(const TcpChannel&) = delete;

    TimedExchange exchange(const ApduCommand& cmd) override;
    [[nodiscard]] Nanos now() const override;
    void close() override;
    [[nodiscard]] bool is_open() const override { return fd_ >= 0; }

private:
    explicit TcpChannel(int fd) : fd_(fd) {}
    int fd_ = -1;
};

/// Serves one simulated device over TCP. Exchanges from all connections are
/// serialized through the device and each reply is held back for the
/// device-reported duration.
class ApduServer {
public:
    explicit ApduServer(sim::Device device);
    ~ApduServer();

    ApduServer(const ApduServer&) = delete;
    ApduServer& operator=(const ApduServer&) = delete;

    /// Throws BindError.
    void bind(std::string_view listen_address);
    [[nodiscard]] std::uint16_t port() const noexcept { return port_; }

    /// Accept loop; returns after stop() or once `shutdown` becomes true.
    void run(const std::atomic<bool>* shutdown = nullptr);
    void start();
    void stop();

    [[nodiscard]] std::uint64_t exchanges_served() const noexcept { return served_.load(); }

private:
    void serve_connection(int fd);

    sim::Device device_;
    std::mutex device_mutex_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> stopping_{false};
    std::atomic<std::uint64_t> served_{0};
    std::thread accept_thread_;
    std::mutex conn_mutex_;
    std::vector<int> conn_fds_;
    std::vector<std::thread> conn_threads_;
};

/// Binds and serves until `shutdown` becomes true. Throws BindError.
void serve(const sim::DeviceProfile& profile, const Suite& suite, std::string_view listen_address,
           const std::atomic<bool>& shutdown);

}  // namespace mesure
