#include "mesure/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <chrono>
#include <cstring>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mesure/error.hpp"

namespace mesure {

namespace {

Nanos steady_now() {
    return static_cast<Nanos>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now().time_since_epoch()).count());
}

// Reads exactly n bytes. Returns the count read before EOF.
std::size_t read_exact(int fd, std::uint8_t* out, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
        const auto r = ::recv(fd, out + got, n - got, 0);
        if (r == 0) return got;
        if (r < 0) {
            if (errno == EINTR) continue;
            throw Error(ErrorKind::ChannelClosed, fmt::format("recv failed: {}", std::strerror(errno)));
        }
        got += static_cast<std::size_t>(r);
    }
    return got;
}

void write_all(int fd, const std::uint8_t* data, std::size_t n) {
    std::size_t sent = 0;
    while (sent < n) {
        const auto r = ::send(fd, data + sent, n - sent, MSG_NOSIGNAL);
        if (r < 0) {
            if (errno == EINTR) continue;
            throw Error(ErrorKind::ChannelClosed, fmt::format("send failed: {}", std::strerror(errno)));
        }
        sent += static_cast<std::size_t>(r);
    }
}

}  // namespace

VirtualChannel::VirtualChannel(sim::Device device) : device_(std::move(device)) {}

TimedExchange VirtualChannel::exchange(const ApduCommand& cmd) {
    if (!open_) throw Error(ErrorKind::ChannelClosed, "virtual channel is closed");
    // Round-trip through the codec so the wire format is exercised on every path.
    const auto decoded = decode_command(encode_command(cmd));
    const auto reply = device_.handle_apdu(decoded);
    clock_ += reply.duration;
    ++exchanges_;
    return {.command = cmd, .response = decode_response(encode_response(reply.response)), .elapsed = reply.duration};
}

Endpoint parse_endpoint(std::string_view address) {
    const auto colon = address.rfind(':');
    if (colon == std::string_view::npos || colon == 0 || colon + 1 == address.size()) {
        throw Error(ErrorKind::ConfigError, fmt::format("'{}' is not host:port", address));
    }
    Endpoint ep{.host = std::string(address.substr(0, colon)), .port = 0};
    const auto port_text = address.substr(colon + 1);
    unsigned value = 0;
    auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), value);
    if (ec != std::errc{} || ptr != port_text.data() + port_text.size() || value > 65535) {
        throw Error(ErrorKind::ConfigError, fmt::format("'{}' has an invalid port", address));
    }
    ep.port = static_cast<std::uint16_t>(value);
    return ep;
}

namespace wire {

void write_frame(int fd, std::span<const std::uint8_t> payload) {
    if (payload.size() > kMaxFrame) {
        throw Error(ErrorKind::ProtocolViolation, fmt::format("{}-byte frame exceeds {}", payload.size(), kMaxFrame));
    }
    std::vector<std::uint8_t> frame;
    frame.reserve(2 + payload.size());
    frame.push_back(static_cast<std::uint8_t>(payload.size() >> 8));
    frame.push_back(static_cast<std::uint8_t>(payload.size() & 0xFF));
    frame.insert(frame.end(), payload.begin(), payload.end());
    write_all(fd, frame.data(), frame.size());
}

std::optional<Bytes> read_frame(int fd) {
    std::uint8_t header[2];
    const auto got = read_exact(fd, header, 2);
    if (got == 0) return std::nullopt;
    if (got < 2) throw Error(ErrorKind::ProtocolViolation, "peer closed inside a frame header");
    const std::size_t len = (static_cast<std::size_t>(header[0]) << 8) | header[1];
    if (len > kMaxFrame) throw Error(ErrorKind::ProtocolViolation, fmt::format("{}-byte frame exceeds {}", len, kMaxFrame));
    Bytes payload(len);
    if (read_exact(fd, payload.data(), len) < len) throw Error(ErrorKind::ProtocolViolation, "peer closed inside a frame");
    return payload;
}

}  // namespace wire

std::unique_ptr<TcpChannel> TcpChannel::connect(std::string_view address) {
    const auto ep = parse_endpoint(address);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const auto port = std::to_string(ep.port);
    if (const int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
        throw Error(ErrorKind::ChannelClosed, fmt::format("cannot resolve {}: {}", address, ::gai_strerror(rc)));
    }
    int fd = -1;
    for (auto* ai = res; ai != nullptr; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) continue;
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw Error(ErrorKind::ChannelClosed, fmt::format("cannot connect to {}", address));
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return std::unique_ptr<TcpChannel>(new TcpChannel(fd));
}

TcpChannel::~TcpChannel() { close(); }

void TcpChannel::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

Nanos TcpChannel::now() const { return steady_now(); }

TimedExchange TcpChannel::exchange(const ApduCommand& cmd) {
    if (fd_ < 0) throw Error(ErrorKind::ChannelClosed, "tcp channel is closed");
    const auto payload = encode_command(cmd);
    const auto start = std::chrono::steady_clock::now();
    wire::write_frame(fd_, payload);
    const auto frame = wire::read_frame(fd_);
    const auto stop = std::chrono::steady_clock::now();
    if (!frame) {
        close();
        throw Error(ErrorKind::ChannelClosed, "device closed the connection");
    }
    return {.command = cmd,
            .response = decode_response(*frame),
            .elapsed = static_cast<Nanos>(std::chrono::duration_cast<std::chrono::nanoseconds>(stop - start).count())};
}

ApduServer::ApduServer(sim::Device device) : device_(std::move(device)) {}

ApduServer::~ApduServer() { stop(); }

void ApduServer::bind(std::string_view listen_address) {
    const auto ep = parse_endpoint(listen_address);
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    const auto port = std::to_string(ep.port);
    if (const int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
        throw Error(ErrorKind::BindError, fmt::format("cannot resolve {}: {}", listen_address, ::gai_strerror(rc)));
    }
    const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd < 0) {
        ::freeaddrinfo(res);
        throw Error(ErrorKind::BindError, fmt::format("socket: {}", std::strerror(errno)));
    }
    if (::bind(fd, res->ai_addr, res->ai_addrlen) != 0 || ::listen(fd, 16) != 0) {
        const std::string why = std::strerror(errno);
        ::freeaddrinfo(res);
        ::close(fd);
        throw Error(ErrorKind::BindError, fmt::format("cannot listen on {}: {}", listen_address, why));
    }
    ::freeaddrinfo(res);
    sockaddr_in bound{};
    socklen_t len = sizeof bound;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
    listen_fd_ = fd;
}

void ApduServer::run(const std::atomic<bool>* shutdown) {
    if (listen_fd_ < 0) throw Error(ErrorKind::BindError, "server is not bound");
    while (!stopping_.load() && (shutdown == nullptr || !shutdown->load())) {
        pollfd p{.fd = listen_fd_, .events = POLLIN, .revents = 0};
        const int ready = ::poll(&p, 1, 50);
        if (ready <= 0) continue;
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) continue;
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        std::lock_guard lock(conn_mutex_);
        conn_fds_.push_back(fd);
        conn_threads_.emplace_back([this, fd] { serve_connection(fd); });
    }
}

void ApduServer::start() {
    accept_thread_ = std::thread([this] { run(); });
}

void ApduServer::stop() {
    stopping_.store(true);
    if (accept_thread_.joinable()) accept_thread_.join();
    std::vector<std::thread> threads;
    {
        std::lock_guard lock(conn_mutex_);
        for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
        threads.swap(conn_threads_);
    }
    for (auto& t : threads) {
        if (t.joinable()) t.join();
    }
    if (listen_fd_ >= 0) {
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
}

void ApduServer::serve_connection(int fd) {
    try {
        while (!stopping_.load()) {
            const auto frame = wire::read_frame(fd);
            if (!frame) break;
            const auto cmd = decode_command(*frame);

            // One exchange at a time, including the simulated execution delay.
            std::lock_guard lock(device_mutex_);
            const auto started = std::chrono::steady_clock::now();
            const auto reply = device_.handle_apdu(cmd);
            std::this_thread::sleep_until(started + std::chrono::nanoseconds(reply.duration));
            served_.fetch_add(1);
            wire::write_frame(fd, encode_response(reply.response));
        }
    } catch (const Error& e) {
        spdlog::warn("closing connection: {}", e.what());
    }
    std::lock_guard lock(conn_mutex_);
    std::erase(conn_fds_, fd);
    ::close(fd);
}

void serve(const sim::DeviceProfile& profile, const Suite& suite, std::string_view listen_address,
           const std::atomic<bool>& shutdown) {
    ApduServer server(sim::Device(profile, sim::AppletSuite(suite)));
    server.bind(listen_address);
    spdlog::info("serving device '{}' on port {}", profile.name, server.port());
    server.run(&shutdown);
    server.stop();
}

}  // namespace mesure
