#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <thread>

#include "mesure/transport.hpp"
#include "support.hpp"

using namespace mesure;
using testing::error_kind;

namespace {

constexpr std::uint8_t kEmpty = 0x10, kSadd = 0x21;

sim::DeviceProfile profile(Nanos overhead) {
    auto p = sim::load_profile_file(testing::kDataDir / "demo_profile.json");
    p.exchange_overhead = overhead;
    return p;
}

sim::Device device(Nanos overhead = 1'000'000) {
    return sim::Device(profile(overhead), sim::AppletSuite(load_suite_file(testing::kDataDir / "demo_suite.json")));
}

ApduCommand run(std::uint8_t ins, std::uint8_t p2) { return {.cla = kBenchCla, .ins = ins, .p1 = 0x01, .p2 = p2, .data = {}}; }

int raw_connect(std::uint16_t port) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
    return fd;
}

// True once the peer has closed the connection.
bool peer_closed(int fd) {
    std::uint8_t b = 0;
    return ::recv(fd, &b, 1, 0) == 0;
}

std::string endpoint(const ApduServer& s) { return "127.0.0.1:" + std::to_string(s.port()); }

}  // namespace

TEST_CASE("virtual channel elapsed equals device duration") {
    VirtualChannel ch(device(5'000'000));
    const auto ex = ch.exchange(run(kEmpty, 1));
    CHECK(ex.response.ok());
    CHECK(ex.elapsed == 5'000'500);
    CHECK(ch.now() == 5'000'500);
    const auto sadd = ch.exchange(run(kSadd, 41));
    CHECK(sadd.elapsed == 4'000'000 + 28'736'500);
    CHECK(ch.now() == 5'000'500 + sadd.elapsed);
    CHECK(ch.exchange_count() == 2);
    CHECK(ch.exchange(run(0xFF, 1)).response.sw == kSwInsNotSupported);

    ch.close();
    CHECK_FALSE(ch.is_open());
    CHECK(error_kind([&] { (void)ch.exchange(run(kEmpty, 1)); }) == ErrorKind::ChannelClosed);
}

TEST_CASE("parse_endpoint") {
    const auto ep = parse_endpoint("127.0.0.1:7816");
    CHECK(ep.host == "127.0.0.1");
    CHECK(ep.port == 7816);
    CHECK(parse_endpoint("localhost:0").port == 0);
    for (const char* bad : {"7816", ":7816", "host:", "host:99999", "host:12ab"}) {
        CHECK(error_kind([&] { (void)parse_endpoint(bad); }) == ErrorKind::ConfigError);
    }
}

TEST_CASE("tcp smoke exchange and lower bound on elapsed") {
    ApduServer server(device(5'000'000));
    server.bind("127.0.0.1:0");
    REQUIRE(server.port() != 0);
    server.start();

    auto ch = TcpChannel::connect(endpoint(server));
    const auto ex = ch->exchange(run(kEmpty, 1));
    CHECK(ex.response.sw == kSwSuccess);
    CHECK(ex.elapsed >= 5'000'500);
    const auto bad = ch->exchange(run(0xFF, 1));
    CHECK(bad.response.sw == kSwInsNotSupported);
    CHECK(bad.elapsed >= 5'000'000);
    CHECK(server.exchanges_served() == 2);

    ch->close();
    CHECK_FALSE(ch->is_open());
    CHECK(error_kind([&] { (void)ch->exchange(run(kEmpty, 1)); }) == ErrorKind::ChannelClosed);
    server.stop();
}

TEST_CASE("bind and connect failures") {
    ApduServer first(device());
    first.bind("127.0.0.1:0");
    ApduServer second(device());
    CHECK(error_kind([&] { second.bind(endpoint(first)); }) == ErrorKind::BindError);
    CHECK(testing::error_text([&] { second.bind(endpoint(first)); }).find("BindError") != std::string::npos);

    // A port nobody listens on: bind, note it, and close again.
    std::uint16_t dead_port = 0;
    {
        ApduServer probe(device());
        probe.bind("127.0.0.1:0");
        dead_port = probe.port();
    }
    CHECK(error_kind([&] { (void)TcpChannel::connect("127.0.0.1:" + std::to_string(dead_port)); }) == ErrorKind::ChannelClosed);
}

TEST_CASE("server survives malformed frames") {
    ApduServer server(device(100'000));
    server.bind("127.0.0.1:0");
    server.start();

    {  // APDU shorter than a header
        const int fd = raw_connect(server.port());
        const Bytes junk{0x80, 0x01};
        wire::write_frame(fd, junk);
        CHECK(peer_closed(fd));
        ::close(fd);
    }
    {  // length prefix above the frame limit
        const int fd = raw_connect(server.port());
        const std::uint8_t prefix[] = {0xFF, 0xFF};
        REQUIRE(::send(fd, prefix, 2, 0) == 2);
        CHECK(peer_closed(fd));
        ::close(fd);
    }
    {  // peer disappears mid-frame
        const int fd = raw_connect(server.port());
        const std::uint8_t partial[] = {0x00, 0x10, 0x80, 0x01};
        REQUIRE(::send(fd, partial, sizeof partial, 0) == static_cast<ssize_t>(sizeof partial));
        ::close(fd);
    }
    {  // Lc disagreeing with the payload
        const int fd = raw_connect(server.port());
        const Bytes lying{0x80, 0x10, 0x01, 0x01, 0x05, 0xAA};
        wire::write_frame(fd, lying);
        CHECK(peer_closed(fd));
        ::close(fd);
    }

    auto ch = TcpChannel::connect(endpoint(server));
    CHECK(ch->exchange(run(kEmpty, 1)).response.ok());
    server.stop();
}

TEST_CASE("wire frames") {
    int fds[2];
    REQUIRE(::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) == 0);
    const Bytes payload{1, 2, 3};
    wire::write_frame(fds[0], payload);
    const auto got = wire::read_frame(fds[1]);
    REQUIRE(got.has_value());
    CHECK(*got == payload);

    const Bytes too_big(kMaxFrame + 1, 0);
    CHECK(error_kind([&] { wire::write_frame(fds[0], too_big); }) == ErrorKind::ProtocolViolation);

    const std::uint8_t prefix[] = {0x10, 0x01};
    REQUIRE(::send(fds[0], prefix, 2, 0) == 2);
    CHECK(error_kind([&] { (void)wire::read_frame(fds[1]); }) == ErrorKind::ProtocolViolation);

    ::close(fds[0]);
    CHECK_FALSE(wire::read_frame(fds[1]).has_value());
    ::close(fds[1]);
}

TEST_CASE("two concurrent clients are served one exchange at a time") {
    // Emptyloop at P2=1 lasts 20 ms + 500 ns on this device.
    ApduServer server(device(20'000'000));
    server.bind("127.0.0.1:0");
    server.start();

    constexpr int kPerClient = 5;
    using Clock = std::chrono::steady_clock;
    struct Interval {
        Clock::time_point start, end;
    };
    std::vector<Interval> a, b;
    auto client = [&](std::vector<Interval>& log) {
        auto ch = TcpChannel::connect(endpoint(server));
        for (int i = 0; i < kPerClient; ++i) {
            const auto t0 = Clock::now();
            const auto ex = ch->exchange(run(kEmpty, 1));
            log.push_back({t0, Clock::now()});
            CHECK(ex.response.ok());
        }
    };
    const auto begin = Clock::now();
    std::thread ta(client, std::ref(a));
    std::thread tb(client, std::ref(b));
    ta.join();
    tb.join();
    const auto total = Clock::now() - begin;

    CHECK(a.size() == kPerClient);
    CHECK(b.size() == kPerClient);
    CHECK(server.exchanges_served() == 2 * kPerClient);
    // Overlapping sessions would finish in about half of this.
    CHECK(total >= std::chrono::nanoseconds(2 * kPerClient * 20'000'500LL));

    // Every reply lands at least one device duration after the previous one.
    std::vector<Clock::time_point> ends;
    for (const auto& i : a) ends.push_back(i.end);
    for (const auto& i : b) ends.push_back(i.end);
    std::ranges::sort(ends);
    for (std::size_t i = 1; i < ends.size(); ++i) {
        CHECK(ends[i] - ends[i - 1] >= std::chrono::milliseconds(19));
    }
    server.stop();
}
