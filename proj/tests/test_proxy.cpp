#include <catch2/catch_amalgamated.hpp>

#include "sweet/proxy.hpp"

#include "support/echo_server.hpp"
#include "support/generators.hpp"
#include "support/sim_session.hpp"

using namespace sweet;
using namespace sweet::proxy;
using test_support::CollectSink;
using test_support::EchoServer;
using test_support::wait_until;

namespace {

crypto::SharedKey test_key() {
  crypto::SeededRng rng(1);
  crypto::SharedKey k;
  rng.fill(k.key);
  return k;
}

tunnel::TunnelConfig instant() {
  tunnel::TunnelConfig cfg;
  cfg.batch_window = 0;
  return cfg;
}

// Client session <-> server session joined directly (no carrier latency),
// with the server session feeding a ProxyAgent.
struct AgentRig {
  tunnel::Session client{"tunnel@sweet.test", test_key(), crypto::Direction::kC2S, instant()};
  tunnel::Session server{"user@sim.test", test_key(), crypto::Direction::kS2C, instant()};
  netio::Dialer& dialer;
  ProxyAgent agent{dialer, server};
  CollectSink client_sink;
  Micros now = 0;

  explicit AgentRig(netio::Dialer& d) : dialer(d) {}

  void cycle() {
    now += 1000;
    agent.set_now(now);
    for (auto& m : client.flush_batch(now)) server.ingest_email(m, agent, now);
    agent.pump(now);
    for (auto& m : server.flush_batch(now)) client.ingest_email(m, client_sink, now);
  }

  Bytes client_bytes(uint32_t id) { return client_sink.data[id]; }
};

Bytes socks_connect_ipv4_loopback(uint16_t port) {
  Bytes req{0x05, 0x01, 0x00, 0x01, 127, 0, 0, 1};
  put_u16be(req, port);
  return req;
}

}  // namespace

TEST_CASE("socks5 greeting negotiates no-auth") {
  Socks5ServerConn conn;
  Bytes greeting{0x05, 0x01, 0x00};
  StepOutput out = conn.feed(greeting);
  CHECK(out.to_client == Bytes{0x05, 0x00});
  CHECK_FALSE(out.close);
  CHECK_FALSE(out.connect.has_value());
}

TEST_CASE("socks5 rejects auth-only clients") {
  Socks5ServerConn conn;
  Bytes greeting{0x05, 0x01, 0x02};  // username/password only
  StepOutput out = conn.feed(greeting);
  CHECK(out.to_client == Bytes{0x05, 0xff});
  CHECK(out.close);
}

TEST_CASE("socks5 parses CONNECT with domain and ipv4 addresses") {
  {
    Socks5ServerConn conn;
    conn.feed(Bytes{0x05, 0x01, 0x00});
    Bytes req{0x05, 0x01, 0x00, 0x03, 0x0b};
    Bytes host = to_bytes("example.com");
    put_bytes(req, host);
    put_u16be(req, 443);
    StepOutput out = conn.feed(req);
    REQUIRE(out.connect.has_value());
    CHECK(out.connect->host == "example.com");
    CHECK(out.connect->port == 443);
  }
  {
    Socks5ServerConn conn;
    conn.feed(Bytes{0x05, 0x01, 0x00});
    StepOutput out = conn.feed(socks_connect_ipv4_loopback(8080));
    REQUIRE(out.connect.has_value());
    CHECK(out.connect->host == "127.0.0.1");
    CHECK(out.connect->port == 8080);
  }
}

TEST_CASE("socks5 handles fragmented input") {
  Socks5ServerConn conn;
  Bytes all{0x05, 0x02, 0x00, 0x01};
  Bytes req = socks_connect_ipv4_loopback(80);
  all.insert(all.end(), req.begin(), req.end());
  std::optional<ConnectRequest> connect;
  Bytes replies;
  for (uint8_t b : all) {
    StepOutput out = conn.feed(std::span(&b, 1));
    replies.insert(replies.end(), out.to_client.begin(), out.to_client.end());
    if (out.connect) connect = out.connect;
  }
  CHECK(replies == Bytes{0x05, 0x00});
  REQUIRE(connect.has_value());
  CHECK(connect->port == 80);
}

TEST_CASE("socks5 unsupported commands get reply 0x07") {
  Socks5ServerConn conn;
  conn.feed(Bytes{0x05, 0x01, 0x00});
  Bytes bind{0x05, 0x02, 0x00, 0x01, 127, 0, 0, 1, 0x00, 0x50};
  StepOutput out = conn.feed(bind);
  REQUIRE(out.to_client.size() == 10);
  CHECK(out.to_client[1] == 0x07);
  CHECK(out.close);
}

TEST_CASE("socks5 reply codes map dial errors") {
  CHECK(socks_reply_code(netio::DialError::kRefused) == 0x05);
  CHECK(socks_reply_code(netio::DialError::kTimeout) == 0x04);
  CHECK(socks_reply_code(netio::DialError::kDenied) == 0x02);
}

TEST_CASE("http connect machine parses and rejects") {
  {
    HttpConnectConn conn;
    StepOutput out = conn.feed(to_bytes("CONNECT example.org:443 HTTP/1.1\r\nHost: x\r\n\r\n"));
    REQUIRE(out.connect.has_value());
    CHECK(out.connect->host == "example.org");
    CHECK(out.connect->port == 443);
    StepOutput ok = conn.connect_result(true, netio::DialError::kOther);
    CHECK(to_string(ok.to_client) == "HTTP/1.1 200 Connection Established\r\n\r\n");
    CHECK(conn.relaying());
  }
  {
    HttpConnectConn conn;
    StepOutput out = conn.feed(to_bytes("GET / HTTP/1.1\r\n\r\n"));
    CHECK(to_string(out.to_client).substr(0, 12) == "HTTP/1.1 405");
    CHECK(out.close);
  }
  {
    HttpConnectConn conn;
    StepOutput out = conn.feed(to_bytes("garbage line\r\n\r\n"));
    CHECK(to_string(out.to_client).substr(0, 12) == "HTTP/1.1 400");
    CHECK(out.close);
  }
  {
    HttpConnectConn conn;
    StepOutput out = conn.feed(to_bytes("CONNECT noport HTTP/1.1\r\n\r\n"));
    CHECK(to_string(out.to_client).substr(0, 12) == "HTTP/1.1 400");
    CHECK(out.close);
  }
}

TEST_CASE("cidr deny list parses and matches") {
  netio::CidrList deny = netio::CidrList::default_deny();
  sockaddr_in sin{};
  sin.sin_family = AF_INET;
  inet_pton(AF_INET, "127.0.0.1", &sin.sin_addr);
  CHECK(deny.matches(reinterpret_cast<sockaddr*>(&sin)));
  inet_pton(AF_INET, "10.250.0.9", &sin.sin_addr);
  CHECK(deny.matches(reinterpret_cast<sockaddr*>(&sin)));
  inet_pton(AF_INET, "8.8.8.8", &sin.sin_addr);
  CHECK_FALSE(deny.matches(reinterpret_cast<sockaddr*>(&sin)));
  inet_pton(AF_INET, "172.31.255.1", &sin.sin_addr);
  CHECK(deny.matches(reinterpret_cast<sockaddr*>(&sin)));
  inet_pton(AF_INET, "172.32.0.1", &sin.sin_addr);
  CHECK_FALSE(deny.matches(reinterpret_cast<sockaddr*>(&sin)));
  CHECK_THROWS_AS(netio::CidrList::parse("not-an-addr/8"), ConfigError);
}

TEST_CASE("socks5 CONNECT relays transparently through a real socket") {
  EchoServer echo;
  netio::TcpDialer dialer(netio::CidrList{}, seconds_to_micros(5));
  AgentRig rig(dialer);

  uint32_t id = rig.client.open_stream(wire::ProxySelector::kSocks, rig.now);
  rig.client.write_stream(id, Bytes{0x05, 0x01, 0x00}, rig.now);
  rig.cycle();
  REQUIRE(wait_until([&] { rig.cycle(); return rig.client_bytes(id).size() >= 2; }));
  CHECK(rig.client_bytes(id) == Bytes{0x05, 0x00});

  rig.client.write_stream(id, socks_connect_ipv4_loopback(echo.port()), rig.now);
  REQUIRE(wait_until([&] { rig.cycle(); return rig.client_bytes(id).size() >= 12; }));
  Bytes got = rig.client_bytes(id);
  Bytes reply(got.begin() + 2, got.begin() + 12);
  CHECK(reply[0] == 0x05);
  CHECK(reply[1] == 0x00);  // succeeded

  test_support::Gen gen(5);
  Bytes payload = gen.bytes(100000);
  rig.client.write_stream(id, payload, rig.now);
  REQUIRE(wait_until([&] {
    rig.cycle();
    return rig.client_bytes(id).size() >= 12 + payload.size();
  }));
  got = rig.client_bytes(id);
  Bytes echoed(got.begin() + 12, got.end());
  CHECK(echoed == payload);

  // Closing the stream tears the binding and the TCP connection down.
  rig.client.close_stream(id, rig.now);
  REQUIRE(wait_until([&] { rig.cycle(); return rig.agent.live_bindings() == 0; }));
  REQUIRE(wait_until([&] { return echo.live() == 0; }));
  CHECK(echo.accepted() == 1);
}

TEST_CASE("socks5 CONNECT to a closed port reports connection refused") {
  EchoServer probe;  // grab a port, then close it by scoping
  uint16_t dead_port;
  {
    netio::Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    sockaddr_in sin{};
    sin.sin_family = AF_INET;
    sin.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    ::bind(s.fd(), reinterpret_cast<sockaddr*>(&sin), sizeof(sin));
    socklen_t len = sizeof(sin);
    getsockname(s.fd(), reinterpret_cast<sockaddr*>(&sin), &len);
    dead_port = ntohs(sin.sin_port);
  }  // socket closed; port is free and refuses

  netio::TcpDialer dialer(netio::CidrList{}, seconds_to_micros(5));
  AgentRig rig(dialer);
  uint32_t id = rig.client.open_stream(wire::ProxySelector::kSocks, rig.now);
  rig.client.write_stream(id, Bytes{0x05, 0x01, 0x00}, rig.now);
  rig.client.write_stream(id, socks_connect_ipv4_loopback(dead_port), rig.now);
  REQUIRE(wait_until([&] { rig.cycle(); return rig.client_bytes(id).size() >= 12; }));
  CHECK(rig.client_bytes(id)[3] == 0x05);  // reply code: connection refused
  REQUIRE(wait_until([&] { rig.cycle(); return rig.agent.live_bindings() == 0; }));
}

TEST_CASE("default deny list blocks loopback targets") {
  EchoServer echo;
  netio::TcpDialer dialer(netio::CidrList::default_deny(), seconds_to_micros(5));
  AgentRig rig(dialer);
  uint32_t id = rig.client.open_stream(wire::ProxySelector::kSocks, rig.now);
  rig.client.write_stream(id, Bytes{0x05, 0x01, 0x00}, rig.now);
  rig.client.write_stream(id, socks_connect_ipv4_loopback(echo.port()), rig.now);
  REQUIRE(wait_until([&] { rig.cycle(); return rig.client_bytes(id).size() >= 12; }));
  CHECK(rig.client_bytes(id)[3] == 0x02);  // not allowed by ruleset
  CHECK(echo.accepted() == 0);
}

TEST_CASE("http connect relays through a real socket") {
  EchoServer echo;
  netio::TcpDialer dialer(netio::CidrList{}, seconds_to_micros(5));
  AgentRig rig(dialer);
  uint32_t id = rig.client.open_stream(wire::ProxySelector::kHttp, rig.now);
  std::string req = "CONNECT 127.0.0.1:" + std::to_string(echo.port()) + " HTTP/1.1\r\n\r\n";
  rig.client.write_stream(id, to_bytes(req), rig.now);
  std::string established = "HTTP/1.1 200 Connection Established\r\n\r\n";
  REQUIRE(wait_until([&] { rig.cycle(); return rig.client_bytes(id).size() >= established.size(); }));
  CHECK(to_string(rig.client_bytes(id)) == established);

  Bytes payload = to_bytes("hello through http connect");
  rig.client.write_stream(id, payload, rig.now);
  REQUIRE(wait_until([&] {
    rig.cycle();
    return rig.client_bytes(id).size() >= established.size() + payload.size();
  }));
  Bytes got = rig.client_bytes(id);
  Bytes echoed(got.begin() + established.size(), got.end());
  CHECK(echoed == payload);
}

TEST_CASE("sim dialer serves registered services and refuses others") {
  struct UpperService : netio::SimService {
    void on_bytes(std::span<const uint8_t> data, netio::SimConnCtl& ctl) override {
      Bytes out(data.begin(), data.end());
      for (auto& b : out) b = uint8_t(std::toupper(b));
      ctl.push(out);
    }
  };
  netio::SimDialer dialer;
  dialer.register_service("origin.test", 80, [] { return std::make_unique<UpperService>(); });

  AgentRig rig(dialer);
  uint32_t id = rig.client.open_stream(wire::ProxySelector::kHttp, rig.now);
  rig.client.write_stream(id, to_bytes("CONNECT origin.test:80 HTTP/1.1\r\n\r\n"), rig.now);
  rig.cycle();
  rig.cycle();
  rig.client.write_stream(id, to_bytes("abc"), rig.now);
  rig.cycle();
  rig.cycle();
  std::string got = to_string(rig.client_bytes(id));
  CHECK(got == "HTTP/1.1 200 Connection Established\r\n\r\nABC");

  uint32_t id2 = rig.client.open_stream(wire::ProxySelector::kHttp, rig.now);
  rig.client.write_stream(id2, to_bytes("CONNECT nowhere.test:80 HTTP/1.1\r\n\r\n"), rig.now);
  rig.cycle();
  rig.cycle();
  CHECK(to_string(rig.client_bytes(id2)).substr(0, 12) == "HTTP/1.1 502");
}

TEST_CASE("local listener surfaces accepts, data, and closes") {
  proxy::LocalListener listener;
  std::string err;
  REQUIRE(listener.start("127.0.0.1:0", &err));
  REQUIRE(listener.port() != 0);

  netio::Socket c(::socket(AF_INET, SOCK_STREAM, 0));
  sockaddr_in sin{};
  sin.sin_family = AF_INET;
  sin.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  sin.sin_port = htons(listener.port());
  REQUIRE(::connect(c.fd(), reinterpret_cast<sockaddr*>(&sin), sizeof(sin)) == 0);
  ::send(c.fd(), "ping", 4, 0);

  std::vector<proxy::LocalListener::Event> events;
  REQUIRE(wait_until([&] {
    for (auto& e : listener.poll_events()) events.push_back(e);
    return events.size() >= 2;
  }));
  CHECK(events[0].kind == proxy::LocalListener::Event::Kind::kAccept);
  CHECK(events[1].kind == proxy::LocalListener::Event::Kind::kData);
  CHECK(to_string(events[1].data) == "ping");
  uint64_t conn = events[0].conn_id;

  listener.send(conn, to_bytes("pong"));
  char buf[16];
  timeval tv{5, 0};
  setsockopt(c.fd(), SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
  ssize_t n = ::recv(c.fd(), buf, sizeof(buf), 0);
  REQUIRE(n == 4);
  CHECK(std::string(buf, 4) == "pong");

  c.close();
  REQUIRE(wait_until([&] {
    for (auto& e : listener.poll_events()) events.push_back(e);
    return events.size() >= 3;
  }));
  CHECK(events[2].kind == proxy::LocalListener::Event::Kind::kClosed);
  CHECK(listener.live_conns() == 0);
  listener.stop();
}
