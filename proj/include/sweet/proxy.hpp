#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sweet/log.hpp"
#include "sweet/netio.hpp"
#include "sweet/tunnel.hpp"
#include "sweet/wire.hpp"

// Proxy agent: terminates tunneled streams as SOCKS5 or HTTP CONNECT
// sessions and relays bytes to TCP destinations. The protocol machines are
// pure; all I/O goes through netio channels so the same agent runs over real
// sockets and simulated services.

namespace sweet::proxy {

struct ConnectRequest {
  std::string host;
  uint16_t port = 0;
};

struct StepOutput {
  Bytes to_client;
  std::optional<ConnectRequest> connect;
  Bytes to_target;   // handshake leftovers that belong to the destination
  bool close = false;
};

inline uint8_t socks_reply_code(netio::DialError e) {
  switch (e) {
    case netio::DialError::kRefused: return 0x05;        // connection refused
    case netio::DialError::kTimeout: return 0x04;        // host unreachable
    case netio::DialError::kDenied: return 0x02;         // not allowed by ruleset
    case netio::DialError::kResolveFailed: return 0x04;
    case netio::DialError::kOther: return 0x01;          // general failure
  }
  return 0x01;
}

// ---------------------------------------------------------------------------
// SOCKS5 (no-auth, CONNECT only)

class Socks5ServerConn {
 public:
  bool relaying() const { return state_ == State::kRelay; }
  bool dead() const { return state_ == State::kDead; }

  StepOutput feed(std::span<const uint8_t> inbound) {
    StepOutput out;
    if (state_ == State::kRelay) {
      out.to_target.assign(inbound.begin(), inbound.end());
      return out;
    }
    buf_.insert(buf_.end(), inbound.begin(), inbound.end());

    if (state_ == State::kGreeting) {
      if (buf_.size() < 2) return out;
      uint8_t ver = buf_[0], nmethods = buf_[1];
      if (ver != 5) {
        state_ = State::kDead;
        out.close = true;
        return out;
      }
      if (buf_.size() < size_t(2 + nmethods)) return out;
      bool no_auth = false;
      for (size_t i = 0; i < nmethods; i++)
        if (buf_[2 + i] == 0x00) no_auth = true;
      buf_.erase(buf_.begin(), buf_.begin() + 2 + nmethods);
      if (!no_auth) {
        out.to_client = {0x05, 0xff};
        out.close = true;
        state_ = State::kDead;
        return out;
      }
      out.to_client = {0x05, 0x00};
      state_ = State::kRequest;
    }

    if (state_ == State::kRequest) {
      if (buf_.size() < 4) return out;
      uint8_t ver = buf_[0], cmd = buf_[1], atyp = buf_[3];
      size_t addr_len = 0;
      std::string host;
      switch (atyp) {
        case 0x01: addr_len = 4; break;
        case 0x03:
          if (buf_.size() < 5) return out;
          addr_len = 1 + buf_[4];
          break;
        case 0x04: addr_len = 16; break;
        default:
          append(out.to_client, reply(0x08));  // address type not supported
          out.close = true;
          state_ = State::kDead;
          return out;
      }
      if (buf_.size() < 4 + addr_len + 2) return out;
      if (ver != 5) {
        state_ = State::kDead;
        out.close = true;
        return out;
      }
      if (cmd != 0x01) {  // BIND / UDP ASSOCIATE
        append(out.to_client, reply(0x07));
        out.close = true;
        state_ = State::kDead;
        return out;
      }
      const uint8_t* p = buf_.data() + 4;
      if (atyp == 0x01) {
        char str[INET_ADDRSTRLEN];
        inet_ntop(AF_INET, p, str, sizeof(str));
        host = str;
      } else if (atyp == 0x04) {
        char str[INET6_ADDRSTRLEN];
        inet_ntop(AF_INET6, p, str, sizeof(str));
        host = str;
      } else {
        host.assign(reinterpret_cast<const char*>(p + 1), addr_len - 1);
      }
      uint16_t port = read_u16be(buf_.data() + 4 + addr_len);
      buf_.erase(buf_.begin(), buf_.begin() + 4 + addr_len + 2);
      out.connect = ConnectRequest{std::move(host), port};
      state_ = State::kAwaitDial;
    }
    return out;
  }

  StepOutput connect_result(bool ok, netio::DialError err) {
    StepOutput out;
    if (ok) {
      out.to_client = reply(0x00);
      out.to_target.swap(buf_);  // bytes the client pipelined behind CONNECT
      state_ = State::kRelay;
    } else {
      out.to_client = reply(socks_reply_code(err));
      out.close = true;
      state_ = State::kDead;
    }
    return out;
  }

 private:
  enum class State { kGreeting, kRequest, kAwaitDial, kRelay, kDead };

  static Bytes reply(uint8_t rep) {
    // BND.ADDR/BND.PORT are not meaningful here; zeros per common practice.
    return Bytes{0x05, rep, 0x00, 0x01, 0, 0, 0, 0, 0, 0};
  }

  static void append(Bytes& dst, const Bytes& src) {
    dst.insert(dst.end(), src.begin(), src.end());
  }

  State state_ = State::kGreeting;
  Bytes buf_;
};

// ---------------------------------------------------------------------------
// HTTP proxy (CONNECT only, no caching)

class HttpConnectConn {
 public:
  bool relaying() const { return state_ == State::kRelay; }
  bool dead() const { return state_ == State::kDead; }

  StepOutput feed(std::span<const uint8_t> inbound) {
    StepOutput out;
    if (state_ == State::kRelay) {
      out.to_target.assign(inbound.begin(), inbound.end());
      return out;
    }
    buf_.insert(buf_.end(), inbound.begin(), inbound.end());
    if (state_ != State::kHeaders) return out;

    static constexpr std::string_view kEnd = "\r\n\r\n";
    auto it = std::search(buf_.begin(), buf_.end(), kEnd.begin(), kEnd.end());
    if (it == buf_.end()) {
      if (buf_.size() > 16384) {
        out.to_client = to_bytes("HTTP/1.1 400 Bad Request\r\n\r\n");
        out.close = true;
        state_ = State::kDead;
      }
      return out;
    }
    std::string head(buf_.begin(), it);
    buf_.erase(buf_.begin(), it + kEnd.size());

    std::string line = head.substr(0, head.find("\r\n"));
    size_t sp1 = line.find(' ');
    size_t sp2 = line.rfind(' ');
    if (sp1 == std::string::npos || sp2 == sp1 ||
        line.compare(sp2 + 1, 5, "HTTP/") != 0) {
      out.to_client = to_bytes("HTTP/1.1 400 Bad Request\r\n\r\n");
      out.close = true;
      state_ = State::kDead;
      return out;
    }
    std::string method = line.substr(0, sp1);
    std::string target = line.substr(sp1 + 1, sp2 - sp1 - 1);
    if (method != "CONNECT") {
      out.to_client = to_bytes("HTTP/1.1 405 Method Not Allowed\r\n\r\n");
      out.close = true;
      state_ = State::kDead;
      return out;
    }
    size_t colon = target.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 >= target.size()) {
      out.to_client = to_bytes("HTTP/1.1 400 Bad Request\r\n\r\n");
      out.close = true;
      state_ = State::kDead;
      return out;
    }
    int port = std::atoi(target.substr(colon + 1).c_str());
    if (port <= 0 || port > 65535) {
      out.to_client = to_bytes("HTTP/1.1 400 Bad Request\r\n\r\n");
      out.close = true;
      state_ = State::kDead;
      return out;
    }
    out.connect = ConnectRequest{target.substr(0, colon), uint16_t(port)};
    state_ = State::kAwaitDial;
    return out;
  }

  StepOutput connect_result(bool ok, netio::DialError) {
    StepOutput out;
    if (ok) {
      out.to_client = to_bytes("HTTP/1.1 200 Connection Established\r\n\r\n");
      out.to_target.swap(buf_);
      state_ = State::kRelay;
    } else {
      out.to_client = to_bytes("HTTP/1.1 502 Bad Gateway\r\n\r\n");
      out.close = true;
      state_ = State::kDead;
    }
    return out;
  }

 private:
  enum class State { kHeaders, kAwaitDial, kRelay, kDead };

  State state_ = State::kHeaders;
  Bytes buf_;
};

// ---------------------------------------------------------------------------
// Server-side agent: binds tunnel streams to destinations

struct ProxyMetrics {
  uint64_t dials = 0;
  uint64_t dial_failures = 0;
  uint64_t bindings_opened = 0;
  uint64_t bindings_closed = 0;
  uint64_t bytes_to_target = 0;
  uint64_t bytes_to_client = 0;
};

class ProxyAgent : public tunnel::FrameSink {
 public:
  ProxyAgent(netio::Dialer& dialer, tunnel::Session& session)
      : dialer_(dialer), session_(session) {}

  size_t live_bindings() const { return bindings_.size(); }
  const ProxyMetrics& metrics() const { return metrics_; }

  // The sink callbacks run inside ingest_email and need the cycle's time.
  void set_now(Micros now) { now_ = now; }

  void on_open(uint32_t stream_id, wire::ProxySelector selector) override {
    Binding b;
    b.stream_id = stream_id;
    if (selector == wire::ProxySelector::kHttp) {
      b.proto = HttpConnectConn{};
    } else {
      b.proto = Socks5ServerConn{};
    }
    bindings_.emplace(stream_id, std::move(b));
    metrics_.bindings_opened++;
  }

  void on_data(uint32_t stream_id, std::span<const uint8_t> data) override {
    auto it = bindings_.find(stream_id);
    if (it == bindings_.end()) return;
    Binding& b = it->second;
    if (b.channel) {
      metrics_.bytes_to_target += data.size();
      b.channel->send(data);
      return;
    }
    if (b.dial_pending) {
      b.pending_to_target.insert(b.pending_to_target.end(), data.begin(), data.end());
      return;
    }
    apply(b, step_feed(b, data));
  }

  void on_close(uint32_t stream_id) override {
    auto it = bindings_.find(stream_id);
    if (it == bindings_.end()) return;
    Binding& b = it->second;
    b.client_closed = true;
    if (b.channel) b.channel->shutdown_send();
  }

  void on_reset(uint32_t stream_id) override {
    auto it = bindings_.find(stream_id);
    if (it == bindings_.end()) return;
    drop(it);
  }

  // Applies finished dials, relays inbound target bytes, and tears down
  // completed bindings. Call once per dispatch cycle.
  void pump(Micros now) {
    now_ = now;
    for (auto& [dial_id, outcome] : dialer_.poll_results()) {
      auto sit = dial_to_stream_.find(dial_id);
      if (sit == dial_to_stream_.end()) continue;
      uint32_t stream_id = sit->second;
      dial_to_stream_.erase(sit);
      auto it = bindings_.find(stream_id);
      if (it == bindings_.end()) continue;  // stream reset while dialing
      Binding& b = it->second;
      b.dial_pending = false;
      bool ok = outcome.channel != nullptr;
      if (ok) {
        b.channel = std::move(outcome.channel);
      } else {
        metrics_.dial_failures++;
      }
      StepOutput out = std::holds_alternative<Socks5ServerConn>(b.proto)
                           ? std::get<Socks5ServerConn>(b.proto).connect_result(ok, outcome.error)
                           : std::get<HttpConnectConn>(b.proto).connect_result(ok, outcome.error);
      if (ok && !b.pending_to_target.empty()) {
        out.to_target.insert(out.to_target.end(), b.pending_to_target.begin(),
                             b.pending_to_target.end());
        b.pending_to_target.clear();
      }
      apply(b, std::move(out));
      if (b.client_closed && b.channel) b.channel->shutdown_send();
    }

    for (auto it = bindings_.begin(); it != bindings_.end();) {
      Binding& b = it->second;
      if (b.dead) {
        it = drop(it);
        continue;
      }
      if (b.channel) {
        Bytes in = b.channel->drain();
        if (!in.empty()) {
          metrics_.bytes_to_client += in.size();
          write_to_client(b, in);
        }
        if (b.channel->broken()) {
          session_.reset_stream(b.stream_id, now);
          it = drop(it);
          continue;
        }
        if (b.channel->peer_closed() && !b.target_eof_signalled) {
          b.target_eof_signalled = true;
          try {
            session_.close_stream(b.stream_id, now);
          } catch (const tunnel::InvalidStream&) {
          }
        }
        if (b.target_eof_signalled && b.client_closed) {
          it = drop(it);
          continue;
        }
      }
      ++it;
    }
  }

 private:
  struct Binding {
    uint32_t stream_id = 0;
    std::variant<Socks5ServerConn, HttpConnectConn> proto;
    std::unique_ptr<netio::ByteChannel> channel;
    Bytes pending_to_target;
    bool dial_pending = false;
    bool client_closed = false;
    bool target_eof_signalled = false;
    bool dead = false;
  };

  StepOutput step_feed(Binding& b, std::span<const uint8_t> data) {
    return std::holds_alternative<Socks5ServerConn>(b.proto)
               ? std::get<Socks5ServerConn>(b.proto).feed(data)
               : std::get<HttpConnectConn>(b.proto).feed(data);
  }

  void apply(Binding& b, StepOutput out) {
    if (!out.to_client.empty()) write_to_client(b, out.to_client);
    if (out.connect) {
      uint64_t dial_id = next_dial_id_++;
      dial_to_stream_[dial_id] = b.stream_id;
      b.dial_pending = true;
      metrics_.dials++;
      dialer_.dial(dial_id, out.connect->host, out.connect->port);
    }
    if (!out.to_target.empty() && b.channel) {
      metrics_.bytes_to_target += out.to_target.size();
      b.channel->send(out.to_target);
    }
    if (out.close) {
      try {
        session_.close_stream(b.stream_id, now_);
      } catch (const tunnel::InvalidStream&) {
      }
      b.dead = true;
    }
  }

  void write_to_client(Binding& b, std::span<const uint8_t> data) {
    try {
      session_.write_stream(b.stream_id, data, now_);
    } catch (const tunnel::InvalidStream&) {
      b.dead = true;
    }
  }

  std::map<uint32_t, Binding>::iterator drop(std::map<uint32_t, Binding>::iterator it) {
    metrics_.bindings_closed++;
    return bindings_.erase(it);
  }

  netio::Dialer& dialer_;
  tunnel::Session& session_;
  Micros now_ = 0;
  ProxyMetrics metrics_;
  std::map<uint32_t, Binding> bindings_;
  std::map<uint64_t, uint32_t> dial_to_stream_;
  uint64_t next_dial_id_ = 1;
};

// ---------------------------------------------------------------------------
// Client-side local listener (real TCP)

// Accepts local proxy connections and surfaces them as events; the daemon
// loop maps each connection onto a tunnel stream and relays both ways. The
// accept and reader threads only touch the event queue.
class LocalListener {
 public:
  struct Event {
    enum class Kind { kAccept, kData, kClosed };
    Kind kind = Kind::kAccept;
    uint64_t conn_id = 0;
    Bytes data;
  };

  ~LocalListener() { stop(); }

  bool start(const std::string& listen_addr, std::string* error) {
    std::string host = "127.0.0.1";
    uint16_t port = 0;
    size_t colon = listen_addr.rfind(':');
    if (colon == std::string::npos) {
      if (error) *error = "listen address must be host:port";
      return false;
    }
    host = listen_addr.substr(0, colon);
    port = uint16_t(std::atoi(listen_addr.substr(colon + 1).c_str()));

    netio::Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    if (!s.valid()) {
      if (error) *error = "socket() failed";
      return false;
    }
    int on = 1;
    setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &on, sizeof(on));
    sockaddr_in sin{};
    sin.sin_family = AF_INET;
    sin.sin_port = htons(port);
    if (inet_pton(AF_INET, host.c_str(), &sin.sin_addr) != 1) {
      if (error) *error = "bad listen host: " + host;
      return false;
    }
    if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&sin), sizeof(sin)) != 0 ||
        ::listen(s.fd(), 64) != 0) {
      if (error) *error = "cannot listen on " + listen_addr;
      return false;
    }
    socklen_t slen = sizeof(sin);
    getsockname(s.fd(), reinterpret_cast<sockaddr*>(&sin), &slen);
    port_ = ntohs(sin.sin_port);
    listener_ = std::move(s);
    accept_thread_ = std::thread([this] { accept_loop(); });
    return true;
  }

  uint16_t port() const { return port_; }

  std::vector<Event> poll_events() {
    std::lock_guard lock(mu_);
    std::vector<Event> out;
    out.swap(events_);
    return out;
  }

  void send(uint64_t conn_id, std::span<const uint8_t> data) {
    auto sock = conn(conn_id);
    if (!sock) return;
    size_t off = 0;
    while (off < data.size()) {
      ssize_t n = ::send(sock->fd(), data.data() + off, data.size() - off, MSG_NOSIGNAL);
      if (n <= 0) return;
      off += size_t(n);
    }
  }

  // Tunnel stream half-closed by the server: stop writing to the app.
  void shutdown_send(uint64_t conn_id) {
    auto sock = conn(conn_id);
    if (sock) ::shutdown(sock->fd(), SHUT_WR);
  }

  void close_conn(uint64_t conn_id) {
    std::lock_guard lock(mu_);
    auto it = conns_.find(conn_id);
    if (it == conns_.end()) return;
    ::shutdown(it->second->fd(), SHUT_RDWR);  // unblocks the reader
    conns_.erase(it);
  }

  void stop() {
    stopping_ = true;
    ::shutdown(listener_.fd(), SHUT_RDWR);  // wakes the blocked accept
    listener_.close();
    if (accept_thread_.joinable()) accept_thread_.join();
    {
      std::lock_guard lock(mu_);
      for (auto& [id, sock] : conns_) ::shutdown(sock->fd(), SHUT_RDWR);
      conns_.clear();
    }
    for (auto& t : readers_)
      if (t.joinable()) t.join();
    readers_.clear();
  }

  size_t live_conns() {
    std::lock_guard lock(mu_);
    return conns_.size();
  }

 private:
  void accept_loop() {
    while (!stopping_) {
      int fd = ::accept(listener_.fd(), nullptr, nullptr);
      if (fd < 0) return;
      uint64_t id;
      {
        std::lock_guard lock(mu_);
        id = next_conn_id_++;
        conns_.emplace(id, std::make_shared<netio::Socket>(fd));
        events_.push_back(Event{Event::Kind::kAccept, id, {}});
        readers_.emplace_back([this, id, sock = conns_[id]] { read_loop(id, sock); });
      }
    }
  }

  void read_loop(uint64_t id, std::shared_ptr<netio::Socket> sock) {
    uint8_t buf[16384];
    while (true) {
      ssize_t n = ::recv(sock->fd(), buf, sizeof(buf), 0);
      std::lock_guard lock(mu_);
      if (n > 0) {
        events_.push_back(Event{Event::Kind::kData, id, Bytes(buf, buf + n)});
        continue;
      }
      events_.push_back(Event{Event::Kind::kClosed, id, {}});
      conns_.erase(id);
      return;
    }
  }

  std::shared_ptr<netio::Socket> conn(uint64_t conn_id) {
    std::lock_guard lock(mu_);
    auto it = conns_.find(conn_id);
    return it == conns_.end() ? nullptr : it->second;
  }

  netio::Socket listener_;
  std::thread accept_thread_;
  std::vector<std::thread> readers_;
  std::mutex mu_;
  std::map<uint64_t, std::shared_ptr<netio::Socket>> conns_;
  std::vector<Event> events_;
  uint64_t next_conn_id_ = 1;
  uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
};

}  // namespace sweet::proxy
