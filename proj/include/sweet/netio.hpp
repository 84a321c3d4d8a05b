#pragma once

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cstring>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "sweet/bytes.hpp"
#include "sweet/clock.hpp"
#include "sweet/config.hpp"

namespace sweet::netio {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release() { return std::exchange(fd_, -1); }

  void close() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_ = -1;
};

// ---------------------------------------------------------------------------
// CIDR deny list

struct Cidr {
  bool v6 = false;
  std::array<uint8_t, 16> addr{};
  int prefix = 0;

  static std::optional<Cidr> parse(std::string_view text) {
    Cidr c;
    size_t slash = text.find('/');
    std::string host(text.substr(0, slash));
    c.prefix = slash == std::string_view::npos
                   ? -1
                   : std::atoi(std::string(text.substr(slash + 1)).c_str());
    in_addr a4;
    in6_addr a6;
    if (inet_pton(AF_INET, host.c_str(), &a4) == 1) {
      c.v6 = false;
      std::memcpy(c.addr.data(), &a4, 4);
      if (c.prefix < 0) c.prefix = 32;
      if (c.prefix > 32) return std::nullopt;
      return c;
    }
    if (inet_pton(AF_INET6, host.c_str(), &a6) == 1) {
      c.v6 = true;
      std::memcpy(c.addr.data(), &a6, 16);
      if (c.prefix < 0) c.prefix = 128;
      if (c.prefix > 128) return std::nullopt;
      return c;
    }
    return std::nullopt;
  }

  bool matches(const sockaddr* sa) const {
    const uint8_t* bytes = nullptr;
    int len = 0;
    if (sa->sa_family == AF_INET && !v6) {
      bytes = reinterpret_cast<const uint8_t*>(
          &reinterpret_cast<const sockaddr_in*>(sa)->sin_addr);
      len = 4;
    } else if (sa->sa_family == AF_INET6 && v6) {
      bytes = reinterpret_cast<const uint8_t*>(
          &reinterpret_cast<const sockaddr_in6*>(sa)->sin6_addr);
      len = 16;
    } else {
      return false;
    }
    int bits = prefix;
    for (int i = 0; i < len && bits > 0; i++, bits -= 8) {
      uint8_t mask = bits >= 8 ? 0xff : uint8_t(0xff << (8 - bits));
      if ((bytes[i] & mask) != (addr[i] & mask)) return false;
    }
    return true;
  }
};

class CidrList {
 public:
  CidrList() = default;

  static CidrList parse(std::string_view csv) {
    CidrList list;
    for (const auto& item : split_list(csv)) {
      auto c = Cidr::parse(item);
      if (!c) throw ConfigError("bad CIDR: " + item);
      list.entries_.push_back(*c);
    }
    return list;
  }

  // Loopback, RFC-1918, link-local, and v6 loopback: open-proxy hardening.
  static CidrList default_deny() {
    return parse("127.0.0.0/8,10.0.0.0/8,172.16.0.0/12,192.168.0.0/16,169.254.0.0/16,::1/128");
  }

  bool matches(const sockaddr* sa) const {
    for (const auto& c : entries_) {
      if (c.matches(sa)) return true;
    }
    return false;
  }

  bool empty() const { return entries_.empty(); }

 private:
  std::vector<Cidr> entries_;
};

// ---------------------------------------------------------------------------
// Byte channels: the duplex pipe between a proxy binding and its destination

enum class DialError { kRefused, kTimeout, kDenied, kResolveFailed, kOther };

class ByteChannel {
 public:
  virtual ~ByteChannel() = default;
  virtual void send(std::span<const uint8_t> data) = 0;
  virtual Bytes drain() = 0;  // bytes from the peer since the last drain
  virtual void shutdown_send() = 0;
  virtual bool peer_closed() = 0;  // EOF observed and nothing left to drain
  virtual bool broken() = 0;
};

struct DialOutcome {
  std::unique_ptr<ByteChannel> channel;  // set on success
  DialError error = DialError::kOther;   // meaningful when channel is null
};

// Requests resolve asynchronously; the owner polls for finished dials from
// its dispatch loop.
class Dialer {
 public:
  virtual ~Dialer() = default;
  virtual void dial(uint64_t request_id, const std::string& host, uint16_t port) = 0;
  virtual std::vector<std::pair<uint64_t, DialOutcome>> poll_results() = 0;
};

// ---------------------------------------------------------------------------
// Real TCP

inline std::optional<DialError> wait_writable(int fd, Micros timeout) {
  pollfd pfd{fd, POLLOUT, 0};
  int rc = ::poll(&pfd, 1, int(timeout / 1000));
  if (rc == 0) return DialError::kTimeout;
  if (rc < 0) return DialError::kOther;
  int err = 0;
  socklen_t len = sizeof(err);
  if (getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) != 0) return DialError::kOther;
  if (err == 0) return std::nullopt;
  if (err == ECONNREFUSED) return DialError::kRefused;
  if (err == ETIMEDOUT) return DialError::kTimeout;
  return DialError::kOther;
}

class TcpChannel : public ByteChannel {
 public:
  explicit TcpChannel(Socket sock) : sock_(std::move(sock)) {
    reader_ = std::thread([this] { read_loop(); });
  }

  ~TcpChannel() override {
    ::shutdown(sock_.fd(), SHUT_RDWR);  // wakes the blocked reader; close alone would not
    if (reader_.joinable()) reader_.join();
  }

  void send(std::span<const uint8_t> data) override {
    size_t off = 0;
    while (off < data.size()) {
      ssize_t n = ::send(sock_.fd(), data.data() + off, data.size() - off, MSG_NOSIGNAL);
      if (n <= 0) {
        broken_ = true;
        return;
      }
      off += size_t(n);
    }
  }

  Bytes drain() override {
    std::lock_guard lock(mu_);
    Bytes out;
    out.swap(inbox_);
    return out;
  }

  void shutdown_send() override { ::shutdown(sock_.fd(), SHUT_WR); }

  bool peer_closed() override {
    std::lock_guard lock(mu_);
    return eof_ && inbox_.empty();
  }

  bool broken() override { return broken_; }

 private:
  void read_loop() {
    uint8_t buf[16384];
    while (true) {
      ssize_t n = ::recv(sock_.fd(), buf, sizeof(buf), 0);
      if (n > 0) {
        std::lock_guard lock(mu_);
        inbox_.insert(inbox_.end(), buf, buf + n);
        continue;
      }
      if (n == 0) {
        std::lock_guard lock(mu_);
        eof_ = true;
      } else {
        broken_ = true;
      }
      return;
    }
  }

  Socket sock_;
  std::thread reader_;
  std::mutex mu_;
  Bytes inbox_;
  bool eof_ = false;
  std::atomic<bool> broken_{false};
};

class TcpDialer : public Dialer {
 public:
  TcpDialer(CidrList deny, Micros connect_timeout)
      : deny_(std::move(deny)), connect_timeout_(connect_timeout) {}

  ~TcpDialer() override {
    for (auto& t : threads_)
      if (t.joinable()) t.join();
  }

  void dial(uint64_t request_id, const std::string& host, uint16_t port) override {
    std::lock_guard lock(mu_);
    threads_.emplace_back([this, request_id, host, port] {
      DialOutcome out = dial_blocking(host, port);
      std::lock_guard lock(mu_);
      results_.emplace_back(request_id, std::move(out));
    });
  }

  std::vector<std::pair<uint64_t, DialOutcome>> poll_results() override {
    std::lock_guard lock(mu_);
    std::vector<std::pair<uint64_t, DialOutcome>> out;
    out.swap(results_);
    return out;
  }

 private:
  DialOutcome dial_blocking(const std::string& host, uint16_t port) {
    DialOutcome out;
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0) {
      out.error = DialError::kResolveFailed;
      return out;
    }
    bool any_denied = false;
    std::optional<DialError> last_err;
    for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
      if (deny_.matches(ai->ai_addr)) {
        any_denied = true;
        continue;
      }
      Socket s(::socket(ai->ai_family, SOCK_STREAM | SOCK_NONBLOCK, 0));
      if (!s.valid()) continue;
      int rc = ::connect(s.fd(), ai->ai_addr, ai->ai_addrlen);
      if (rc != 0 && errno != EINPROGRESS) {
        last_err = errno == ECONNREFUSED ? DialError::kRefused : DialError::kOther;
        continue;
      }
      if (auto err = wait_writable(s.fd(), connect_timeout_)) {
        last_err = *err;
        continue;
      }
      // Back to blocking for the relay threads.
      fcntl(s.fd(), F_SETFL, fcntl(s.fd(), F_GETFL) & ~O_NONBLOCK);
      freeaddrinfo(res);
      out.channel = std::make_unique<TcpChannel>(std::move(s));
      return out;
    }
    freeaddrinfo(res);
    if (last_err) {
      out.error = *last_err;
    } else if (any_denied) {
      out.error = DialError::kDenied;
    } else {
      out.error = DialError::kOther;
    }
    return out;
  }

  CidrList deny_;
  Micros connect_timeout_;
  std::mutex mu_;
  std::vector<std::thread> threads_;
  std::vector<std::pair<uint64_t, DialOutcome>> results_;
};

// ---------------------------------------------------------------------------
// Simulated destinations (single-threaded, zero-latency service handlers)

class SimConnCtl {
 public:
  virtual ~SimConnCtl() = default;
  virtual void push(std::span<const uint8_t> data) = 0;  // service -> client
  virtual void close() = 0;                              // service EOF
};

class SimService {
 public:
  virtual ~SimService() = default;
  virtual void on_bytes(std::span<const uint8_t> data, SimConnCtl& ctl) = 0;
  virtual void on_half_close(SimConnCtl&) {}
};

class SimChannel : public ByteChannel, public SimConnCtl {
 public:
  explicit SimChannel(std::unique_ptr<SimService> service) : service_(std::move(service)) {}

  void send(std::span<const uint8_t> data) override {
    if (service_) service_->on_bytes(data, *this);
  }

  Bytes drain() override {
    Bytes out;
    out.swap(inbox_);
    return out;
  }

  void shutdown_send() override {
    if (service_) service_->on_half_close(*this);
  }

  bool peer_closed() override { return service_eof_ && inbox_.empty(); }
  bool broken() override { return false; }

  void push(std::span<const uint8_t> data) override {
    inbox_.insert(inbox_.end(), data.begin(), data.end());
  }

  void close() override { service_eof_ = true; }

 private:
  std::unique_ptr<SimService> service_;
  Bytes inbox_;
  bool service_eof_ = false;
};

class SimDialer : public Dialer {
 public:
  using ServiceFactory = std::function<std::unique_ptr<SimService>()>;

  void register_service(const std::string& host, uint16_t port, ServiceFactory factory) {
    services_[host + ":" + std::to_string(port)] = std::move(factory);
  }

  void dial(uint64_t request_id, const std::string& host, uint16_t port) override {
    DialOutcome out;
    auto it = services_.find(host + ":" + std::to_string(port));
    if (it == services_.end()) {
      out.error = DialError::kRefused;
    } else {
      out.channel = std::make_unique<SimChannel>(it->second());
    }
    results_.emplace_back(request_id, std::move(out));
  }

  std::vector<std::pair<uint64_t, DialOutcome>> poll_results() override {
    std::vector<std::pair<uint64_t, DialOutcome>> out;
    out.swap(results_);
    return out;
  }

 private:
  std::map<std::string, ServiceFactory> services_;
  std::vector<std::pair<uint64_t, DialOutcome>> results_;
};

}  // namespace sweet::netio
