#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "sweet/netio.hpp"

namespace test_support {

// Loopback TCP echo fixture. Tracks live connections for leak checks.
class EchoServer {
 public:
  EchoServer() {
    listener_ = sweet::netio::Socket(::socket(AF_INET, SOCK_STREAM, 0));
    int on = 1;
    setsockopt(listener_.fd(), SOL_SOCKET, SO_REUSEADDR, &on, sizeof(on));
    sockaddr_in sin{};
    sin.sin_family = AF_INET;
    sin.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    sin.sin_port = 0;
    ::bind(listener_.fd(), reinterpret_cast<sockaddr*>(&sin), sizeof(sin));
    ::listen(listener_.fd(), 16);
    socklen_t len = sizeof(sin);
    getsockname(listener_.fd(), reinterpret_cast<sockaddr*>(&sin), &len);
    port_ = ntohs(sin.sin_port);
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  ~EchoServer() {
    ::shutdown(listener_.fd(), SHUT_RDWR);  // wakes the blocked accept
    listener_.close();
    if (accept_thread_.joinable()) accept_thread_.join();
    {
      std::lock_guard lock(mu_);
      for (int fd : fds_) ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : workers_)
      if (t.joinable()) t.join();
  }

  uint16_t port() const { return port_; }
  int live() const { return live_; }
  int accepted() const { return accepted_; }

 private:
  void accept_loop() {
    while (true) {
      int fd = ::accept(listener_.fd(), nullptr, nullptr);
      if (fd < 0) return;
      accepted_++;
      live_++;
      std::lock_guard lock(mu_);
      fds_.push_back(fd);
      workers_.emplace_back([this, fd] {
        uint8_t buf[8192];
        while (true) {
          ssize_t n = ::recv(fd, buf, sizeof(buf), 0);
          if (n <= 0) break;
          size_t off = 0;
          while (off < size_t(n)) {
            ssize_t w = ::send(fd, buf + off, size_t(n) - off, MSG_NOSIGNAL);
            if (w <= 0) break;
            off += size_t(w);
          }
        }
        ::close(fd);
        live_--;
      });
    }
  }

  sweet::netio::Socket listener_;
  std::thread accept_thread_;
  std::mutex mu_;
  std::vector<std::thread> workers_;
  std::vector<int> fds_;
  uint16_t port_ = 0;
  std::atomic<int> live_{0};
  std::atomic<int> accepted_{0};
};

inline bool wait_until(const std::function<bool()>& pred, int timeout_ms = 5000) {
  auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  return pred();
}

}  // namespace test_support
