#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "sweet/bytes.hpp"
#include "sweet/wire.hpp"

// Deterministic generators for property-style tests.
namespace test_support {

class Gen {
 public:
  explicit Gen(uint64_t seed) : rng_(seed) {}

  uint64_t u64() { return rng_(); }

  // Uniform in [0, n); n must be > 0.
  uint64_t below(uint64_t n) { return rng_() % n; }

  uint64_t range(uint64_t lo, uint64_t hi) { return lo + below(hi - lo + 1); }

  bool chance(double p) { return double(rng_() >> 11) * 0x1.0p-53 < p; }

  sweet::Bytes bytes(size_t n) {
    sweet::Bytes b(n);
    for (auto& c : b) c = static_cast<uint8_t>(rng_());
    return b;
  }

  template <size_t N>
  std::array<uint8_t, N> array() {
    std::array<uint8_t, N> a;
    for (auto& c : a) c = static_cast<uint8_t>(rng_());
    return a;
  }

  sweet::wire::Frame frame(size_t max_payload = 512) {
    using namespace sweet::wire;
    uint32_t sid = static_cast<uint32_t>(range(1, 0xffffffffULL));
    switch (below(4)) {
      case 0:
        return Frame::open(sid, chance(0.5) ? ProxySelector::kHttp : ProxySelector::kSocks);
      case 1:
        return Frame::data(sid, bytes(below(max_payload + 1)));
      case 2:
        return Frame::close(sid);
      default:
        return Frame::reset(sid);
    }
  }

  sweet::wire::EmailPayload payload(size_t max_frames = 8) {
    sweet::wire::EmailPayload p;
    p.seq = u64();
    size_t n = range(1, max_frames);
    for (size_t i = 0; i < n; i++) p.frames.push_back(frame());
    return p;
  }

  sweet::wire::RegMessage reg_message() {
    using namespace sweet::wire;
    RegMessage m;
    switch (below(4)) {
      case 0:
        m.body = RegRequest{};
        break;
      case 1: {
        RegChallenge c;
        c.puzzle_nonce = array<16>();
        c.difficulty = static_cast<uint8_t>(below(33));
        c.server_dh_public = array<32>();
        m.body = c;
        break;
      }
      case 2: {
        RegResponse r;
        r.puzzle_solution = u64();
        r.client_dh_public = array<32>();
        m.body = r;
        break;
      }
      default: {
        RegConfirm k;
        k.nonce = array<12>();
        k.ciphertext = array<kConfirmCiphertextLen>();
        m.body = k;
        break;
      }
    }
    return m;
  }

  sweet::wire::WireBlob blob() {
    using namespace sweet::wire;
    WireBlob b;
    if (chance(0.5)) {
      b.body = reg_message();
    } else {
      TunnelBlob t;
      t.nonce = array<12>();
      t.ciphertext = bytes(range(16, 256));
      b.body = std::move(t);
    }
    return b;
  }

  std::string address(const char* domain = "sim.test") {
    return "user" + std::to_string(below(1000000)) + "@" + domain;
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace test_support
