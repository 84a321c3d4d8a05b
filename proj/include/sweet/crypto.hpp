#pragma once

#include <sodium.h>

#include <array>
#include <cstdint>
#include <fstream>
#include <mutex>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include "sweet/bytes.hpp"
#include "sweet/clock.hpp"
#include "sweet/wire.hpp"

namespace sweet::crypto {

struct KeyAgreementError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AuthFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonceMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void ensure_init() {
  static std::once_flag once;
  std::call_once(once, [] {
    if (sodium_init() < 0) throw std::runtime_error("sodium_init failed");
  });
}
}  // namespace detail

// Randomness source; injectable so simulated runs are reproducible.
class Rng {
 public:
  virtual ~Rng() = default;
  virtual void fill(std::span<uint8_t> out) = 0;
};

class SystemRng : public Rng {
 public:
  void fill(std::span<uint8_t> out) override {
    detail::ensure_init();
    randombytes_buf(out.data(), out.size());
  }
};

// Deterministic stream for tests and simulation. Not for production keys.
class SeededRng : public Rng {
 public:
  explicit SeededRng(uint64_t seed) : gen_(seed) {}

  void fill(std::span<uint8_t> out) override {
    for (auto& b : out) {
      if (have_ == 0) {
        word_ = gen_();
        have_ = 8;
      }
      b = static_cast<uint8_t>(word_);
      word_ >>= 8;
      have_--;
    }
  }

  uint64_t next_u64() {
    std::array<uint8_t, 8> b;
    fill(b);
    return read_u64be(b.data());
  }

 private:
  std::mt19937_64 gen_;
  uint64_t word_ = 0;
  int have_ = 0;
};

using Key32 = std::array<uint8_t, 32>;
using Nonce = std::array<uint8_t, wire::kNonceLen>;

struct SharedKey {
  Key32 key{};

  SharedKey() = default;
  SharedKey(const SharedKey&) = default;
  SharedKey& operator=(const SharedKey&) = default;
  ~SharedKey() { sodium_memzero(key.data(), key.size()); }

  bool operator==(const SharedKey& o) const { return key == o.key; }
};

struct DhKeyPair {
  Key32 private_scalar{};
  Key32 public_point{};

  DhKeyPair() = default;
  DhKeyPair(const DhKeyPair&) = default;
  DhKeyPair& operator=(const DhKeyPair&) = default;
  ~DhKeyPair() { sodium_memzero(private_scalar.data(), private_scalar.size()); }
};

inline std::array<uint8_t, 32> sha256(std::span<const uint8_t> in) {
  detail::ensure_init();
  std::array<uint8_t, 32> out;
  crypto_hash_sha256(out.data(), in.data(), in.size());
  return out;
}

// HKDF-SHA256 with empty salt, single expand block (out fits one hash).
inline Key32 hkdf_sha256(std::span<const uint8_t> ikm, std::string_view info) {
  detail::ensure_init();
  std::array<uint8_t, 32> zeros{};
  std::array<uint8_t, 32> prk;
  crypto_auth_hmacsha256_state st;
  crypto_auth_hmacsha256_init(&st, zeros.data(), zeros.size());
  crypto_auth_hmacsha256_update(&st, ikm.data(), ikm.size());
  crypto_auth_hmacsha256_final(&st, prk.data());

  Key32 out;
  uint8_t one = 0x01;
  crypto_auth_hmacsha256_init(&st, prk.data(), prk.size());
  crypto_auth_hmacsha256_update(&st, reinterpret_cast<const uint8_t*>(info.data()), info.size());
  crypto_auth_hmacsha256_update(&st, &one, 1);
  crypto_auth_hmacsha256_final(&st, out.data());
  sodium_memzero(prk.data(), prk.size());
  return out;
}

inline DhKeyPair dh_generate(Rng& rng) {
  detail::ensure_init();
  DhKeyPair kp;
  do {
    rng.fill(kp.private_scalar);
  } while (sodium_is_zero(kp.private_scalar.data(), kp.private_scalar.size()));
  crypto_scalarmult_base(kp.public_point.data(), kp.private_scalar.data());
  return kp;
}

inline DhKeyPair dh_from_private(const Key32& private_scalar) {
  detail::ensure_init();
  DhKeyPair kp;
  kp.private_scalar = private_scalar;
  crypto_scalarmult_base(kp.public_point.data(), kp.private_scalar.data());
  return kp;
}

constexpr std::string_view kTunnelKdfLabel = "sweet-v1-tunnel";

// X25519 then HKDF under a fixed label. Commutative across the two sides.
inline SharedKey derive_shared(const Key32& my_private, const Key32& their_public) {
  detail::ensure_init();
  Key32 raw;
  if (crypto_scalarmult(raw.data(), my_private.data(), their_public.data()) != 0)
    throw KeyAgreementError("invalid or low-order peer public key");
  SharedKey sk;
  sk.key = hkdf_sha256(raw, kTunnelKdfLabel);
  sodium_memzero(raw.data(), raw.size());
  return sk;
}

enum class Direction : uint8_t { kC2S = 1, kS2C = 2 };

inline Direction opposite(Direction d) {
  return d == Direction::kC2S ? Direction::kS2C : Direction::kC2S;
}

// Nonce = direction byte repeated 4 times, then seq big-endian. The sender's
// per-direction counter makes reuse structurally impossible.
inline Nonce make_nonce(Direction dir, uint64_t seq) {
  Nonce n;
  n[0] = n[1] = n[2] = n[3] = static_cast<uint8_t>(dir);
  for (int i = 0; i < 8; i++)
    n[4 + i] = static_cast<uint8_t>(seq >> (8 * (7 - i)));
  return n;
}

inline uint64_t seq_from_nonce(const Nonce& n) { return read_u64be(n.data() + 4); }

inline Bytes make_ad(wire::BlobKind kind) {
  Bytes ad(wire::kMagic, wire::kMagic + 4);
  ad.push_back(static_cast<uint8_t>(kind));
  return ad;
}

inline Bytes aead_seal(const Key32& key, const Nonce& nonce,
                       std::span<const uint8_t> ad, std::span<const uint8_t> plaintext) {
  detail::ensure_init();
  Bytes ct(plaintext.size() + crypto_aead_chacha20poly1305_ietf_ABYTES);
  unsigned long long clen = 0;
  crypto_aead_chacha20poly1305_ietf_encrypt(
      ct.data(), &clen, plaintext.data(), plaintext.size(), ad.data(), ad.size(),
      nullptr, nonce.data(), key.data());
  ct.resize(clen);
  return ct;
}

inline Bytes aead_open(const Key32& key, const Nonce& nonce,
                       std::span<const uint8_t> ad, std::span<const uint8_t> ciphertext) {
  detail::ensure_init();
  if (ciphertext.size() < crypto_aead_chacha20poly1305_ietf_ABYTES)
    throw AuthFailure("ciphertext shorter than tag");
  Bytes pt(ciphertext.size() - crypto_aead_chacha20poly1305_ietf_ABYTES);
  unsigned long long plen = 0;
  if (crypto_aead_chacha20poly1305_ietf_decrypt(
          pt.data(), &plen, nullptr, ciphertext.data(), ciphertext.size(),
          ad.data(), ad.size(), nonce.data(), key.data()) != 0)
    throw AuthFailure("authentication failed");
  pt.resize(plen);
  return pt;
}

struct Sealed {
  Nonce nonce{};
  Bytes ciphertext;
};

inline Sealed seal(const SharedKey& key, Direction dir, uint64_t seq,
                   std::span<const uint8_t> plaintext,
                   wire::BlobKind ad_kind = wire::BlobKind::kTunnel) {
  Sealed s;
  s.nonce = make_nonce(dir, seq);
  s.ciphertext = aead_seal(key.key, s.nonce, make_ad(ad_kind), plaintext);
  return s;
}

inline Bytes open(const SharedKey& key, Direction dir, uint64_t seq,
                  const Nonce& nonce, std::span<const uint8_t> ciphertext,
                  wire::BlobKind ad_kind = wire::BlobKind::kTunnel) {
  if (nonce != make_nonce(dir, seq))
    throw NonceMismatch("nonce does not match direction/sequence");
  return aead_open(key.key, nonce, make_ad(ad_kind), ciphertext);
}

// ---------------------------------------------------------------------------
// Hashcash-style client puzzle

struct PuzzleChallenge {
  std::array<uint8_t, 16> nonce{};
  uint8_t difficulty = 0;  // required leading zero bits, config-capped at 32
  Micros issued_at = 0;
  Micros ttl = 600 * kMicrosPerSecond;
};

inline PuzzleChallenge make_challenge(Rng& rng, uint8_t difficulty, Micros now,
                                      Micros ttl = 600 * kMicrosPerSecond) {
  PuzzleChallenge c;
  rng.fill(c.nonce);
  c.difficulty = difficulty;
  c.issued_at = now;
  c.ttl = ttl;
  return c;
}

inline int leading_zero_bits(std::span<const uint8_t> h) {
  int bits = 0;
  for (uint8_t b : h) {
    if (b == 0) {
      bits += 8;
      continue;
    }
    for (int i = 7; i >= 0; i--) {
      if (b & (1u << i)) return bits;
      bits++;
    }
  }
  return bits;
}

inline bool puzzle_solution_ok(const std::array<uint8_t, 16>& nonce, uint8_t difficulty,
                               uint64_t counter) {
  Bytes msg(nonce.begin(), nonce.end());
  put_u64be(msg, counter);
  return leading_zero_bits(sha256(msg)) >= difficulty;
}

// Least counter whose hash clears the difficulty. Expected 2^difficulty
// evaluations; callers cap the difficulty before searching.
inline uint64_t puzzle_solve(const PuzzleChallenge& c) {
  for (uint64_t counter = 0;; counter++) {
    if (puzzle_solution_ok(c.nonce, c.difficulty, counter)) return counter;
  }
}

enum class PuzzleVerdict { kOk, kBadSolution, kExpired };

inline PuzzleVerdict puzzle_verify(const PuzzleChallenge& c, uint64_t counter, Micros now) {
  if (now >= c.issued_at + c.ttl) return PuzzleVerdict::kExpired;
  return puzzle_solution_ok(c.nonce, c.difficulty, counter) ? PuzzleVerdict::kOk
                                                            : PuzzleVerdict::kBadSolution;
}

// ---------------------------------------------------------------------------
// Raw 32-byte key files (server master key, server DH private key)

inline Key32 read_key_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open key file: " + path);
  Key32 key;
  in.read(reinterpret_cast<char*>(key.data()), key.size());
  if (in.gcount() != static_cast<std::streamsize>(key.size()) || in.peek() != EOF)
    throw std::runtime_error("key file must be exactly 32 bytes: " + path);
  return key;
}

inline void write_key_file(const std::string& path, const Key32& key) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write key file: " + path);
  out.write(reinterpret_cast<const char*>(key.data()), key.size());
  if (!out) throw std::runtime_error("short write to key file: " + path);
}

// Accepts 32-byte keys as base64 or hex text.
inline Key32 parse_key_text(std::string_view text) {
  size_t b = text.find_first_not_of(" \t\r\n");
  size_t e = text.find_last_not_of(" \t\r\n");
  std::string t = (b == std::string_view::npos) ? std::string() : std::string(text.substr(b, e - b + 1));
  Bytes raw;
  try {
    raw = hex_decode(t);
  } catch (const std::exception&) {
    raw = base64_decode(t);
  }
  if (raw.size() != 32) throw std::runtime_error("key must decode to 32 bytes");
  Key32 k;
  std::copy(raw.begin(), raw.end(), k.begin());
  return k;
}

}  // namespace sweet::crypto
