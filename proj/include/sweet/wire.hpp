#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "sweet/bytes.hpp"

// Binary formats crossing the mail carrier. All integers big-endian, all
// fields fixed-width; encodings are canonical (decode . encode == id and
// encode . decode == id on accepted inputs). Layouts are documented with
// worked examples in docs/wire.md.

namespace sweet::wire {

constexpr size_t kMaxFramePayload = 65535;
constexpr size_t kMaxFramesPerEmail = 1024;
constexpr char kMagic[4] = {'S', 'W', 'T', '1'};
constexpr uint8_t kVersion = 1;
constexpr size_t kNonceLen = 12;
constexpr size_t kAeadTagLen = 16;
// REG_CONFIRM carries AEAD("OK"): 2 plaintext bytes plus the tag.
constexpr size_t kConfirmCiphertextLen = 2 + kAeadTagLen;

enum class DecodeErr {
  kTruncated,
  kUnknownKind,
  kTrailingBytes,
  kUnsupportedVersion,
  kBadMagic,
  kMalformed,
};

struct DecodeError : std::runtime_error {
  DecodeErr err;
  DecodeError(DecodeErr e, const std::string& what)
      : std::runtime_error("decode: " + what), err(e) {}
};

struct EncodingError : std::runtime_error {
  explicit EncodingError(const std::string& what)
      : std::runtime_error("encode: " + what) {}
};

class Cursor {
 public:
  explicit Cursor(std::span<const uint8_t> data) : data_(data) {}

  size_t remaining() const { return data_.size() - pos_; }
  std::span<const uint8_t> tail() const { return data_.subspan(pos_); }

  uint8_t u8() { return take(1)[0]; }
  uint16_t u16be() { return read_u16be(take(2).data()); }
  uint32_t u32be() { return read_u32be(take(4).data()); }
  uint64_t u64be() { return read_u64be(take(8).data()); }

  std::span<const uint8_t> take(size_t n) {
    if (remaining() < n)
      throw DecodeError(DecodeErr::kTruncated, "input ends mid-field");
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  template <size_t N>
  std::array<uint8_t, N> take_array() {
    auto s = take(N);
    std::array<uint8_t, N> a;
    std::copy(s.begin(), s.end(), a.begin());
    return a;
  }

  void expect_end(const char* what) {
    if (remaining() != 0)
      throw DecodeError(DecodeErr::kTrailingBytes, std::string(what) + ": trailing bytes");
  }

 private:
  std::span<const uint8_t> data_;
  size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Frame

enum class FrameKind : uint8_t { kOpen = 1, kData = 2, kClose = 3, kReset = 4 };
enum class ProxySelector : uint8_t { kSocks = 0, kHttp = 1 };

struct Frame {
  FrameKind kind = FrameKind::kData;
  uint32_t stream_id = 0;
  ProxySelector selector = ProxySelector::kSocks;  // meaningful on OPEN only
  Bytes payload;

  bool operator==(const Frame&) const = default;

  static Frame open(uint32_t stream_id, ProxySelector sel) {
    return Frame{FrameKind::kOpen, stream_id, sel, {}};
  }
  static Frame data(uint32_t stream_id, Bytes payload) {
    return Frame{FrameKind::kData, stream_id, ProxySelector::kSocks, std::move(payload)};
  }
  static Frame close(uint32_t stream_id) {
    return Frame{FrameKind::kClose, stream_id, ProxySelector::kSocks, {}};
  }
  static Frame reset(uint32_t stream_id) {
    return Frame{FrameKind::kReset, stream_id, ProxySelector::kSocks, {}};
  }
};

// Encoded size: kind(1) selector(1) stream_id(4) payload_len(2) payload.
inline size_t encoded_size(const Frame& f) { return 8 + f.payload.size(); }

namespace detail {

inline void check_frame(const Frame& f, const char* ctx) {
  auto fail_encode = [&](const std::string& m) { throw EncodingError(std::string(ctx) + ": " + m); };
  uint8_t k = static_cast<uint8_t>(f.kind);
  if (k < 1 || k > 4) fail_encode("unknown frame kind");
  if (f.stream_id == 0) fail_encode("stream_id 0 is reserved");
  if (f.kind != FrameKind::kData && !f.payload.empty())
    fail_encode("only DATA frames carry a payload");
  if (f.payload.size() > kMaxFramePayload) fail_encode("payload too long");
  uint8_t sel = static_cast<uint8_t>(f.selector);
  if (sel > 1) fail_encode("bad proxy selector");
  if (f.kind != FrameKind::kOpen && sel != 0)
    fail_encode("proxy selector only meaningful on OPEN");
}

}  // namespace detail

inline void encode_frame_into(Bytes& out, const Frame& f) {
  detail::check_frame(f, "frame");
  put_u8(out, static_cast<uint8_t>(f.kind));
  put_u8(out, static_cast<uint8_t>(f.selector));
  put_u32be(out, f.stream_id);
  put_u16be(out, static_cast<uint16_t>(f.payload.size()));
  put_bytes(out, f.payload);
}

inline Bytes encode_frame(const Frame& f) {
  Bytes out;
  out.reserve(encoded_size(f));
  encode_frame_into(out, f);
  return out;
}

// Consumes exactly one frame, returns it plus the unconsumed tail.
inline std::pair<Frame, std::span<const uint8_t>> decode_frame(std::span<const uint8_t> b) {
  Cursor cur(b);
  Frame f;
  uint8_t kind = cur.u8();
  if (kind < 1 || kind > 4)
    throw DecodeError(DecodeErr::kUnknownKind, "unknown frame kind");
  f.kind = static_cast<FrameKind>(kind);
  uint8_t sel = cur.u8();
  f.selector = static_cast<ProxySelector>(sel);
  f.stream_id = cur.u32be();
  uint16_t len = cur.u16be();
  auto payload = cur.take(len);
  f.payload.assign(payload.begin(), payload.end());
  if (sel > 1 || f.stream_id == 0 ||
      (f.kind != FrameKind::kData && len != 0) ||
      (f.kind != FrameKind::kOpen && sel != 0))
    throw DecodeError(DecodeErr::kMalformed, "frame violates invariants");
  return {std::move(f), cur.tail()};
}

// ---------------------------------------------------------------------------
// EmailPayload

struct EmailPayload {
  uint64_t seq = 0;  // per-direction counter, starts at 1
  std::vector<Frame> frames;

  bool operator==(const EmailPayload&) const = default;
};

inline size_t encoded_size(const EmailPayload& p) {
  size_t n = 10;
  for (const auto& f : p.frames) n += encoded_size(f);
  return n;
}

inline Bytes encode_payload(const EmailPayload& p) {
  if (p.frames.empty()) throw EncodingError("payload: no frames");
  if (p.frames.size() > kMaxFramesPerEmail) throw EncodingError("payload: too many frames");
  Bytes out;
  out.reserve(encoded_size(p));
  put_u64be(out, p.seq);
  put_u16be(out, static_cast<uint16_t>(p.frames.size()));
  for (const auto& f : p.frames) encode_frame_into(out, f);
  return out;
}

inline EmailPayload decode_payload(std::span<const uint8_t> b) {
  Cursor cur(b);
  EmailPayload p;
  p.seq = cur.u64be();
  uint16_t count = cur.u16be();
  if (count == 0 || count > kMaxFramesPerEmail)
    throw DecodeError(DecodeErr::kMalformed, "payload frame count out of range");
  p.frames.reserve(count);
  std::span<const uint8_t> rest = cur.tail();
  for (uint16_t i = 0; i < count; i++) {
    auto [f, tail] = decode_frame(rest);
    p.frames.push_back(std::move(f));
    rest = tail;
  }
  if (!rest.empty())
    throw DecodeError(DecodeErr::kTrailingBytes, "payload: trailing bytes");
  return p;
}

// ---------------------------------------------------------------------------
// Registration messages

enum class RegKind : uint8_t { kRequest = 1, kChallenge = 2, kResponse = 3, kConfirm = 4 };

struct RegRequest {
  bool operator==(const RegRequest&) const = default;
};

struct RegChallenge {
  std::array<uint8_t, 16> puzzle_nonce{};
  uint8_t difficulty = 0;  // required leading zero bits
  std::array<uint8_t, 32> server_dh_public{};

  bool operator==(const RegChallenge&) const = default;
};

struct RegResponse {
  uint64_t puzzle_solution = 0;
  std::array<uint8_t, 32> client_dh_public{};

  bool operator==(const RegResponse&) const = default;
};

struct RegConfirm {
  std::array<uint8_t, kNonceLen> nonce{};
  std::array<uint8_t, kConfirmCiphertextLen> ciphertext{};

  bool operator==(const RegConfirm&) const = default;
};

struct RegMessage {
  uint8_t version = kVersion;
  std::variant<RegRequest, RegChallenge, RegResponse, RegConfirm> body;

  RegKind kind() const { return static_cast<RegKind>(body.index() + 1); }

  bool operator==(const RegMessage&) const = default;
};

inline Bytes encode_reg(const RegMessage& m) {
  Bytes out;
  put_u8(out, static_cast<uint8_t>(m.kind()));
  put_u8(out, m.version);
  if (const auto* c = std::get_if<RegChallenge>(&m.body)) {
    put_bytes(out, c->puzzle_nonce);
    put_u8(out, c->difficulty);
    put_bytes(out, c->server_dh_public);
  } else if (const auto* r = std::get_if<RegResponse>(&m.body)) {
    put_u64be(out, r->puzzle_solution);
    put_bytes(out, r->client_dh_public);
  } else if (const auto* k = std::get_if<RegConfirm>(&m.body)) {
    put_bytes(out, k->nonce);
    put_bytes(out, k->ciphertext);
  }
  return out;
}

inline RegMessage decode_reg(std::span<const uint8_t> b) {
  Cursor cur(b);
  uint8_t kind = cur.u8();
  if (kind < 1 || kind > 4)
    throw DecodeError(DecodeErr::kUnknownKind, "unknown registration message kind");
  uint8_t version = cur.u8();
  if (version != kVersion)
    throw DecodeError(DecodeErr::kUnsupportedVersion, "unsupported registration version");
  RegMessage m;
  m.version = version;
  switch (static_cast<RegKind>(kind)) {
    case RegKind::kRequest:
      m.body = RegRequest{};
      break;
    case RegKind::kChallenge: {
      RegChallenge c;
      c.puzzle_nonce = cur.take_array<16>();
      c.difficulty = cur.u8();
      c.server_dh_public = cur.take_array<32>();
      m.body = c;
      break;
    }
    case RegKind::kResponse: {
      RegResponse r;
      r.puzzle_solution = cur.u64be();
      r.client_dh_public = cur.take_array<32>();
      m.body = r;
      break;
    }
    case RegKind::kConfirm: {
      RegConfirm k;
      k.nonce = cur.take_array<kNonceLen>();
      k.ciphertext = cur.take_array<kConfirmCiphertextLen>();
      m.body = k;
      break;
    }
  }
  cur.expect_end("registration message");
  return m;
}

// ---------------------------------------------------------------------------
// WireBlob: the attachment container

enum class BlobKind : uint8_t { kRegistration = 1, kTunnel = 2 };

struct TunnelBlob {
  std::array<uint8_t, kNonceLen> nonce{};
  Bytes ciphertext;  // AEAD over an encoded EmailPayload

  bool operator==(const TunnelBlob&) const = default;
};

struct WireBlob {
  std::variant<RegMessage, TunnelBlob> body;

  BlobKind kind() const { return static_cast<BlobKind>(body.index() + 1); }

  bool operator==(const WireBlob&) const = default;
};

inline bool has_magic(std::span<const uint8_t> b) {
  return b.size() >= 4 && std::memcmp(b.data(), kMagic, 4) == 0;
}

inline Bytes encode_blob(const WireBlob& blob) {
  Bytes out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u8(out, static_cast<uint8_t>(blob.kind()));
  if (const auto* reg = std::get_if<RegMessage>(&blob.body)) {
    Bytes body = encode_reg(*reg);
    put_bytes(out, body);
  } else {
    const auto& t = std::get<TunnelBlob>(blob.body);
    if (t.ciphertext.size() < kAeadTagLen)
      throw EncodingError("tunnel blob: ciphertext shorter than tag");
    put_bytes(out, t.nonce);
    put_bytes(out, t.ciphertext);
  }
  return out;
}

// Rejects non-magic inputs before anything else is inspected.
inline WireBlob decode_blob(std::span<const uint8_t> b) {
  if (!has_magic(b))
    throw DecodeError(DecodeErr::kBadMagic, "missing SWT1 magic");
  Cursor cur(b);
  cur.take(4);
  uint8_t kind = cur.u8();
  WireBlob blob;
  switch (kind) {
    case 1:
      blob.body = decode_reg(cur.tail());
      break;
    case 2: {
      TunnelBlob t;
      t.nonce = cur.take_array<kNonceLen>();
      auto ct = cur.tail();
      if (ct.size() < kAeadTagLen)
        throw DecodeError(DecodeErr::kTruncated, "tunnel blob: ciphertext shorter than tag");
      t.ciphertext.assign(ct.begin(), ct.end());
      blob.body = std::move(t);
      break;
    }
    default:
      throw DecodeError(DecodeErr::kUnknownKind, "unknown blob kind");
  }
  return blob;
}

}  // namespace sweet::wire
