#include <catch2/catch_amalgamated.hpp>

#include "sweet/wire.hpp"

#include "support/generators.hpp"

using namespace sweet;
using namespace sweet::wire;

namespace {

Bytes hex(std::string_view s) { return hex_decode(s); }

}  // namespace

TEST_CASE("frame encoding matches the documented layout") {
  CHECK(encode_frame(Frame::close(1)) == hex("0300000000010000"));
  CHECK(encode_frame(Frame::data(1, to_bytes("hi"))) == hex("0200000000010002686" "9"));
  CHECK(encode_frame(Frame::open(7, ProxySelector::kHttp)) == hex("0101000000070000"));
}

TEST_CASE("frame encoding rejects invalid frames") {
  Frame zero_stream = Frame::data(0, to_bytes("x"));
  CHECK_THROWS_AS(encode_frame(zero_stream), EncodingError);

  Frame oversize = Frame::data(1, Bytes(kMaxFramePayload + 1, 0xab));
  CHECK_THROWS_AS(encode_frame(oversize), EncodingError);

  Frame open_with_payload{FrameKind::kOpen, 1, ProxySelector::kSocks, to_bytes("x")};
  CHECK_THROWS_AS(encode_frame(open_with_payload), EncodingError);

  Frame selector_on_close{FrameKind::kClose, 1, ProxySelector::kHttp, {}};
  CHECK_THROWS_AS(encode_frame(selector_on_close), EncodingError);
}

TEST_CASE("frame decoding consumes one frame and returns the tail") {
  Bytes buf = hex("0300000000010000ff");
  auto [f, tail] = decode_frame(buf);
  CHECK(f == Frame::close(1));
  REQUIRE(tail.size() == 1);
  CHECK(tail[0] == 0xff);
}

TEST_CASE("frame decoding error paths") {
  Bytes one_byte = hex("02");
  CHECK_THROWS_MATCHES(decode_frame(one_byte), DecodeError,
                       Catch::Matchers::Predicate<DecodeError>([](const DecodeError& e) {
                         return e.err == DecodeErr::kTruncated;
                       }));

  Bytes unknown_kind = hex("0900000000010000");
  CHECK_THROWS_MATCHES(decode_frame(unknown_kind), DecodeError,
                       Catch::Matchers::Predicate<DecodeError>([](const DecodeError& e) {
                         return e.err == DecodeErr::kUnknownKind;
                       }));

  // Declared payload longer than the remaining input.
  Bytes short_payload = hex("020000000001000568");
  CHECK_THROWS_MATCHES(decode_frame(short_payload), DecodeError,
                       Catch::Matchers::Predicate<DecodeError>([](const DecodeError& e) {
                         return e.err == DecodeErr::kTruncated;
                       }));

  Bytes zero_stream = hex("0200000000000000");
  CHECK_THROWS_MATCHES(decode_frame(zero_stream), DecodeError,
                       Catch::Matchers::Predicate<DecodeError>([](const DecodeError& e) {
                         return e.err == DecodeErr::kMalformed;
                       }));
}

TEST_CASE("payload encoding matches the documented layout") {
  EmailPayload p{1, {Frame::close(1)}};
  CHECK(encode_payload(p) == hex("000000000000000100010300000000010000"));
}

TEST_CASE("payload frame count limits") {
  CHECK_THROWS_AS(encode_payload(EmailPayload{1, {}}), EncodingError);
  EmailPayload too_many{1, std::vector<Frame>(kMaxFramesPerEmail + 1, Frame::close(1))};
  CHECK_THROWS_AS(encode_payload(too_many), EncodingError);
  EmailPayload at_cap{1, std::vector<Frame>(kMaxFramesPerEmail, Frame::close(1))};
  CHECK(decode_payload(encode_payload(at_cap)) == at_cap);
}

TEST_CASE("payload decode rejects truncation and trailing bytes") {
  EmailPayload p{7, {Frame::close(1), Frame::data(3, to_bytes("abc"))}};
  Bytes good = encode_payload(p);
  CHECK(decode_payload(good) == p);

  Bytes declared_two_has_one = encode_payload(EmailPayload{7, {Frame::close(1)}});
  declared_two_has_one[9] = 2;  // frame_count low byte
  CHECK_THROWS_MATCHES(decode_payload(declared_two_has_one), DecodeError,
                       Catch::Matchers::Predicate<DecodeError>([](const DecodeError& e) {
                         return e.err == DecodeErr::kTruncated;
                       }));

  Bytes trailing = good;
  trailing.push_back(0x00);
  CHECK_THROWS_MATCHES(decode_payload(trailing), DecodeError,
                       Catch::Matchers::Predicate<DecodeError>([](const DecodeError& e) {
                         return e.err == DecodeErr::kTrailingBytes;
                       }));
}

TEST_CASE("registration message layouts") {
  CHECK(encode_reg(RegMessage{1, RegRequest{}}) == hex("0101"));

  Bytes v2 = hex("0102");
  CHECK_THROWS_MATCHES(decode_reg(v2), DecodeError,
                       Catch::Matchers::Predicate<DecodeError>([](const DecodeError& e) {
                         return e.err == DecodeErr::kUnsupportedVersion;
                       }));

  RegChallenge c;
  c.puzzle_nonce.fill(0x11);
  c.difficulty = 12;
  c.server_dh_public.fill(0x22);
  RegMessage m{1, c};
  CHECK(decode_reg(encode_reg(m)) == m);
  // kind | version | nonce(16) | difficulty | pubkey(32)
  CHECK(encode_reg(m).size() == 2 + 16 + 1 + 32);
}

TEST_CASE("wire blob magic gate") {
  Bytes no_magic = to_bytes("QWT1aaaa");
  CHECK_THROWS_MATCHES(decode_blob(no_magic), DecodeError,
                       Catch::Matchers::Predicate<DecodeError>([](const DecodeError& e) {
                         return e.err == DecodeErr::kBadMagic;
                       }));
  CHECK_FALSE(has_magic(Bytes{}));

  WireBlob reg{RegMessage{1, RegRequest{}}};
  Bytes enc = encode_blob(reg);
  CHECK(enc.size() == 7);
  CHECK(has_magic(enc));
  CHECK(decode_blob(enc) == reg);
}

TEST_CASE("round trip and canonicality over random wire values") {
  test_support::Gen gen(0x5eed0001);
  for (int i = 0; i < 500; i++) {
    Frame f = gen.frame();
    Bytes enc = encode_frame(f);
    auto [back, tail] = decode_frame(enc);
    CHECK(back == f);
    CHECK(tail.empty());

    EmailPayload p = gen.payload(8);
    Bytes penc = encode_payload(p);
    CHECK(decode_payload(penc) == p);
    CHECK(encode_payload(decode_payload(penc)) == penc);

    RegMessage m = gen.reg_message();
    Bytes renc = encode_reg(m);
    CHECK(decode_reg(renc) == m);
    CHECK(encode_reg(decode_reg(renc)) == renc);

    WireBlob b = gen.blob();
    Bytes benc = encode_blob(b);
    CHECK(decode_blob(benc) == b);
    CHECK(encode_blob(decode_blob(benc)) == benc);
  }
}

TEST_CASE("fuzzed inputs only ever raise DecodeError") {
  test_support::Gen gen(0x5eed0002);
  int decode_ok = 0;
  for (int i = 0; i < 2000; i++) {
    Bytes junk = gen.bytes(gen.below(64));
    try {
      decode_blob(junk);
      decode_ok++;
    } catch (const DecodeError&) {
    }
    try {
      decode_payload(junk);
      decode_ok++;
    } catch (const DecodeError&) {
    }
    // Mutated valid encodings must never escape the DecodeError contract.
    Bytes enc = encode_blob(gen.blob());
    if (!enc.empty()) {
      enc[gen.below(enc.size())] ^= uint8_t(1 + gen.below(255));
      try {
        decode_blob(enc);
        decode_ok++;
      } catch (const DecodeError&) {
      }
    }
  }
  // Some mutations decode fine (e.g. flipped key byte); that is not an error.
  CHECK(decode_ok >= 0);
}
