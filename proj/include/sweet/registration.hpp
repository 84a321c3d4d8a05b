#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sweet/bytes.hpp"
#include "sweet/clock.hpp"
#include "sweet/config.hpp"
#include "sweet/crypto.hpp"
#include "sweet/log.hpp"
#include "sweet/mailnet.hpp"
#include "sweet/wire.hpp"

// Registration: the request -> challenge -> response -> confirm handshake
// that establishes a per-client shared key, plus the server's durable
// registration list with expiry and per-day traffic quotas.

namespace sweet::reg {

struct NotRegistered : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StoreError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class RegError {
  kTimeout,
  kPuzzleTooHard,
  kServerKeyMismatch,
  kConfirmAuthFailure,
};

inline const char* to_string(RegError e) {
  switch (e) {
    case RegError::kTimeout: return "timeout";
    case RegError::kPuzzleTooHard: return "puzzle difficulty above configured cap";
    case RegError::kServerKeyMismatch: return "challenge server key differs from advertised key";
    case RegError::kConfirmAuthFailure: return "confirmation failed to authenticate";
  }
  return "unknown";
}

struct RegistrationRecord {
  std::string email_address;
  crypto::SharedKey shared_key;
  Micros registered_at = 0;
  Micros expires_at = 0;
  uint64_t quota_bytes_per_day = 0;
  uint64_t bytes_used = 0;
  Micros quota_window_start = 0;
};

enum class ChargeResult { kOk, kExceeded };

constexpr Micros kQuotaWindow = 86400LL * kMicrosPerSecond;

// Server-side registration list. In-memory map with an append-compacted
// persistence file (regstate.v1): shared keys are sealed under the server
// master key, everything else is plaintext record fields.
class RegStore {
 public:
  RegStore(crypto::Key32 master_key, crypto::Rng& rng)
      : master_key_(master_key), rng_(rng) {}

  // Binds the store to a file: loads existing records and appends updates.
  void open(const std::string& path) {
    path_ = path;
    std::ifstream in(path, std::ios::binary);
    if (in) load_stream(in, path);
  }

  bool is_registered(const std::string& address, Micros now) const {
    auto it = records_.find(address);
    return it != records_.end() && now < it->second.expires_at;
  }

  const RegistrationRecord* find(const std::string& address) const {
    auto it = records_.find(address);
    return it == records_.end() ? nullptr : &it->second;
  }

  void upsert(const RegistrationRecord& rec) {
    records_[rec.email_address] = rec;
    if (!path_.empty()) append_record(rec);
  }

  ChargeResult charge_quota(const std::string& address, uint64_t bytes, Micros now) {
    auto it = records_.find(address);
    if (it == records_.end() || now >= it->second.expires_at)
      throw NotRegistered("no active registration for " + address);
    RegistrationRecord& r = it->second;
    if (now - r.quota_window_start >= kQuotaWindow) {
      r.bytes_used = 0;
      r.quota_window_start = now;
      dirty_ = true;
    }
    if (r.bytes_used + bytes > r.quota_bytes_per_day) return ChargeResult::kExceeded;
    r.bytes_used += bytes;
    dirty_ = true;
    return ChargeResult::kOk;
  }

  size_t size() const { return records_.size(); }
  const std::map<std::string, RegistrationRecord>& records() const { return records_; }

  // Compacting rewrite; also the shutdown path that captures quota counters.
  void save() {
    if (path_.empty()) return;
    std::string tmp = path_ + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw StoreError("cannot write registration state: " + tmp);
      out.write(kFileMagic, 8);
      for (const auto& [addr, rec] : records_) {
        Bytes enc = encode_record(rec);
        Bytes framed;
        put_u32be(framed, static_cast<uint32_t>(enc.size()));
        put_bytes(framed, enc);
        out.write(reinterpret_cast<const char*>(framed.data()), framed.size());
      }
      if (!out) throw StoreError("short write to registration state: " + tmp);
    }
    if (std::rename(tmp.c_str(), path_.c_str()) != 0)
      throw StoreError("cannot replace registration state: " + path_);
    dirty_ = false;
  }

 private:
  static constexpr const char* kFileMagic = "SWEETRS1";
  static constexpr std::string_view kRecordAd = "regstate.v1:";

  Bytes encode_record(const RegistrationRecord& rec) const {
    Bytes out;
    put_u16be(out, static_cast<uint16_t>(rec.email_address.size()));
    put_bytes(out, to_bytes(rec.email_address));
    put_u64be(out, static_cast<uint64_t>(rec.registered_at));
    put_u64be(out, static_cast<uint64_t>(rec.expires_at));
    put_u64be(out, rec.quota_bytes_per_day);
    put_u64be(out, rec.bytes_used);
    put_u64be(out, static_cast<uint64_t>(rec.quota_window_start));
    crypto::Nonce nonce;
    rng_.fill(nonce);
    Bytes ad = to_bytes(std::string(kRecordAd) + rec.email_address);
    Bytes sealed = crypto::aead_seal(master_key_, nonce, ad, rec.shared_key.key);
    put_bytes(out, nonce);
    put_bytes(out, sealed);
    return out;
  }

  RegistrationRecord decode_record(std::span<const uint8_t> b) const {
    wire::Cursor cur(b);
    RegistrationRecord rec;
    uint16_t alen = cur.u16be();
    rec.email_address = sweet::to_string(cur.take(alen));
    rec.registered_at = static_cast<Micros>(cur.u64be());
    rec.expires_at = static_cast<Micros>(cur.u64be());
    rec.quota_bytes_per_day = cur.u64be();
    rec.bytes_used = cur.u64be();
    rec.quota_window_start = static_cast<Micros>(cur.u64be());
    crypto::Nonce nonce = cur.take_array<wire::kNonceLen>();
    auto sealed = cur.tail();
    Bytes ad = to_bytes(std::string(kRecordAd) + rec.email_address);
    Bytes key;
    try {
      key = crypto::aead_open(master_key_, nonce, ad, sealed);
    } catch (const crypto::AuthFailure&) {
      throw StoreError("registration record for " + rec.email_address +
                       " does not decrypt under the master key");
    }
    if (key.size() != 32) throw StoreError("registration record has malformed key");
    std::copy(key.begin(), key.end(), rec.shared_key.key.begin());
    return rec;
  }

  void load_stream(std::istream& in, const std::string& path) {
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kFileMagic, 8) != 0)
      throw StoreError("not a regstate.v1 file: " + path);
    while (true) {
      uint8_t lenbuf[4];
      in.read(reinterpret_cast<char*>(lenbuf), 4);
      if (in.gcount() == 0) break;
      if (in.gcount() != 4) {
        log::warnf("registration state %s has a truncated tail; ignoring", path.c_str());
        break;
      }
      uint32_t len = read_u32be(lenbuf);
      Bytes rec(len);
      in.read(reinterpret_cast<char*>(rec.data()), len);
      if (in.gcount() != static_cast<std::streamsize>(len)) {
        log::warnf("registration state %s has a truncated record; ignoring", path.c_str());
        break;
      }
      try {
        RegistrationRecord r = decode_record(rec);
        records_[r.email_address] = std::move(r);  // later appends win
      } catch (const wire::DecodeError&) {
        throw StoreError("corrupt registration record in " + path);
      }
    }
  }

  void append_record(const RegistrationRecord& rec) {
    std::ofstream out;
    bool fresh = !std::ifstream(path_).good();
    out.open(path_, std::ios::binary | std::ios::app);
    if (!out) throw StoreError("cannot append registration state: " + path_);
    if (fresh) out.write(kFileMagic, 8);
    Bytes enc = encode_record(rec);
    Bytes framed;
    put_u32be(framed, static_cast<uint32_t>(enc.size()));
    put_bytes(framed, enc);
    out.write(reinterpret_cast<const char*>(framed.data()), framed.size());
    if (!out) throw StoreError("short append to registration state: " + path_);
  }

  crypto::Key32 master_key_;
  crypto::Rng& rng_;
  std::string path_;
  std::map<std::string, RegistrationRecord> records_;
  bool dirty_ = false;
};

// ---------------------------------------------------------------------------
// Server-side registration agent

struct RegAgentConfig {
  uint8_t puzzle_difficulty = 12;
  Micros puzzle_ttl = 600 * kMicrosPerSecond;
  Micros registration_ttl = 30LL * 86400 * kMicrosPerSecond;
  uint64_t quota_bytes_per_day = 50ULL * 1024 * 1024;
  std::string subject = "status update";
  std::string cover_text = "Please see the attached file.";

  static RegAgentConfig from_config(const Config& cfg) {
    RegAgentConfig a;
    a.puzzle_difficulty = static_cast<uint8_t>(cfg.get_int("puzzle.difficulty", 12));
    if (a.puzzle_difficulty > 32)
      throw ConfigError("puzzle.difficulty is capped at 32");
    a.puzzle_ttl = cfg.get_seconds("puzzle.ttl_s", 600.0);
    a.registration_ttl = cfg.get_seconds("registration.ttl_days", 30.0) * 86400;
    a.quota_bytes_per_day = static_cast<uint64_t>(
        cfg.get_int("quota.bytes_per_day", 50LL * 1024 * 1024));
    a.subject = cfg.get("mail.subject", a.subject);
    a.cover_text = cfg.get("mail.body", a.cover_text);
    return a;
  }
};

struct RegAgentMetrics {
  uint64_t requests = 0;
  uint64_t challenges_sent = 0;
  uint64_t responses_accepted = 0;
  uint64_t responses_rejected = 0;
  uint64_t confirms_replayed = 0;
  uint64_t malformed = 0;
};

class ServerRegAgent {
 public:
  ServerRegAgent(crypto::DhKeyPair server_keys, RegStore& store, RegAgentConfig cfg,
                 crypto::Rng& rng)
      : keys_(std::move(server_keys)), store_(store), cfg_(cfg), rng_(rng) {}

  const RegAgentMetrics& metrics() const { return metrics_; }
  const crypto::Key32& server_public() const { return keys_.public_point; }

  // One registration email in, zero or more replies out. Bad solutions and
  // junk are dropped without a reply so probes get no oracle.
  std::vector<mailnet::MailMessage> handle(const mailnet::MailMessage& msg, Micros now) {
    std::vector<mailnet::MailMessage> out;
    wire::RegMessage reg;
    try {
      wire::WireBlob blob = wire::decode_blob(msg.attachment);
      if (blob.kind() != wire::BlobKind::kRegistration) {
        metrics_.malformed++;
        return out;
      }
      reg = std::get<wire::RegMessage>(std::move(blob.body));
    } catch (const wire::DecodeError&) {
      metrics_.malformed++;
      return out;
    }

    switch (reg.kind()) {
      case wire::RegKind::kRequest: {
        metrics_.requests++;
        crypto::PuzzleChallenge ch =
            crypto::make_challenge(rng_, cfg_.puzzle_difficulty, now, cfg_.puzzle_ttl);
        pending_[msg.from] = ch;  // one pending challenge per address
        wire::RegChallenge body;
        body.puzzle_nonce = ch.nonce;
        body.difficulty = ch.difficulty;
        body.server_dh_public = keys_.public_point;
        out.push_back(wrap(msg.from, wire::RegMessage{1, body}));
        metrics_.challenges_sent++;
        break;
      }
      case wire::RegKind::kResponse: {
        auto digest = crypto::sha256(msg.attachment);
        auto seen = confirmed_.find(msg.from);
        if (seen != confirmed_.end() && seen->second.first == digest) {
          // Duplicate of an already-accepted response: re-emit the cached
          // confirmation, do not re-derive or touch the record.
          metrics_.confirms_replayed++;
          out.push_back(seen->second.second);
          break;
        }
        auto pend = pending_.find(msg.from);
        if (pend == pending_.end()) {
          metrics_.responses_rejected++;
          break;
        }
        const auto& body = std::get<wire::RegResponse>(reg.body);
        if (crypto::puzzle_verify(pend->second, body.puzzle_solution, now) !=
            crypto::PuzzleVerdict::kOk) {
          metrics_.responses_rejected++;
          break;
        }
        crypto::SharedKey key;
        try {
          key = crypto::derive_shared(keys_.private_scalar, body.client_dh_public);
        } catch (const crypto::KeyAgreementError&) {
          metrics_.responses_rejected++;
          break;
        }
        RegistrationRecord rec;
        rec.email_address = msg.from;
        rec.shared_key = key;
        rec.registered_at = now;
        rec.expires_at = now + cfg_.registration_ttl;
        rec.quota_bytes_per_day = cfg_.quota_bytes_per_day;
        rec.bytes_used = 0;
        rec.quota_window_start = now;
        store_.upsert(rec);
        pending_.erase(pend);

        crypto::Sealed sealed = crypto::seal(key, crypto::Direction::kS2C, 0,
                                             to_bytes("OK"), wire::BlobKind::kRegistration);
        wire::RegConfirm confirm;
        confirm.nonce = sealed.nonce;
        std::copy(sealed.ciphertext.begin(), sealed.ciphertext.end(), confirm.ciphertext.begin());
        mailnet::MailMessage reply = wrap(msg.from, wire::RegMessage{1, confirm});
        confirmed_[msg.from] = {digest, reply};
        metrics_.responses_accepted++;
        out.push_back(std::move(reply));
        break;
      }
      default:
        metrics_.malformed++;
        break;
    }
    return out;
  }

 private:
  mailnet::MailMessage wrap(const std::string& to, const wire::RegMessage& m) {
    mailnet::MailMessage mail;
    mail.to = to;
    mail.subject = cfg_.subject;
    mail.body_text = cfg_.cover_text;
    mail.attachment = wire::encode_blob(wire::WireBlob{m});
    return mail;
  }

  crypto::DhKeyPair keys_;
  RegStore& store_;
  RegAgentConfig cfg_;
  crypto::Rng& rng_;
  RegAgentMetrics metrics_;
  std::map<std::string, crypto::PuzzleChallenge> pending_;
  std::map<std::string, std::pair<std::array<uint8_t, 32>, mailnet::MailMessage>> confirmed_;
};

// ---------------------------------------------------------------------------
// Client-side registration state machine

struct RegClientConfig {
  std::string server_register_address;
  std::optional<crypto::Key32> advertised_server_key;
  uint8_t max_puzzle_difficulty = 20;
  Micros step_timeout = 60 * kMicrosPerSecond;
  std::string subject = "status update";
  std::string cover_text = "Please see the attached file.";
};

// Drives REG_REQUEST -> REG_CHALLENGE -> REG_RESPONSE -> REG_CONFIRM. The
// owner feeds it registration emails and checks deadlines; terminal state is
// done() or failed().
class RegClient {
 public:
  enum class Phase { kIdle, kAwaitChallenge, kAwaitConfirm, kDone, kFailed };

  RegClient(RegClientConfig cfg, crypto::Rng& rng) : cfg_(std::move(cfg)), rng_(rng) {}

  Phase phase() const { return phase_; }
  bool done() const { return phase_ == Phase::kDone; }
  bool failed() const { return phase_ == Phase::kFailed; }
  RegError error() const { return error_; }
  const crypto::SharedKey& key() const { return key_; }
  Micros started_at() const { return started_at_; }
  Micros completed_at() const { return completed_at_; }

  mailnet::MailMessage start(Micros now) {
    phase_ = Phase::kAwaitChallenge;
    started_at_ = now;
    step_started_ = now;
    return wrap(wire::RegMessage{1, wire::RegRequest{}});
  }

  std::optional<mailnet::MailMessage> handle(const mailnet::MailMessage& msg, Micros now) {
    wire::RegMessage reg;
    try {
      wire::WireBlob blob = wire::decode_blob(msg.attachment);
      if (blob.kind() != wire::BlobKind::kRegistration) return std::nullopt;
      reg = std::get<wire::RegMessage>(std::move(blob.body));
    } catch (const wire::DecodeError&) {
      return std::nullopt;
    }

    if (phase_ == Phase::kAwaitChallenge && reg.kind() == wire::RegKind::kChallenge) {
      const auto& ch = std::get<wire::RegChallenge>(reg.body);
      if (ch.difficulty > cfg_.max_puzzle_difficulty) {
        fail(RegError::kPuzzleTooHard);
        return std::nullopt;
      }
      if (cfg_.advertised_server_key && ch.server_dh_public != *cfg_.advertised_server_key) {
        fail(RegError::kServerKeyMismatch);
        return std::nullopt;
      }
      crypto::PuzzleChallenge puzzle;
      puzzle.nonce = ch.puzzle_nonce;
      puzzle.difficulty = ch.difficulty;
      uint64_t solution = crypto::puzzle_solve(puzzle);

      keys_ = crypto::dh_generate(rng_);
      key_ = crypto::derive_shared(keys_.private_scalar, ch.server_dh_public);

      wire::RegResponse body;
      body.puzzle_solution = solution;
      body.client_dh_public = keys_.public_point;
      phase_ = Phase::kAwaitConfirm;
      step_started_ = now;
      return wrap(wire::RegMessage{1, body});
    }

    if (phase_ == Phase::kAwaitConfirm && reg.kind() == wire::RegKind::kConfirm) {
      const auto& body = std::get<wire::RegConfirm>(reg.body);
      try {
        Bytes token = crypto::open(key_, crypto::Direction::kS2C, 0, body.nonce,
                                   body.ciphertext, wire::BlobKind::kRegistration);
        if (token != to_bytes("OK")) throw crypto::AuthFailure("unexpected token");
      } catch (const std::exception&) {
        fail(RegError::kConfirmAuthFailure);
        return std::nullopt;
      }
      phase_ = Phase::kDone;
      completed_at_ = now;
      return std::nullopt;
    }
    return std::nullopt;
  }

  // Per-step deadline; the caller decides the cadence of checks.
  void check_timeout(Micros now) {
    if (phase_ != Phase::kAwaitChallenge && phase_ != Phase::kAwaitConfirm) return;
    if (now - step_started_ >= cfg_.step_timeout) fail(RegError::kTimeout);
  }

 private:
  void fail(RegError e) {
    phase_ = Phase::kFailed;
    error_ = e;
  }

  mailnet::MailMessage wrap(const wire::RegMessage& m) {
    mailnet::MailMessage mail;
    mail.to = cfg_.server_register_address;
    mail.subject = cfg_.subject;
    mail.body_text = cfg_.cover_text;
    mail.attachment = wire::encode_blob(wire::WireBlob{m});
    return mail;
  }

  RegClientConfig cfg_;
  crypto::Rng& rng_;
  Phase phase_ = Phase::kIdle;
  RegError error_ = RegError::kTimeout;
  crypto::DhKeyPair keys_;
  crypto::SharedKey key_;
  Micros started_at_ = 0;
  Micros step_started_ = 0;
  Micros completed_at_ = 0;
};

}  // namespace sweet::reg
