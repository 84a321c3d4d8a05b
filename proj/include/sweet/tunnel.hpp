#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sweet/clock.hpp"
#include "sweet/config.hpp"
#include "sweet/crypto.hpp"
#include "sweet/mailnet.hpp"
#include "sweet/wire.hpp"

// Session layer: multiplexes byte streams into frames, batches frames into
// sequence-numbered encrypted emails, and reassembles the peer's emails
// through a bounded reorder buffer. Email is treated as reliable but
// reorderable; stall detection covers residual loss.

namespace sweet::tunnel {

struct InvalidStream : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ResourceExhausted : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Reorder buffer overflow; the owner tears the session down and starts over.
struct SessionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TunnelConfig {
  Micros batch_window = 200'000;
  size_t batch_max_bytes = 1 << 20;
  Micros stall_timeout = 120 * kMicrosPerSecond;
  size_t reorder_buffer = 256;
  size_t max_streams = 1024;
  std::string subject = "status update";
  std::string cover_text = "Please see the attached file.";

  static TunnelConfig from_config(const Config& cfg) {
    TunnelConfig t;
    t.batch_window = seconds_to_micros(cfg.get_double("tunnel.batch_window_ms", 200.0) / 1000.0);
    t.batch_max_bytes = static_cast<size_t>(cfg.get_int("tunnel.batch_max_bytes", 1 << 20));
    t.stall_timeout = cfg.get_seconds("tunnel.stall_timeout_s", 120.0);
    t.reorder_buffer = static_cast<size_t>(cfg.get_int("tunnel.reorder_buffer", 256));
    t.max_streams = static_cast<size_t>(cfg.get_int("tunnel.max_streams", 1024));
    t.subject = cfg.get("mail.subject", t.subject);
    t.cover_text = cfg.get("mail.body", t.cover_text);
    return t;
  }
};

enum class StreamStatus { kOpening, kOpen, kHalfClosed, kClosed };

struct StreamState {
  uint32_t stream_id = 0;
  wire::ProxySelector selector = wire::ProxySelector::kSocks;
  bool local_closed = false;
  bool remote_closed = false;
  bool opening = true;  // until the peer's first frame arrives
  uint64_t bytes_in = 0;
  uint64_t bytes_out = 0;
  Micros last_delivery = 0;  // stall detection clock

  StreamStatus status() const {
    if (local_closed && remote_closed) return StreamStatus::kClosed;
    if (local_closed || remote_closed) return StreamStatus::kHalfClosed;
    return opening ? StreamStatus::kOpening : StreamStatus::kOpen;
  }
};

struct SessionMetrics {
  uint64_t emails_sent = 0;
  uint64_t emails_received = 0;
  uint64_t dup_payloads = 0;
  uint64_t auth_failures = 0;
  uint64_t decode_failures = 0;
  uint64_t orphan_frames = 0;
};

// In-order consumer of the peer's frames.
class FrameSink {
 public:
  virtual ~FrameSink() = default;
  virtual void on_open(uint32_t stream_id, wire::ProxySelector selector) = 0;
  virtual void on_data(uint32_t stream_id, std::span<const uint8_t> data) = 0;
  virtual void on_close(uint32_t stream_id) = 0;
  virtual void on_reset(uint32_t stream_id) = 0;
};

class Session {
 public:
  Session(std::string peer_address, crypto::SharedKey key, crypto::Direction send_dir,
          TunnelConfig cfg = {})
      : peer_address_(std::move(peer_address)), key_(std::move(key)), send_dir_(send_dir),
        cfg_(cfg), next_stream_id_(send_dir == crypto::Direction::kC2S ? 1 : 2) {}

  const std::string& peer_address() const { return peer_address_; }
  crypto::Direction send_direction() const { return send_dir_; }
  const TunnelConfig& config() const { return cfg_; }
  const SessionMetrics& metrics() const { return metrics_; }
  uint64_t next_send_seq() const { return send_seq_; }
  uint64_t recv_next() const { return recv_next_; }
  size_t buffered_payloads() const { return reorder_buffer_.size(); }
  const std::map<uint32_t, StreamState>& streams() const { return streams_; }
  const StreamState* stream(uint32_t id) const {
    auto it = streams_.find(id);
    return it == streams_.end() ? nullptr : &it->second;
  }

  // Test/oracle instrumentation: observes every enqueued frame.
  std::function<void(Micros, const wire::Frame&)> on_enqueue;

  uint32_t open_stream(wire::ProxySelector selector, Micros now) {
    if (streams_.size() >= cfg_.max_streams)
      throw ResourceExhausted("stream table full");
    uint32_t id = next_stream_id_;
    next_stream_id_ += 2;
    StreamState st;
    st.stream_id = id;
    st.selector = selector;
    st.last_delivery = now;
    streams_.emplace(id, st);
    enqueue(wire::Frame::open(id, selector), now);
    return id;
  }

  void write_stream(uint32_t id, std::span<const uint8_t> bytes, Micros now) {
    StreamState& st = writable_stream(id);
    if (bytes.empty()) return;
    st.bytes_out += bytes.size();
    size_t off = 0;
    while (off < bytes.size()) {
      size_t n = std::min(bytes.size() - off, wire::kMaxFramePayload);
      enqueue(wire::Frame::data(id, Bytes(bytes.begin() + off, bytes.begin() + off + n)), now);
      off += n;
    }
  }

  void close_stream(uint32_t id, Micros now) {
    StreamState& st = writable_stream(id);
    st.local_closed = true;
    enqueue(wire::Frame::close(id), now);
    if (st.remote_closed) streams_.erase(id);
  }

  // Local teardown plus a RESET to the peer. Used for stalled or failed
  // streams; quietly ignores ids that are already gone.
  void reset_stream(uint32_t id, Micros now) {
    auto it = streams_.find(id);
    if (it == streams_.end()) return;
    streams_.erase(it);
    enqueue(wire::Frame::reset(id), now);
  }

  bool has_pending_frames() const { return !batch_queue_.empty(); }

  // When flush_batch next needs to run: immediately on a size overflow,
  // otherwise at the oldest queued frame's deadline.
  std::optional<Micros> next_flush_deadline(Micros now) const {
    if (batch_queue_.empty()) return std::nullopt;
    if (queued_bytes_ >= cfg_.batch_max_bytes) return now;
    return batch_queue_.front().enqueued_at + cfg_.batch_window;
  }

  // Drains due frames into sealed emails. An email is due when the queued
  // bytes reach batch_max_bytes or the oldest frame has waited batch_window.
  std::vector<mailnet::MailMessage> flush_batch(Micros now) {
    std::vector<mailnet::MailMessage> out;
    while (!batch_queue_.empty() &&
           (queued_bytes_ >= cfg_.batch_max_bytes ||
            now >= batch_queue_.front().enqueued_at + cfg_.batch_window)) {
      wire::EmailPayload payload;
      payload.seq = send_seq_++;
      size_t taken_bytes = 0;
      while (!batch_queue_.empty() && payload.frames.size() < wire::kMaxFramesPerEmail) {
        size_t sz = wire::encoded_size(batch_queue_.front().frame);
        if (taken_bytes != 0 && taken_bytes + sz > cfg_.batch_max_bytes) break;
        taken_bytes += sz;
        queued_bytes_ -= sz;
        payload.frames.push_back(std::move(batch_queue_.front().frame));
        batch_queue_.pop_front();
      }
      out.push_back(wrap(payload));
      metrics_.emails_sent++;
    }
    return out;
  }

  // Decrypt, dedup, reorder, and deliver one carrier message. Unverifiable
  // or malformed messages are dropped with a metric; only an out-of-order
  // overload escalates to SessionError.
  void ingest_email(const mailnet::MailMessage& msg, FrameSink& sink, Micros now) {
    wire::TunnelBlob blob;
    try {
      wire::WireBlob decoded = wire::decode_blob(msg.attachment);
      if (decoded.kind() != wire::BlobKind::kTunnel) {
        metrics_.decode_failures++;
        return;
      }
      blob = std::get<wire::TunnelBlob>(std::move(decoded.body));
    } catch (const wire::DecodeError&) {
      metrics_.decode_failures++;
      return;
    }

    uint64_t seq = crypto::seq_from_nonce(blob.nonce);
    wire::EmailPayload payload;
    try {
      Bytes plain = crypto::open(key_, crypto::opposite(send_dir_), seq, blob.nonce,
                                 blob.ciphertext);
      payload = wire::decode_payload(plain);
    } catch (const crypto::AuthFailure&) {
      metrics_.auth_failures++;
      return;
    } catch (const crypto::NonceMismatch&) {
      metrics_.auth_failures++;
      return;
    } catch (const wire::DecodeError&) {
      metrics_.decode_failures++;
      return;
    }
    if (payload.seq != seq) {
      metrics_.decode_failures++;
      return;
    }
    metrics_.emails_received++;

    if (seq < recv_next_) {
      metrics_.dup_payloads++;
      return;
    }
    if (seq > recv_next_) {
      if (reorder_buffer_.count(seq)) {
        metrics_.dup_payloads++;
        return;
      }
      if (reorder_buffer_.size() >= cfg_.reorder_buffer)
        throw SessionError("reorder buffer overflow");
      reorder_buffer_.emplace(seq, std::move(payload));
      return;
    }

    deliver(payload, sink, now);
    recv_next_++;
    auto it = reorder_buffer_.begin();
    while (it != reorder_buffer_.end() && it->first == recv_next_) {
      deliver(it->second, sink, now);
      recv_next_++;
      it = reorder_buffer_.erase(it);
    }
  }

  // Streams with no delivered traffic for stall_timeout (boundary inclusive).
  std::vector<uint32_t> detect_stall(Micros now) const {
    std::vector<uint32_t> out;
    for (const auto& [id, st] : streams_) {
      if (st.status() == StreamStatus::kClosed) continue;
      if (now - st.last_delivery >= cfg_.stall_timeout) out.push_back(id);
    }
    return out;
  }

 private:
  struct QueuedFrame {
    wire::Frame frame;
    Micros enqueued_at = 0;
  };

  StreamState& writable_stream(uint32_t id) {
    auto it = streams_.find(id);
    if (it == streams_.end()) throw InvalidStream("unknown stream " + std::to_string(id));
    if (it->second.local_closed) throw InvalidStream("stream closed " + std::to_string(id));
    return it->second;
  }

  void enqueue(wire::Frame frame, Micros now) {
    if (on_enqueue) on_enqueue(now, frame);
    queued_bytes_ += wire::encoded_size(frame);
    batch_queue_.push_back(QueuedFrame{std::move(frame), now});
  }

  mailnet::MailMessage wrap(const wire::EmailPayload& payload) {
    Bytes plain = wire::encode_payload(payload);
    crypto::Sealed sealed = crypto::seal(key_, send_dir_, payload.seq, plain);
    wire::WireBlob blob;
    blob.body = wire::TunnelBlob{sealed.nonce, std::move(sealed.ciphertext)};
    mailnet::MailMessage m;
    m.to = peer_address_;
    m.subject = cfg_.subject;
    m.body_text = cfg_.cover_text;
    m.attachment = wire::encode_blob(blob);
    return m;
  }

  void deliver(const wire::EmailPayload& payload, FrameSink& sink, Micros now) {
    for (const wire::Frame& f : payload.frames) {
      switch (f.kind) {
        case wire::FrameKind::kOpen: {
          bool peer_parity = (f.stream_id % 2) != (next_stream_id_ % 2);
          if (!peer_parity || streams_.count(f.stream_id)) {
            metrics_.orphan_frames++;
            break;
          }
          StreamState st;
          st.stream_id = f.stream_id;
          st.selector = f.selector;
          st.opening = false;
          st.last_delivery = now;
          streams_.emplace(f.stream_id, st);
          sink.on_open(f.stream_id, f.selector);
          break;
        }
        case wire::FrameKind::kData: {
          auto it = streams_.find(f.stream_id);
          if (it == streams_.end() || it->second.remote_closed) {
            metrics_.orphan_frames++;
            break;
          }
          it->second.opening = false;
          it->second.bytes_in += f.payload.size();
          it->second.last_delivery = now;
          sink.on_data(f.stream_id, f.payload);
          break;
        }
        case wire::FrameKind::kClose: {
          auto it = streams_.find(f.stream_id);
          if (it == streams_.end() || it->second.remote_closed) {
            metrics_.orphan_frames++;
            break;
          }
          it->second.opening = false;
          it->second.remote_closed = true;
          it->second.last_delivery = now;
          bool gone = it->second.local_closed;
          if (gone) streams_.erase(it);
          sink.on_close(f.stream_id);
          break;
        }
        case wire::FrameKind::kReset: {
          if (streams_.erase(f.stream_id) == 0) {
            metrics_.orphan_frames++;
            break;
          }
          sink.on_reset(f.stream_id);
          break;
        }
      }
    }
  }

  std::string peer_address_;
  crypto::SharedKey key_;
  crypto::Direction send_dir_;
  TunnelConfig cfg_;
  uint32_t next_stream_id_;
  uint64_t send_seq_ = 1;
  uint64_t recv_next_ = 1;
  std::deque<QueuedFrame> batch_queue_;
  size_t queued_bytes_ = 0;
  std::map<uint64_t, wire::EmailPayload> reorder_buffer_;
  std::map<uint32_t, StreamState> streams_;
  SessionMetrics metrics_;
};

}  // namespace sweet::tunnel
