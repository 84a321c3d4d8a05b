#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sweet/bytes.hpp"
#include "sweet/clock.hpp"
#include "sweet/config.hpp"
#include "sweet/crypto.hpp"

namespace sweet::mailnet {

struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AuthError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct OversizeAttachment : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnsupportedOperation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr size_t kDefaultMaxAttachmentBytes = 10 * 1024 * 1024;

struct MailMessage {
  std::string from;
  std::string to;
  std::string subject;
  Bytes attachment;       // exactly one per message, a WireBlob encoding
  std::string body_text;  // cover text

  bool operator==(const MailMessage&) const = default;
};

using MessageId = uint64_t;

class Mailbox {
 public:
  virtual ~Mailbox() = default;
  virtual const std::string& address() const = 0;
  virtual MessageId send(const MailMessage& msg) = 0;
  // Returns and removes everything delivered since the last poll, in
  // delivery order.
  virtual std::vector<MailMessage> poll() = 0;
};

// ---------------------------------------------------------------------------
// Latency distributions

struct LatencySpec {
  enum class Kind { kConstant, kCdf, kLognormal };

  Kind kind = Kind::kConstant;
  Micros constant = seconds_to_micros(1.5);
  // Piecewise-linear inverse CDF, (quantile, time) knots sorted by quantile
  // with 0 and 1 endpoints.
  std::vector<std::pair<double, Micros>> cdf;
  double mu = 0.0;     // lognormal, ln-seconds
  double sigma = 1.0;

  // "constant:1.5" | "lognormal:0.2,0.5" | "cdf:0:0.4,0.5:1.2,...,1:8.0"
  static LatencySpec parse(std::string_view text) {
    LatencySpec s;
    size_t colon = text.find(':');
    if (colon == std::string_view::npos)
      throw ConfigError("latency spec: expected kind:params, got '" + std::string(text) + "'");
    std::string_view kind = text.substr(0, colon);
    std::string params(text.substr(colon + 1));
    if (kind == "constant") {
      s.kind = Kind::kConstant;
      s.constant = seconds_to_micros(std::stod(params));
    } else if (kind == "lognormal") {
      auto parts = split_list(params);
      if (parts.size() != 2) throw ConfigError("lognormal latency: expected mu,sigma");
      s.kind = Kind::kLognormal;
      s.mu = std::stod(parts[0]);
      s.sigma = std::stod(parts[1]);
    } else if (kind == "cdf") {
      s.kind = Kind::kCdf;
      for (const auto& knot : split_list(params)) {
        size_t c = knot.find(':');
        if (c == std::string::npos) throw ConfigError("cdf latency: expected q:seconds knots");
        double q = std::stod(knot.substr(0, c));
        Micros t = seconds_to_micros(std::stod(knot.substr(c + 1)));
        s.cdf.emplace_back(q, t);
      }
      if (s.cdf.size() < 2 || s.cdf.front().first != 0.0 || s.cdf.back().first != 1.0)
        throw ConfigError("cdf latency: knots must start at 0 and end at 1");
      for (size_t i = 1; i < s.cdf.size(); i++)
        if (s.cdf[i].first < s.cdf[i - 1].first || s.cdf[i].second < s.cdf[i - 1].second)
          throw ConfigError("cdf latency: knots must be nondecreasing");
    } else {
      throw ConfigError("latency spec: unknown kind '" + std::string(kind) + "'");
    }
    return s;
  }

  Micros quantile(double u) const {
    switch (kind) {
      case Kind::kConstant:
        return constant;
      case Kind::kCdf: {
        for (size_t i = 1; i < cdf.size(); i++) {
          if (u <= cdf[i].first) {
            double q0 = cdf[i - 1].first, q1 = cdf[i].first;
            Micros t0 = cdf[i - 1].second, t1 = cdf[i].second;
            if (q1 == q0) return t1;
            double frac = (u - q0) / (q1 - q0);
            return t0 + static_cast<Micros>(frac * double(t1 - t0) + 0.5);
          }
        }
        return cdf.back().second;
      }
      case Kind::kLognormal:
        return constant;  // unreachable; lognormal sampled directly
    }
    return constant;
  }

  Micros sample(crypto::SeededRng& rng) const {
    auto uniform01 = [&rng] { return double(rng.next_u64() >> 11) * 0x1.0p-53; };
    switch (kind) {
      case Kind::kConstant:
        return constant;
      case Kind::kCdf:
        return quantile(uniform01());
      case Kind::kLognormal: {
        // Box-Muller, cosine branch only, so one sample costs two draws.
        double u1 = uniform01(), u2 = uniform01();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
        double secs = std::exp(mu + sigma * z);
        return seconds_to_micros(secs);
      }
    }
    return constant;
  }
};

// The shipped approximation of the measured transit-time distribution:
// p50/p75/p90/p99 at 1.2/2.0/3.0/6.0 s with 0.4 s and 8 s endpoints.
inline LatencySpec fig5_latency() {
  return LatencySpec::parse("cdf:0:0.4,0.5:1.2,0.75:2.0,0.9:3.0,0.99:6.0,1:8.0");
}

struct DeliveryModel {
  LatencySpec latency;
  bool reorder = false;
  double duplicate_prob = 0.0;
  double drop_prob = 0.0;
  uint64_t seed = 1;

  static DeliveryModel from_config(const Config& cfg, const std::string& prefix = "sim.") {
    DeliveryModel m;
    m.latency = LatencySpec::parse(cfg.get(prefix + "latency", "constant:1.5"));
    m.reorder = cfg.get_bool(prefix + "reorder", false);
    m.duplicate_prob = cfg.get_double(prefix + "duplicate_prob", 0.0);
    m.drop_prob = cfg.get_double(prefix + "drop_prob", 0.0);
    m.seed = static_cast<uint64_t>(cfg.get_int(prefix + "seed", 1));
    if (m.duplicate_prob < 0 || m.duplicate_prob > 1 || m.drop_prob < 0 || m.drop_prob > 1)
      throw ConfigError("delivery model: probabilities must be in [0,1]");
    return m;
  }
};

// ---------------------------------------------------------------------------
// Simulated provider

class SimulatedNetwork;

class SimMailbox : public Mailbox {
 public:
  SimMailbox(SimulatedNetwork& net, std::string address)
      : net_(net), address_(std::move(address)) {}

  const std::string& address() const override { return address_; }
  MessageId send(const MailMessage& msg) override;

  std::vector<MailMessage> poll() override {
    std::vector<MailMessage> out(queue_.begin(), queue_.end());
    queue_.clear();
    return out;
  }

  bool has_mail() const { return !queue_.empty(); }

 private:
  friend class SimulatedNetwork;
  SimulatedNetwork& net_;
  std::string address_;
  std::deque<MailMessage> queue_;
};

// Deterministic store-and-forward carrier over a virtual clock. All
// randomness comes from one seeded stream consumed in send order, so equal
// (seed, send schedule) gives identical delivery traces.
class SimulatedNetwork {
 public:
  struct DeliveryRecord {
    Micros sent_at = 0;
    Micros delivered_at = 0;
    std::string from, to;
    size_t attachment_size = 0;
    bool duplicate_copy = false;
    Bytes attachment;  // only kept when record_attachments is on
  };

  struct Counters {
    uint64_t sent = 0;
    uint64_t delivered = 0;
    uint64_t dropped = 0;
    uint64_t duplicated = 0;
  };

  SimulatedNetwork(EventClock& clock, DeliveryModel model,
                   size_t max_attachment_bytes = kDefaultMaxAttachmentBytes)
      : clock_(clock), model_(std::move(model)), rng_(model_.seed),
        max_attachment_bytes_(max_attachment_bytes) {}

  SimMailbox& mailbox(const std::string& address) {
    auto it = boxes_.find(address);
    if (it == boxes_.end())
      it = boxes_.emplace(address, std::make_unique<SimMailbox>(*this, address)).first;
    return *it->second;
  }

  EventClock& clock() { return clock_; }

  void advance(Micros dt) { clock_.run_until(clock_.now() + dt); }

  const Counters& counters() const { return counters_; }
  const std::vector<DeliveryRecord>& delivery_log() const { return log_; }
  void set_record_attachments(bool on) { record_attachments_ = on; }
  void clear_log() { log_.clear(); }

  size_t max_attachment_bytes() const { return max_attachment_bytes_; }

 private:
  friend class SimMailbox;

  double uniform01() { return double(rng_.next_u64() >> 11) * 0x1.0p-53; }

  MessageId submit(const MailMessage& msg) {
    if (msg.attachment.size() > max_attachment_bytes_)
      throw OversizeAttachment("attachment exceeds max_attachment_bytes");
    MessageId id = next_id_++;
    counters_.sent++;
    Micros sent_at = clock_.now();

    bool dropped = uniform01() < model_.drop_prob;
    Micros first_latency = model_.latency.sample(rng_);
    bool duplicated = uniform01() < model_.duplicate_prob;
    Micros second_latency = duplicated ? model_.latency.sample(rng_) : 0;

    if (dropped) {
      counters_.dropped++;
      return id;
    }
    schedule_delivery(msg, sent_at, first_latency, false);
    if (duplicated) {
      counters_.duplicated++;
      schedule_delivery(msg, sent_at, second_latency, true);
    }
    return id;
  }

  void schedule_delivery(const MailMessage& msg, Micros sent_at, Micros latency,
                         bool duplicate_copy) {
    Micros at = sent_at + latency;
    if (!model_.reorder) {
      // FIFO per sender-recipient pair unless the model allows reordering.
      Micros& last = fifo_floor_[msg.from + "|" + msg.to];
      if (at < last) at = last;
      last = at;
    }
    clock_.schedule_at(at, [this, msg, sent_at, duplicate_copy] {
      SimMailbox& box = mailbox(msg.to);
      box.queue_.push_back(msg);
      counters_.delivered++;
      DeliveryRecord rec;
      rec.sent_at = sent_at;
      rec.delivered_at = clock_.now();
      rec.from = msg.from;
      rec.to = msg.to;
      rec.attachment_size = msg.attachment.size();
      rec.duplicate_copy = duplicate_copy;
      if (record_attachments_) rec.attachment = msg.attachment;
      log_.push_back(std::move(rec));
    });
  }

  EventClock& clock_;
  DeliveryModel model_;
  crypto::SeededRng rng_;
  size_t max_attachment_bytes_;
  MessageId next_id_ = 1;
  std::map<std::string, std::unique_ptr<SimMailbox>> boxes_;
  std::map<std::string, Micros> fifo_floor_;
  Counters counters_;
  std::vector<DeliveryRecord> log_;
  bool record_attachments_ = false;
};

inline MessageId SimMailbox::send(const MailMessage& msg) {
  MailMessage m = msg;
  m.from = address_;  // the carrier stamps the sender
  return net_.submit(m);
}

}  // namespace sweet::mailnet
