#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>

namespace sweet {

// Virtual or wall-clock time, microseconds. All protocol timing arithmetic is
// integral so that equal inputs give bit-equal schedules.
using Micros = int64_t;

constexpr Micros kMicrosPerSecond = 1'000'000;

inline Micros seconds_to_micros(double s) {
  return static_cast<Micros>(s * 1e6 + (s >= 0 ? 0.5 : -0.5));
}

inline double micros_to_seconds(Micros m) {
  return static_cast<double>(m) / 1e6;
}

// Single-threaded discrete-event scheduler. Events fire in (time, insertion)
// order; an event callback may schedule further events, including at the
// current instant.
class EventClock {
 public:
  struct Token {
    Micros at = 0;
    uint64_t seq = 0;
  };

  Micros now() const { return now_; }

  Token schedule_at(Micros t, std::function<void()> fn) {
    if (t < now_) t = now_;
    Token tok{t, next_seq_++};
    q_.emplace(std::make_pair(tok.at, tok.seq), std::move(fn));
    return tok;
  }

  Token schedule_in(Micros dt, std::function<void()> fn) {
    return schedule_at(now_ + dt, std::move(fn));
  }

  void cancel(Token tok) { q_.erase(std::make_pair(tok.at, tok.seq)); }

  bool has_events() const { return !q_.empty(); }

  std::optional<Micros> next_event_time() const {
    if (q_.empty()) return std::nullopt;
    return q_.begin()->first.first;
  }

  // Fires every event due at or before t, then sets now() = t.
  void run_until(Micros t) {
    while (!q_.empty() && q_.begin()->first.first <= t) {
      auto it = q_.begin();
      now_ = it->first.first;
      auto fn = std::move(it->second);
      q_.erase(it);
      fn();
    }
    if (t > now_) now_ = t;
  }

  // Advances to the next pending event and fires it. Returns false when idle.
  bool run_next() {
    if (q_.empty()) return false;
    run_until(q_.begin()->first.first);
    return true;
  }

 private:
  Micros now_ = 0;
  uint64_t next_seq_ = 1;
  std::map<std::pair<Micros, uint64_t>, std::function<void()>> q_;
};

// A participant in a simulated run: pumped at every interesting instant and
// asked when it next needs to wake up (batch deadlines, stall checks).
class SimActor {
 public:
  virtual ~SimActor() = default;
  virtual void pump(Micros now) = 0;
  virtual std::optional<Micros> next_deadline(Micros now) { return std::nullopt; }
};

// Drives the clock and a fixed set of actors until nothing is pending or the
// optional time limit is reached. Deterministic: actors are pumped in the
// order given at every step.
inline void run_sim(EventClock& clock, std::span<SimActor* const> actors,
                    std::optional<Micros> until = std::nullopt,
                    size_t max_steps = 1'000'000) {
  for (size_t step = 0; step < max_steps; step++) {
    std::optional<Micros> t = clock.next_event_time();
    for (SimActor* a : actors) {
      auto d = a->next_deadline(clock.now());
      if (d && (!t || *d < *t)) t = d;
    }
    if (!t) return;
    if (until && *t > *until) {
      clock.run_until(*until);
      return;
    }
    clock.run_until(*t);
    for (SimActor* a : actors) a->pump(clock.now());
  }
  throw std::runtime_error("run_sim: step limit exceeded (livelock?)");
}

}  // namespace sweet
