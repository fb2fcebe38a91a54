#pragma once

#include <cstdint>
#include <exception>
#include <functional>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfcsplit/sim_time.hpp"

namespace sfcsplit {

/// Wraps an exception thrown by an event handler with the event's context.
class SimulationError : public std::runtime_error {
 public:
  SimulationError(const std::string& what, SimTime at, std::uint64_t seq, std::exception_ptr why = nullptr)
      : std::runtime_error("event #" + std::to_string(seq) + " at t=" + std::to_string(to_seconds(at)) +
                           "s: " + what),
        time(at),
        sequence(seq),
        cause(std::move(why)) {}
  SimTime time;
  std::uint64_t sequence;
  std::exception_ptr cause;
};

/// Discrete-event clock. Ties on time are broken by insertion order.
class EventQueue {
 public:
  using Handler = std::function<void()>;

  SimTime now() const { return now_; }
  std::size_t pending() const { return heap_.size(); }
  std::uint64_t processed() const { return processed_; }

  void schedule(SimTime at, Handler fn) {
    if (at < now_) at = now_;
    heap_.push(Event{at, next_seq_++, std::move(fn)});
  }
  void schedule_in(SimTime delay, Handler fn) { schedule(now_ + delay, std::move(fn)); }

  /// Runs every event with time <= t, then leaves the clock at t.
  void run_until(SimTime t) {
    while (!heap_.empty() && heap_.top().time <= t && !stopped_) {
      step();
    }
    if (!stopped_ && t > now_) now_ = t;
  }

  /// Runs until the queue drains or stop() is called.
  void run() {
    while (!heap_.empty() && !stopped_) step();
  }

  void stop() { stopped_ = true; }
  bool stopped() const { return stopped_; }

 private:
  struct Event {
    SimTime time;
    std::uint64_t seq;
    Handler fn;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
  };

  void step() {
    Event ev = heap_.top();
    heap_.pop();
    now_ = ev.time;
    ++processed_;
    try {
      ev.fn();
    } catch (const SimulationError&) {
      throw;
    } catch (const std::exception& e) {
      throw SimulationError(e.what(), ev.time, ev.seq, std::current_exception());
    }
  }

  std::priority_queue<Event, std::vector<Event>, Later> heap_;
  SimTime now_ = 0;
  std::uint64_t next_seq_ = 0;
  std::uint64_t processed_ = 0;
  bool stopped_ = false;
};

}  // namespace sfcsplit
