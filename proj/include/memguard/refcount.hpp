// Saturating reference counter with misuse reporting.
//
// BasicRefCount<true> (the default, alias RefCount) refuses increments from
// zero, pins the value at UINT32_MAX once it is reached, and reports misuse
// through a pluggable event sink. A saturated counter is never moved again by
// any operation except set(); the object it guards leaks instead of being
// freed early, which trades a logged leak for use-after-free immunity.
//
// BasicRefCount<false> (alias FastRefCount) keeps the same call surface but
// degrades every operation to plain wrapping atomic arithmetic with no events,
// the baseline for measuring what the checks cost.

#pragma once

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <mutex>
#include <utility>

namespace memguard {

/// Value a counter sticks at once an increasing operation reaches it.
inline constexpr std::uint32_t kRefCountSaturated = 0xFFFFFFFFu;

enum class MisuseKind : std::uint32_t {
  IncrementOnZero = 0,         // inc/add applied to a dead (zero) counter
  DecrementOnZero,             // decreasing op applied to a dead counter
  Underflow,                   // subtrahend larger than the current value
  Saturated,                   // increasing op pinned the counter at max
  DecrementToZeroWithoutTest,  // dec() reached zero with nobody checking
  ZeroAdjustment,              // add/sub by zero, never a valid refcount step
};

inline const char* to_string(MisuseKind kind) {
  switch (kind) {
    case MisuseKind::IncrementOnZero: return "increment_on_zero";
    case MisuseKind::DecrementOnZero: return "decrement_on_zero";
    case MisuseKind::Underflow: return "underflow";
    case MisuseKind::Saturated: return "saturated";
    case MisuseKind::DecrementToZeroWithoutTest:
      return "decrement_to_zero_without_test";
    case MisuseKind::ZeroAdjustment: return "zero_adjustment";
  }
  return "unknown";
}

/// One refused or saturating operation. Reported at most once per
/// (counter, kind) pair per process run.
struct MisuseEvent {
  MisuseKind kind;
  const char* operation;  // public API call that triggered the report
  std::uint32_t prior;    // counter value the operation observed
};

/// Sinks may be invoked from any thread and must be internally synchronized.
/// A sink must not re-enter the counter that produced the event.
using EventSink = std::function<void(const MisuseEvent&)>;

namespace detail {

inline void default_event_sink(const MisuseEvent& event) {
  std::fprintf(stderr, "REFCOUNT %s op=%s prior=%u\n", to_string(event.kind),
               event.operation, event.prior);
}

struct EventSinkRegistry {
  std::mutex mu;
  EventSink sink;

  static EventSinkRegistry& instance() {
    static EventSinkRegistry registry;
    return registry;
  }
};

inline void emit_event(const MisuseEvent& event) {
  EventSink sink;
  {
    auto& registry = EventSinkRegistry::instance();
    std::lock_guard<std::mutex> lock(registry.mu);
    sink = registry.sink;
  }
  if (sink) {
    sink(event);
  } else {
    default_event_sink(event);
  }
}

}  // namespace detail

/// Installs a process-wide sink for misuse events and returns the previous
/// one. An empty sink restores the default (a line on standard error).
inline EventSink set_event_sink(EventSink sink) {
  auto& registry = detail::EventSinkRegistry::instance();
  std::lock_guard<std::mutex> lock(registry.mu);
  return std::exchange(registry.sink, std::move(sink));
}

/// Lock-free 32-bit reference counter. All mutating operations run a
/// compare-and-exchange retry loop; only the exchange itself is atomic and
/// the loop re-derives its decision from the freshly observed value on every
/// iteration, so each call settles in one pass when uncontended.
///
/// FullChecks selects the checked mode at compile time. Both instantiations
/// can coexist in one binary, which is how the benchmark pairs them.
template <bool FullChecks = true>
class BasicRefCount {
 public:
  BasicRefCount() = default;
  explicit BasicRefCount(std::uint32_t initial) : value_(initial) {}

  BasicRefCount(const BasicRefCount&) = delete;
  BasicRefCount& operator=(const BasicRefCount&) = delete;

  /// Unchecked store, the initialization escape hatch. Bypasses every
  /// invariant including saturation; it does not reset the warn-once state.
  void set(std::uint32_t n) { value_.store(n, std::memory_order_relaxed); }

  /// Snapshot of the current value.
  std::uint32_t read() const { return value_.load(std::memory_order_relaxed); }

  /// Adds summand unless the counter is zero. Returns true iff the prior
  /// value was non-zero, i.e. the referenced object is safe to use. An
  /// addition past the maximum saturates instead of overflowing.
  bool add_not_zero(std::uint32_t summand) {
    return add_not_zero_impl(summand, "add_not_zero");
  }

  bool inc_not_zero() { return add_not_zero_impl(1, "inc_not_zero"); }

  /// Unconditional add. Incrementing a zero counter is refused and reported:
  /// a zero count means the object is already (being) freed, so bumping it
  /// back to life hands the caller a dangling object.
  void add(std::uint32_t summand) { add_impl(summand, "add"); }

  void inc() { add_impl(1, "inc"); }

  /// Subtracts and returns true iff the counter reached zero, which tells
  /// the caller to release the object. A saturated counter is never
  /// decreased; a subtrahend larger than the value is refused as underflow.
  bool sub_and_test(std::uint32_t subtrahend) {
    return sub_and_test_impl(subtrahend, "sub_and_test");
  }

  bool dec_and_test() { return sub_and_test_impl(1, "dec_and_test"); }

  /// Decrement without a return value, for call sites where the counter is
  /// guaranteed not to reach zero. Reaching zero anyway is reported.
  void dec() { dec_impl("dec"); }

  /// Single 1 -> 0 exchange, no retry loop: failure under contention simply
  /// returns false. Enables release protocols that need exclusive teardown.
  bool dec_if_one() {
    std::uint32_t expected = 1;
    if (value_.compare_exchange_strong(expected, 0, std::memory_order_release,
                                       std::memory_order_relaxed)) {
      std::atomic_thread_fence(std::memory_order_acquire);
      return true;
    }
    return false;
  }

  /// Decrements unless the value is one. A false return marks the object as
  /// recyclable (the object-pool sentinel); true means the caller is done.
  bool dec_not_one() { return dec_not_one_impl("dec_not_one"); }

  /// Decrement that takes the caller's exclusive lock only when the counter
  /// may reach zero. On a true return the counter is zero and the lock is
  /// HELD; the caller releases it after freeing. On false the lock is not
  /// held. Lock is any BasicLockable (mutex, spinlock, ...); the caller must
  /// not already hold it.
  template <typename Lock>
  bool dec_and_lock(Lock& lock) {
    if (dec_not_one_impl("dec_and_lock")) {
      return false;
    }
    // Value was one: take the lock, then re-run the full decrement under it.
    lock.lock();
    if (sub_and_test_impl(1, "dec_and_lock")) {
      return true;
    }
    lock.unlock();
    return false;
  }

 private:
  bool add_not_zero_impl(std::uint32_t summand, const char* op) {
    if constexpr (!FullChecks) {
      // Plain add-unless-zero; wraps silently.
      std::uint32_t val = value_.load(std::memory_order_relaxed);
      while (val != 0) {
        if (value_.compare_exchange_weak(val, val + summand,
                                         std::memory_order_relaxed)) {
          return true;
        }
      }
      return false;
    } else {
      if (summand == 0) {
        report(MisuseKind::ZeroAdjustment, op, read());
        return read() != 0;
      }
      std::uint32_t val = value_.load(std::memory_order_relaxed);
      for (;;) {
        if (val == 0) {
          return false;  // not incremented from zero
        }
        if (val == kRefCountSaturated) {
          return true;  // saturated, thus not zero
        }
        std::uint32_t desired = val + summand;
        if (desired < val) {
          desired = kRefCountSaturated;  // saturate instead of overflowing
        }
        if (value_.compare_exchange_weak(val, desired,
                                         std::memory_order_relaxed)) {
          if (desired == kRefCountSaturated) {
            report(MisuseKind::Saturated, op, val);
          }
          return true;
        }
      }
    }
  }

  void add_impl(std::uint32_t summand, const char* op) {
    if constexpr (!FullChecks) {
      value_.fetch_add(summand, std::memory_order_relaxed);
    } else {
      if (summand == 0) {
        report(MisuseKind::ZeroAdjustment, op, read());
        return;
      }
      std::uint32_t val = value_.load(std::memory_order_relaxed);
      for (;;) {
        if (val == 0) {
          report(MisuseKind::IncrementOnZero, op, 0);
          return;
        }
        if (val == kRefCountSaturated) {
          return;
        }
        std::uint32_t desired = val + summand;
        if (desired < val) {
          desired = kRefCountSaturated;
        }
        if (value_.compare_exchange_weak(val, desired,
                                         std::memory_order_relaxed)) {
          if (desired == kRefCountSaturated) {
            report(MisuseKind::Saturated, op, val);
          }
          return;
        }
      }
    }
  }

  bool sub_and_test_impl(std::uint32_t subtrahend, const char* op) {
    if constexpr (!FullChecks) {
      if (value_.fetch_sub(subtrahend, std::memory_order_release) ==
          subtrahend) {
        std::atomic_thread_fence(std::memory_order_acquire);
        return true;
      }
      return false;
    } else {
      if (subtrahend == 0) {
        report(MisuseKind::ZeroAdjustment, op, read());
        return false;
      }
      std::uint32_t val = value_.load(std::memory_order_relaxed);
      for (;;) {
        if (val == kRefCountSaturated) {
          return false;  // saturated counters are never decreased
        }
        if (val == 0) {
          report(MisuseKind::DecrementOnZero, op, 0);
          return false;
        }
        if (subtrahend > val) {
          report(MisuseKind::Underflow, op, val);
          return false;
        }
        const std::uint32_t desired = val - subtrahend;
        if (value_.compare_exchange_weak(val, desired,
                                         std::memory_order_release,
                                         std::memory_order_relaxed)) {
          if (desired == 0) {
            std::atomic_thread_fence(std::memory_order_acquire);
            return true;
          }
          return false;
        }
      }
    }
  }

  void dec_impl(const char* op) {
    if constexpr (!FullChecks) {
      value_.fetch_sub(1, std::memory_order_release);
    } else {
      std::uint32_t val = value_.load(std::memory_order_relaxed);
      for (;;) {
        if (val == kRefCountSaturated) {
          return;
        }
        if (val == 0) {
          report(MisuseKind::DecrementOnZero, op, 0);
          return;
        }
        if (value_.compare_exchange_weak(val, val - 1,
                                         std::memory_order_release,
                                         std::memory_order_relaxed)) {
          if (val == 1) {
            // The transition was allowed but nobody saw it; the caller
            // promised zero was unreachable here.
            report(MisuseKind::DecrementToZeroWithoutTest, op, val);
          }
          return;
        }
      }
    }
  }

  bool dec_not_one_impl(const char* op) {
    if constexpr (!FullChecks) {
      std::uint32_t val = value_.load(std::memory_order_relaxed);
      while (val != 1) {
        if (value_.compare_exchange_weak(val, val - 1,
                                         std::memory_order_release)) {
          return true;
        }
      }
      return false;
    } else {
      std::uint32_t val = value_.load(std::memory_order_relaxed);
      for (;;) {
        if (val == 1) {
          return false;
        }
        if (val == kRefCountSaturated) {
          return true;
        }
        if (val == 0) {
          // Returning false here would send the caller down the recycle
          // path of a dead object; report and claim "handled".
          report(MisuseKind::DecrementOnZero, op, 0);
          return true;
        }
        if (value_.compare_exchange_weak(val, val - 1,
                                         std::memory_order_release,
                                         std::memory_order_relaxed)) {
          return true;
        }
      }
    }
  }

  void report(MisuseKind kind, const char* op, std::uint32_t prior) {
    const std::uint32_t bit = 1u << static_cast<std::uint32_t>(kind);
    if (warned_.fetch_or(bit, std::memory_order_relaxed) & bit) {
      return;  // warn once per (counter, kind)
    }
    detail::emit_event(MisuseEvent{kind, op, prior});
  }

  std::atomic<std::uint32_t> value_{0};
  std::atomic<std::uint32_t> warned_{0};
};

using RefCount = BasicRefCount<true>;
using FastRefCount = BasicRefCount<false>;

}  // namespace memguard
