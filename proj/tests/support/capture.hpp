// Capturing sinks for tests.

#pragma once

#include <mutex>
#include <utility>
#include <vector>

#include "memguard/refcount.hpp"

namespace memguard::testing {

/// Installs a capturing misuse-event sink for the lifetime of the object and
/// restores the previous sink on destruction. Thread-safe capture.
class EventCapture {
 public:
  EventCapture() {
    previous_ = set_event_sink([this](const MisuseEvent& event) {
      std::lock_guard<std::mutex> lock(mu_);
      events_.push_back(event);
    });
  }

  ~EventCapture() { set_event_sink(std::move(previous_)); }

  EventCapture(const EventCapture&) = delete;
  EventCapture& operator=(const EventCapture&) = delete;

  std::vector<MisuseEvent> events() const {
    std::lock_guard<std::mutex> lock(mu_);
    return events_;
  }

  std::size_t count(MisuseKind kind) const {
    std::lock_guard<std::mutex> lock(mu_);
    std::size_t n = 0;
    for (const auto& e : events_) {
      if (e.kind == kind) ++n;
    }
    return n;
  }

  std::size_t total() const {
    std::lock_guard<std::mutex> lock(mu_);
    return events_.size();
  }

  void clear() {
    std::lock_guard<std::mutex> lock(mu_);
    events_.clear();
  }

 private:
  mutable std::mutex mu_;
  std::vector<MisuseEvent> events_;
  EventSink previous_;
};

}  // namespace memguard::testing
