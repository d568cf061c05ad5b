#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>

namespace annoforge {

using Millis = std::chrono::milliseconds;
using Timestamp = std::chrono::sys_time<Millis>;

inline std::int64_t to_millis(Timestamp t) noexcept {
  return t.time_since_epoch().count();
}

inline Timestamp from_millis(std::int64_t ms) noexcept {
  return Timestamp(Millis(ms));
}

// All time-dependent behavior reads the clock through this interface.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual Timestamp now() const = 0;
};

class SystemClock final : public Clock {
 public:
  Timestamp now() const override {
    return std::chrono::time_point_cast<Millis>(std::chrono::system_clock::now());
  }
};

// Test clock; starts at an arbitrary fixed epoch and only moves when told.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(Timestamp start = from_millis(1'700'000'000'000))
      : ms_(to_millis(start)) {}

  Timestamp now() const override { return from_millis(ms_.load()); }

  void set(Timestamp t) { ms_.store(to_millis(t)); }

  template <typename Rep, typename Period>
  void advance(std::chrono::duration<Rep, Period> d) {
    ms_.fetch_add(std::chrono::duration_cast<Millis>(d).count());
  }

 private:
  std::atomic<std::int64_t> ms_;
};

}  // namespace annoforge
