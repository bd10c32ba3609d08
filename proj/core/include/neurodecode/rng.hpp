#pragma once

#include <cstdint>
#include <string_view>

namespace neurodecode {

// Counter-based random stream: every draw is a pure function of
// (seed, counter), so a stream can be checkpointed and restored by storing
// two integers, and forked substreams are independent of draw order.
class RngStream {
 public:
  RngStream() : RngStream(0) {}
  explicit RngStream(uint64_t seed) : seed_(seed), counter_(0) {}

  uint64_t next_u64();

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform();
  // Uniform integer in [0, n), n >= 1.
  uint64_t uniform_int(uint64_t n);
  // Standard normal via Box-Muller; consumes two counter steps.
  double normal();

  // Derived stream that is statistically independent of this one.
  // The parent stream is not advanced.
  RngStream fork(uint64_t key) const;
  RngStream fork(std::string_view label, uint64_t index = 0) const;

  uint64_t seed() const { return seed_; }
  uint64_t counter() const { return counter_; }
  void set_counter(uint64_t c) { counter_ = c; }

 private:
  uint64_t seed_;
  uint64_t counter_;
};

}  // namespace neurodecode
