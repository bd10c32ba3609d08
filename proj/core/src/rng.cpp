#include "neurodecode/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace neurodecode {
namespace {

constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// splitmix64 finalizer; bijective on 64-bit words.
inline uint64_t mix64(uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

// FNV-1a over the label bytes, used to derive fork keys from names.
inline uint64_t hash_label(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace

uint64_t RngStream::next_u64() {
  return mix64(seed_ + kGolden * (counter_++ + 1));
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

uint64_t RngStream::uniform_int(uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_int: n must be >= 1");
  return next_u64() % n;
}

double RngStream::normal() {
  // u1 in (0,1] so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

RngStream RngStream::fork(uint64_t key) const {
  return RngStream(mix64(seed_ ^ mix64(key + kGolden)));
}

RngStream RngStream::fork(std::string_view label, uint64_t index) const {
  return fork(hash_label(label) + kGolden * index);
}

}  // namespace neurodecode
