#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fullband {

// Input data failed a contract check (bad meter, shape mismatch, ...).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem-level failure: missing file, unwritable path, short read.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input bytes; byte_offset points at the offending position.
struct ParseError : std::runtime_error {
  size_t byte_offset;
  ParseError(const std::string& msg, size_t offset)
      : std::runtime_error(msg + " (byte offset " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
};

// A metric whose value is undefined for the given input, e.g. phrase groove
// diversity when the inter-phrase consistency is zero.
struct MetricUndefined : ValidationError {
  using ValidationError::ValidationError;
};

// Deterministic random source. Wraps mt19937_64 with hand-rolled transforms
// so streams do not depend on the standard library's distribution
// implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // uniform integer in [lo, hi], both inclusive
  int64_t uniform_int(int64_t lo, int64_t hi);

  // standard normal, Box-Muller with one cached partner value
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      auto j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fullband
