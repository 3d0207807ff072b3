#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>

namespace lgc {

// Error taxonomy. Everything user-facing funnels through these so the CLI can
// print a single machine-parsable line and exit nonzero.
struct Error : std::runtime_error {
  Error(const std::string& category, const std::string& msg)
      : std::runtime_error(category + ": " + msg), category(category) {}
  std::string category;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

struct ContractError : Error {
  explicit ContractError(const std::string& msg) : Error("contract", msg) {}
};

// Alphabet / symbol problems on the entropy-coding side.
struct RangeError : Error {
  explicit RangeError(const std::string& msg) : Error("range", msg) {}
};

struct DecodeError : Error {
  explicit DecodeError(const std::string& msg) : Error("decode", msg) {}
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& msg) : Error("validation", msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error("io", msg) {}
};

struct TrainingDiverged : Error {
  explicit TrainingDiverged(const std::string& msg) : Error("diverged", msg) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

inline void check_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

// FNV-1a 64-bit. Used for parameter-group hashes, config digests and
// reproducibility checks; stability matters, cryptographic strength does not.
struct Fnv1a64 {
  uint64_t state = 1469598103934665603ull;
  void update(const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; i++) {
      state ^= p[i];
      state *= 1099511628211ull;
    }
  }
  template <typename T>
  void update_value(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    update(&v, sizeof(v));
  }
  uint64_t digest() const { return state; }
};

inline uint64_t fnv1a64(const void* data, size_t n) {
  Fnv1a64 h;
  h.update(data, n);
  return h.digest();
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace lgc
