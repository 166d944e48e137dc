#ifndef TABADV_COMMON_HPP
#define TABADV_COMMON_HPP

#include <charconv>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tabadv {

// Error taxonomy. The CLI maps these onto exit codes: usage/schema/data/io -> 2,
// numerical failures (divergence) -> 3.
struct SchemaError : std::runtime_error {
  explicit SchemaError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DivergenceError : std::runtime_error {
  DivergenceError(const std::string& msg, int epoch_)
      : std::runtime_error(msg), epoch(epoch_) {}
  int epoch;
};

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic seed fan-out: stream k of a master seed. Every stage of the
// pipeline draws its seed as derive_seed(master, <fixed stream id>); nested
// stages derive again from their stage seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(master ^ splitmix64(stream));
}

// Shortest decimal representation that round-trips the exact double.
// Used for all CSV/JSON emission so that reruns are bit-identical.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Runs fn(0..n-1) on up to `threads` workers (0 = hardware concurrency).
// Units must be independent; each writes its own output slot, so scheduling
// order never affects results.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace tabadv

#endif  // TABADV_COMMON_HPP
