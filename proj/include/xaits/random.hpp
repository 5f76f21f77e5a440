#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <type_traits>
#include <vector>

namespace xaits {

// 64-bit FNV-1a, used for content fingerprints and for mixing string tags
// into derived seeds.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ULL);

std::uint64_t splitmix64(std::uint64_t x);

namespace detail {
inline std::uint64_t seed_part(std::uint64_t state, std::string_view tag) {
  return splitmix64(state ^ fnv1a(tag));
}
template <typename T>
  requires std::is_arithmetic_v<T>
std::uint64_t seed_part(std::uint64_t state, T value) {
  if constexpr (std::is_floating_point_v<T>) {
    // Seeds keyed by a scale factor use its per-mille integer value.
    return splitmix64(state ^ static_cast<std::uint64_t>(value * 1000.0 + 0.5));
  } else {
    return splitmix64(state ^ static_cast<std::uint64_t>(value));
  }
}
}  // namespace detail

// Derives an independent stream seed from the master seed and an ordered list
// of keys (stage name, method id, sample id, ...). Adding a new key anywhere
// never changes the seed of an unrelated key tuple.
template <typename... Parts>
std::uint64_t derive_seed(std::uint64_t master, const Parts&... parts) {
  std::uint64_t state = splitmix64(master);
  ((state = detail::seed_part(state, parts)), ...);
  return state;
}

// Platform-independent sampling helpers on top of mt19937_64. The standard
// distributions are implementation-defined, so they are avoided wherever
// output bytes must be reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n), n > 0, without modulo bias.
  std::size_t below(std::size_t n);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

  // k distinct indices from [0, n), ascending.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace xaits
