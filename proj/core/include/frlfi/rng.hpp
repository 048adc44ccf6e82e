#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace frlfi {

/// SplitMix64 finalizer. Used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Folds a list of identifiers into a stream seed. Order matters.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = mix64(base);
  for (std::uint64_t p : parts) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

/// Stream tags so that seeds for different purposes never collide.
enum class Stream : std::uint64_t {
  Init = 1,
  AgentEpisode = 2,
  FaultSpec = 3,
  Evaluation = 4,
  Repetition = 5,
};

inline std::uint64_t derive_seed(std::uint64_t base, Stream tag, std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = derive_seed(base, {static_cast<std::uint64_t>(tag)});
  for (std::uint64_t p : parts) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

/// Deterministic random source. Conversions to real/int are done here rather
/// than with <random> distributions so results are identical across standard
/// library implementations.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (one value per call).
  double normal();

 private:
  std::mt19937_64 engine_;
};

}  // namespace frlfi
