#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace swiden {

/// SplitMix64 step. Advances `state` by the golden-ratio increment and returns
/// the mixed output. Used to expand seeds and to derive child seeds.
std::uint64_t splitmix64(std::uint64_t& state);

/// Child seed for stream `stream` of a master seed. Pure function.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/// Deterministic pseudo-random generator: xoshiro256** seeded by SplitMix64.
///
/// Seeding: the four state words are the first four SplitMix64 outputs
/// starting from `seed`.
///
/// Derived draws:
///  - uniform():      (next() >> 11) * 2^-53, in [0, 1)
///  - normal():       Box-Muller, one variate per call, consuming two uniforms:
///                    u1 = uniform(), u2 = uniform(),
///                    z = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)
///  - uniform(a, b):  a + (b - a) * uniform()
///  - index(n):       floor(uniform() * n), clamped to n - 1
///  - bernoulli(p):   uniform() < p
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next();
  double uniform();
  double uniform(double a, double b);
  double normal();
  double normal(double sigma) { return sigma * normal(); }
  std::size_t index(std::size_t n);
  bool bernoulli(double p);

  std::uint64_t seed() const { return seed_; }
  const std::array<std::uint64_t, 4>& state() const { return s_; }

  friend bool operator==(const Rng& a, const Rng& b) { return a.s_ == b.s_; }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_;
};

/// Fisher-Yates shuffle driven by Rng::index, from the back of the range.
template <typename T>
void shuffle(T& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = rng.index(i);
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace swiden
