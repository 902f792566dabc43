#pragma once

// Portable, counter-based random draws. Every randomized routine in the
// library takes an integer seed and derives its stream from SplitMix64 so
// that replications are bit-identical across platforms and compilers
// (std:: distributions are implementation-defined and are not used).

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace burstscan {

class SplitMix64 {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next() noexcept {
    state_ += kGolden;
    return mix(state_);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound), unbiased.
  std::uint64_t below(std::uint64_t bound) noexcept {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next();
      if (r >= threshold) return r % bound;
    }
  }

 private:
  std::uint64_t state_;
};

/// Seed for an independent sub-stream. Replicate r of a permutation run uses
/// `seed + r`; distinct purposes within one command use derive_seed(seed, k).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return SplitMix64::mix(seed ^ SplitMix64::mix(stream + SplitMix64::kGolden));
}

namespace detail {

// Inverse-CDF draw for a unimodal integer law on [lo, hi] given only
// ratio(k) = pmf(k+1) / pmf(k). Weights relative to the mode are built
// outward from the mode so nothing underflows; tails below 1e-18 of the
// modal mass are dropped.
template <class Ratio>
std::int64_t sample_unimodal(double u, std::int64_t lo, std::int64_t hi, std::int64_t mode,
                             Ratio ratio) {
  constexpr double kTail = 1e-18;
  double total = 1.0;
  double w = 1.0;
  std::int64_t first = mode;
  while (first > lo) {
    const double next = w / ratio(first - 1);
    if (next < kTail) break;
    w = next;
    total += w;
    --first;
  }
  const double w_first = w;
  w = 1.0;
  std::int64_t last = mode;
  while (last < hi) {
    const double next = w * ratio(last);
    if (next < kTail) break;
    w = next;
    total += w;
    ++last;
  }

  const double target = u * total;
  double acc = 0.0;
  w = w_first;
  for (std::int64_t k = first; k < last; ++k) {
    acc += w;
    if (acc > target) return k;
    w *= ratio(k);
  }
  return last;
}

}  // namespace detail

/// Binomial(n, p) by CDF inversion.
inline std::int64_t sample_binomial(SplitMix64& rng, std::int64_t n, double p) {
  const double u = rng.uniform();
  if (n <= 0 || p <= 0.0) return 0;
  if (p >= 1.0) return n;
  const double odds = p / (1.0 - p);
  auto mode = static_cast<std::int64_t>(std::floor(static_cast<double>(n + 1) * p));
  if (mode > n) mode = n;
  return detail::sample_unimodal(u, 0, n, mode, [n, odds](std::int64_t k) {
    return static_cast<double>(n - k) / static_cast<double>(k + 1) * odds;
  });
}

/// Number of successes among `draws` items taken without replacement from a
/// population of `population` items of which `successes` are successes.
inline std::int64_t sample_hypergeometric(SplitMix64& rng, std::int64_t population,
                                          std::int64_t successes, std::int64_t draws) {
  const double u = rng.uniform();
  const std::int64_t failures = population - successes;
  const std::int64_t lo = draws > failures ? draws - failures : 0;
  const std::int64_t hi = draws < successes ? draws : successes;
  if (lo >= hi) return lo;
  auto mode = static_cast<std::int64_t>(
      std::floor(static_cast<double>(draws + 1) * static_cast<double>(successes + 1) /
                 static_cast<double>(population + 2)));
  if (mode < lo) mode = lo;
  if (mode > hi) mode = hi;
  return detail::sample_unimodal(u, lo, hi, mode, [=](std::int64_t k) {
    return static_cast<double>(successes - k) * static_cast<double>(draws - k) /
           (static_cast<double>(k + 1) * static_cast<double>(failures - draws + k + 1));
  });
}

/// Distributes `total_successes` over cells with the given capacities,
/// uniformly over all labelings of the pooled items (multivariate
/// hypergeometric), by sequential conditional draws.
inline void allocate_successes(SplitMix64& rng, std::int64_t total_successes,
                               std::span<const std::int64_t> capacities,
                               std::span<std::int64_t> out) {
  std::int64_t population = 0;
  for (auto c : capacities) population += c;
  std::int64_t remaining = total_successes;
  for (std::size_t i = 0; i < capacities.size(); ++i) {
    const std::int64_t k = sample_hypergeometric(rng, population, remaining, capacities[i]);
    out[i] = k;
    population -= capacities[i];
    remaining -= k;
  }
}

}  // namespace burstscan
