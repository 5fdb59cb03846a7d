#pragma once

// Counter-based random numbers (Philox4x32-10, Salmon et al. 2011). A draw is a
// pure function of (key, counter), so streams keyed by (seed, member, particle,
// step) are reproducible regardless of evaluation order or thread scheduling.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace mflift::rng {

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

namespace detail {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

constexpr void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace detail

[[nodiscard]] constexpr Counter philox4x32(Counter ctr, Key key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0 = 0, lo0 = 0, hi1 = 0, lo1 = 0;
    detail::mulhilo(detail::kMul0, ctr[0], hi0, lo0);
    detail::mulhilo(detail::kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += detail::kWeyl0;
    key[1] += detail::kWeyl1;
  }
  return ctr;
}

[[nodiscard]] constexpr Key key_from_seed(std::uint64_t seed) {
  return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
}

/// Child seed number `index` of `base` (splitmix64 finaliser over both).
[[nodiscard]] constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Uniform double in (0, 1) from 53 random bits; never returns 0.
[[nodiscard]] inline double to_unit_open(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

/// Two independent standard normals from one Philox block (Box-Muller).
[[nodiscard]] inline std::array<double, 2> normal_pair(const Counter& block) {
  const double u1 = to_unit_open(block[0], block[1]);
  const double u2 = to_unit_open(block[2], block[3]);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(angle), r * std::sin(angle)};
}

/// Stateless Gaussian source addressed by (stream, particle, step, component).
class GaussianField {
 public:
  GaussianField(std::uint64_t seed, std::uint32_t stream) : key_(key_from_seed(seed)), stream_(stream) {}

  /// Fills `out` with independent N(0,1) draws for one (particle, step) cell.
  /// `step` may be kInitial to address the initial-condition draws.
  template <typename Span>
  void fill(std::uint32_t particle, std::uint32_t step, Span&& out) const {
    const std::size_t n = out.size();
    for (std::size_t j = 0; j < n; j += 2) {
      const auto pair = normal_pair(
          philox4x32({particle, step, stream_, static_cast<std::uint32_t>(j / 2)}, key_));
      out[j] = pair[0];
      if (j + 1 < n) out[j + 1] = pair[1];
    }
  }

  static constexpr std::uint32_t kInitial = 0xFFFFFFFFu;

 private:
  Key key_;
  std::uint32_t stream_;
};

/// Sequential generator over a Philox stream, for seeded construction of
/// dictionaries, test families and similar. Platform independent, unlike the
/// standard library distributions.
class Stream {
 public:
  Stream(std::uint64_t seed, std::uint32_t stream_id) : key_(key_from_seed(seed)), id_(stream_id) {}

  [[nodiscard]] double uniform() {
    const auto block = next_block();
    return to_unit_open(block[0], block[1]);
  }
  [[nodiscard]] double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  [[nodiscard]] double normal() { return normal_pair(next_block())[0]; }
  /// Integer in [0, n).
  [[nodiscard]] std::size_t index(std::size_t n) {
    const auto v = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return v < n ? v : n - 1;
  }

 private:
  Counter next_block() {
    const Counter c{static_cast<std::uint32_t>(count_), static_cast<std::uint32_t>(count_ >> 32),
                    id_, 0x5EED5EEDu};
    ++count_;
    return philox4x32(c, key_);
  }

  Key key_;
  std::uint32_t id_;
  std::uint64_t count_ = 0;
};

}  // namespace mflift::rng
