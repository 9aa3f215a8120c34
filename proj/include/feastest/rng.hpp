#pragma once

// Counter-based random numbers.
//
// Every random quantity in the library is a pure function of
// (seed, stream id, counter). The block function is Philox4x32-10
// (Salmon et al., "Parallel random numbers: as easy as 1, 2, 3", SC'11):
// a 128-bit counter and a 64-bit key map to four 32-bit words. We place
// the 64-bit seed in the key, and the 64-bit stream id plus a 64-bit
// block index in the counter:
//
//   key = (seed_lo, seed_hi)
//   ctr = (index_lo, index_hi, stream_lo, stream_hi)
//
// Monte-Carlo draw r of a quantity uses its own stream id, so workers can
// process draws in any order and produce bit-identical results.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace feastest::rng {

namespace detail {

inline void mulhilo32(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                      std::uint32_t& lo) {
  const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(product >> 32);
  lo = static_cast<std::uint32_t>(product);
}

}  // namespace detail

using Block = std::array<std::uint32_t, 4>;

inline Block philox4x32_10(Block ctr, std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u;
  constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u;
  constexpr std::uint32_t kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kW0;
      key[1] += kW1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    detail::mulhilo32(kM0, ctr[0], hi0, lo0);
    detail::mulhilo32(kM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

// SplitMix64 finalizer, used only to derive stream ids from structured tags.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Stream id for (purpose tag, a, b), e.g. (kMonteCarlo, rep, draw).
constexpr std::uint64_t stream_id(std::uint64_t tag, std::uint64_t a = 0,
                                  std::uint64_t b = 0) {
  return mix64(mix64(mix64(tag) ^ a) ^ b);
}

// Purpose tags. Changing any of these changes every downstream number.
inline constexpr std::uint64_t kGaussianMc = 0x47415553;   // "GAUS"
inline constexpr std::uint64_t kRademacherMc = 0x52414445;  // "RADE"
inline constexpr std::uint64_t kNoise = 0x4E4F4953;        // "NOIS"
inline constexpr std::uint64_t kDesign = 0x44455349;       // "DESI"
inline constexpr std::uint64_t kMultistart = 0x4D535452;   // "MSTR"

// Sequential view over one stream. Not thread-safe; cheap to construct, so
// give each worker (or each draw) its own.
class Stream {
 public:
  Stream(std::uint64_t seed, std::uint64_t stream) noexcept
      : key_{static_cast<std::uint32_t>(seed),
             static_cast<std::uint32_t>(seed >> 32)},
        stream_(stream) {}

  std::uint32_t next_u32() noexcept {
    if (used_ == 4) refill();
    return buffer_[used_++];
  }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform() noexcept {
    const std::uint64_t bits = next_u64() >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform();
  }

  // Standard normal via Box-Muller; the second variate of each pair is kept.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  // +1 or -1 with equal probability.
  double rademacher() noexcept {
    if (sign_bits_left_ == 0) {
      sign_word_ = next_u32();
      sign_bits_left_ = 32;
    }
    const bool bit = sign_word_ & 1u;
    sign_word_ >>= 1;
    --sign_bits_left_;
    return bit ? 1.0 : -1.0;
  }

  // UniformRandomBitGenerator, for use with <algorithm> shuffles.
  using result_type = std::uint32_t;
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }
  result_type operator()() noexcept { return next_u32(); }

 private:
  void refill() noexcept {
    const Block ctr{static_cast<std::uint32_t>(index_),
                    static_cast<std::uint32_t>(index_ >> 32),
                    static_cast<std::uint32_t>(stream_),
                    static_cast<std::uint32_t>(stream_ >> 32)};
    buffer_ = philox4x32_10(ctr, key_);
    ++index_;
    used_ = 0;
  }

  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t index_ = 0;
  Block buffer_{};
  int used_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
  std::uint32_t sign_word_ = 0;
  int sign_bits_left_ = 0;
};

}  // namespace feastest::rng
