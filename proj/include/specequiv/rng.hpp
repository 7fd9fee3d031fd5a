#pragma once

// Counter-based random streams.
//
// Every random quantity is addressed by (seed, domain, a, b): the seed is the
// Philox key, the remaining words plus a running block index form the
// counter. Sampling uses domain kSampling with (a, b) = (column, trial), so
// draws never depend on evaluation order or thread count.

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>

#include <boost/math/special_functions/erf.hpp>

namespace specequiv::rng {

inline constexpr std::string_view kGeneratorName = "philox4x32-10";
inline constexpr std::string_view kGaussianMethod = "inverse-cdf(erfc_inv)";

enum class Domain : std::uint32_t {
  kSampling = 0,
  kOrthogonal = 1,
  kMeanVector = 2,
  kTestData = 3,
};

using Block = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

/// Philox4x32 with 10 rounds (Salmon et al., Random123).
inline Block philox4x32_10(Block ctr, Key key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u;
  constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u;
  constexpr std::uint32_t kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kW0;
      key[1] += kW1;
    }
    const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

/// Maps 64 random bits to the open interval (0, 1).
inline double to_open_unit(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal quantile of u in (0, 1).
inline double normal_quantile(double u) {
  return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * u);
}

/// A deterministic stream of standard Gaussians.
class GaussianStream {
 public:
  GaussianStream(std::uint64_t seed, Domain domain, std::uint32_t a,
                 std::uint32_t b)
      : key_{static_cast<std::uint32_t>(seed),
             static_cast<std::uint32_t>(seed >> 32)},
        a_(a),
        b_(b),
        domain_(static_cast<std::uint32_t>(domain)) {}

  double next_uniform() {
    if (pos_ == 2) refill();
    const std::uint64_t bits =
        (std::uint64_t{buffer_[2 * pos_]} << 32) | buffer_[2 * pos_ + 1];
    ++pos_;
    return to_open_unit(bits);
  }

  double next() { return normal_quantile(next_uniform()); }

 private:
  void refill() {
    buffer_ = philox4x32_10({block_++, a_, b_, domain_}, key_);
    pos_ = 0;
  }

  Key key_;
  std::uint32_t a_;
  std::uint32_t b_;
  std::uint32_t domain_;
  std::uint32_t block_ = 0;
  Block buffer_{};
  int pos_ = 2;
};

}  // namespace specequiv::rng
