#pragma once

// Counter-based Gaussian noise for the homodyne Wiener increments.
//
// Every variate is a pure function of (seed, stream_id, step, node), so a
// trajectory's noise never depends on how many other trajectories ran before
// it or on which thread ran it. The generator is Philox4x32-10 (Salmon et al.,
// SC'11); Gaussians come from an inverse-CDF transform (Acklam's rational
// approximation polished by one Halley step against erfc). Both choices are
// fixed for a given library version; changing either changes every sequence.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>

namespace scduff {

inline constexpr int noise_version = 1;

namespace philox {

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

inline constexpr std::uint32_t mul0 = 0xD2511F53u;
inline constexpr std::uint32_t mul1 = 0xCD9E8D57u;
inline constexpr std::uint32_t weyl0 = 0x9E3779B9u;
inline constexpr std::uint32_t weyl1 = 0xBB67AE85u;

constexpr Counter round(const Counter& c, const Key& k) {
  const std::uint64_t p0 = static_cast<std::uint64_t>(mul0) * c[0];
  const std::uint64_t p1 = static_cast<std::uint64_t>(mul1) * c[2];
  const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
  const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
  return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

/// Philox4x32 with 10 rounds.
constexpr Counter philox4x32_10(Counter c, Key k) {
  for (int r = 0; r < 10; ++r) {
    if (r > 0) {
      k[0] += weyl0;
      k[1] += weyl1;
    }
    c = round(c, k);
  }
  return c;
}

}  // namespace philox

/// Standard normal quantile. Acklam's approximation (|rel err| < 1.2e-9)
/// refined with a single Halley step, giving close to full double precision.
inline double normal_quantile(double u) {
  if (!(u > 0.0 && u < 1.0)) throw std::domain_error("normal_quantile: u outside (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double lo = 0.02425, hi = 1.0 - lo;

  double z;
  if (u < lo) {
    const double q = std::sqrt(-2.0 * std::log(u));
    z = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (u <= hi) {
    const double q = u - 0.5;
    const double r = q * q;
    z = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-u));
    z = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley polish: e = Phi(z) - u.
  const double e = 0.5 * std::erfc(-z / std::numbers::sqrt2) - u;
  const double w = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * z * z);
  return z - w / (1.0 + 0.5 * z * w);
}

/// Map two 32-bit words to a uniform in the open interval (0, 1): the top 52
/// bits, offset by half a step, so both ends are exactly representable.
constexpr double open_uniform(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t m = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 12;
  return (static_cast<double>(m) + 0.5) * 0x1.0p-52;
}

/// One trajectory's Wiener source.
///
/// Variates are addressed by (step, node). Node 0 is the full-step increment;
/// nodes >= 1 index a binary tree of Brownian-bridge midpoints inside a step
/// (children of n are 2n and 2n+1), so refining a step is consistent with the
/// coarse increment no matter who asks first.
class NoiseStream {
 public:
  static constexpr std::uint64_t max_step = (std::uint64_t{1} << 48) - 1;
  static constexpr std::uint32_t max_node = 0xFFFFu;

  NoiseStream() = default;
  NoiseStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }
  void seek(std::uint64_t step) { counter_ = step; }

  /// Standard normal at (step, node); does not advance the counter.
  double normal_at(std::uint64_t step, std::uint32_t node = 0) const {
    if (step > max_step || node > max_node) throw std::out_of_range("NoiseStream: address overflow");
    const philox::Counter ctr{static_cast<std::uint32_t>(step),
                              static_cast<std::uint32_t>(step >> 32) | (node << 16),
                              static_cast<std::uint32_t>(stream_id_),
                              static_cast<std::uint32_t>(stream_id_ >> 32)};
    const philox::Key key{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)};
    const philox::Counter r = philox::philox4x32_10(ctr, key);
    return normal_quantile(open_uniform(r[0], r[1]));
  }

  /// Wiener increment ~ Normal(0, h) for the current step; advances the counter.
  double wiener_increment(double h) {
    if (!(h > 0.0) || !std::isfinite(h))
      throw std::invalid_argument("wiener_increment: step must be finite and > 0");
    return std::sqrt(h) * normal_at(counter_++, 0);
  }

  /// Brownian-bridge split of an increment dw over a step of length h at a
  /// tree node: returns the first-half increment; the second half is dw - first.
  double bridge_split(std::uint64_t step, std::uint32_t node, double dw, double h) const {
    return 0.5 * dw + 0.5 * std::sqrt(h) * normal_at(step, node);
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace scduff
