#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

// Branch-free elementary functions for the sampler's inner loops. Compile
// with -fno-trapping-math so that loops calling them vectorize.

namespace sdfb::detail {

// e^x for x <= 0, flushed to ~1e-308 below -708. Branch-free so that loops
// over cells vectorize; relative error below 1e-15.
inline double exp_nonpositive(double x) {
  constexpr double kShift = 6755399441055744.0;  // 1.5 * 2^52: rounds to integer
  x = std::max(x, -708.0);
  const double k = x * 1.4426950408889634 + kShift;
  const double n = k - kShift;
  const double r = (x - n * 6.93147180369123816490e-01) - n * 1.90821492927058770002e-10;
  double p = 2.08767569878680989792e-09;  // 1/12!
  p = p * r + 2.50521083854417187751e-08;
  p = p * r + 2.75573192239858906526e-07;
  p = p * r + 2.75573192239858906526e-06;
  p = p * r + 2.48015873015873015873e-05;
  p = p * r + 1.98412698412698412698e-04;
  p = p * r + 1.38888888888888888889e-03;
  p = p * r + 8.33333333333333333333e-03;
  p = p * r + 4.16666666666666666667e-02;
  p = p * r + 1.66666666666666666667e-01;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  const std::uint64_t e = std::bit_cast<std::uint64_t>(k) - std::bit_cast<std::uint64_t>(kShift) + 1023;
  return p * std::bit_cast<double>(e << 52);
}

// log(1 + t) for t in [0, 1] via the atanh series.
inline double log1p_unit(double t) {
  // Above sqrt(2) - 1 use log(1 + t) = log 2 + log((1 + t) / 2).
  const double big = t > 0.41421356237309503 ? 1.0 : 0.0;
  const double s = (t - big) / (t + 2.0 + big);
  const double s2 = s * s;
  double q = 1.0 / 21.0;
  q = q * s2 + 1.0 / 19.0;
  q = q * s2 + 1.0 / 17.0;
  q = q * s2 + 1.0 / 15.0;
  q = q * s2 + 1.0 / 13.0;
  q = q * s2 + 1.0 / 11.0;
  q = q * s2 + 1.0 / 9.0;
  q = q * s2 + 1.0 / 7.0;
  q = q * s2 + 1.0 / 5.0;
  q = q * s2 + 1.0 / 3.0;
  q = q * s2 + 1.0;
  return big * 0.69314718055994530942 + 2.0 * s * q;
}

inline double softplus_fast(double z) { return std::max(z, 0.0) + log1p_unit(exp_nonpositive(-std::abs(z))); }

}  // namespace sdfb::detail
