#pragma once

#include <cmath>

namespace kgbreather {

/// |s|^e for e > 0, with 0^e = 0.
inline double abs_pow(double s, double e) noexcept {
  const double a = std::abs(s);
  if (a == 0.0) return 0.0;
  if (e == 1.0) return a;
  if (e == 2.0) return a * a;
  return std::exp(e * std::log(a));
}

/// The focusing term |s|^{2p} s.
inline double focusing_power(double s, double p) noexcept {
  if (p == 1.0) return s * s * s;
  if (p == 0.5) return std::abs(s) * s;
  const double a = std::abs(s);
  if (a == 0.0) return 0.0;
  return std::copysign(std::exp((2.0 * p + 1.0) * std::log(a)), s);
}

/// Derivative (2p+1)|s|^{2p} of the focusing term.
inline double focusing_power_derivative(double s, double p) noexcept {
  if (p == 1.0) return 3.0 * s * s;
  if (p == 0.5) return 2.0 * std::abs(s);
  return (2.0 * p + 1.0) * abs_pow(s, 2.0 * p);
}

}  // namespace kgbreather
