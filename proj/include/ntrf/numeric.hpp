#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <span>
#include <string>

namespace ntrf {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Max-shifted log(sum(exp(v))). Returns -inf for an empty or all -inf input.
inline double log_sum_exp(std::span<const double> v) {
  double hi = kNegInf;
  for (double x : v) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (double x : v) s += std::exp(x - hi);
  return hi + std::log(s);
}

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(-std::abs(a - b)));
}

// Shortest round-trip decimal form; locale independent.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace ntrf
