#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>

namespace bsde {

/// Running sums of (x - shift) and (x - shift)^2. With the shift taken from a
/// representative sample, constant data gives exactly zero variance and sums
/// merge deterministically in a fixed order.
struct ShiftedSums {
  double shift = 0.0;
  std::int64_t count = 0;
  double sum = 0.0;
  double sum_sq = 0.0;

  void add(double x) {
    const double d = x - shift;
    ++count;
    sum += d;
    sum_sq += d * d;
  }
  void merge(const ShiftedSums& other) {
    count += other.count;
    sum += other.sum;
    sum_sq += other.sum_sq;
  }
  double mean() const { return count ? shift + sum / count : 0.0; }
  /// Population variance (1/M normalization).
  double variance() const {
    if (count == 0) return 0.0;
    const double m = sum / count;
    return std::max(0.0, sum_sq / count - m * m);
  }
  double std_error() const {
    if (count < 2) return 0.0;
    return std::sqrt(variance() * count / (count - 1) / count);
  }
};

inline ShiftedSums summarize(std::span<const double> xs) {
  ShiftedSums s;
  if (!xs.empty()) s.shift = xs.front();
  for (double x : xs) s.add(x);
  return s;
}

}  // namespace bsde
