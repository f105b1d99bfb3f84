#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "tada/error.hpp"

namespace tada::stats {

inline double mean(const std::vector<double>& xs) {
  if (xs.empty()) throw Error(ErrorKind::EmptySet, "mean of empty sample");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// Unbiased sample variance; 0 for a single observation.
inline double variance(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

inline double std_error(const std::vector<double>& xs) {
  if (xs.empty()) throw Error(ErrorKind::EmptySet, "std_error of empty sample");
  return std::sqrt(variance(xs) / static_cast<double>(xs.size()));
}

struct Interval {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

inline constexpr double kZ95 = 1.959963984540054;

// Normal-approximation 95% interval for the mean.
inline Interval ci95(const std::vector<double>& xs) {
  double m = mean(xs);
  double h = kZ95 * std_error(xs);
  return {m, m - h, m + h};
}

inline std::vector<double> ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> r(xs.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t q = i; q <= j; ++q) r[order[q]] = avg;
    i = j + 1;
  }
  return r;
}

// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw Error(ErrorKind::InvalidArgument, "spearman needs two equal-length samples");
  auto rx = ranks(xs);
  auto ry = ranks(ys);
  double mx = mean(rx), my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace tada::stats
