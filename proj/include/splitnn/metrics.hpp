#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "splitnn/tensor.hpp"

namespace splitnn {

// Compensated summation; sample means over large sets must not depend on
// accumulation order beyond 1e-12.
struct Kahan {
  double sum = 0.0, c = 0.0;
  void add(double v) {
    double y = v - c;
    double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }
  double value() const { return sum; }
};

// Distance correlation of two paired scalar samples via double-centered
// pairwise distances. Row sums are held in O(n) memory; the centered
// products stream over the pair grid, so n of 10^4 needs no n^2 buffer.
inline double distance_correlation(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size(), "distance_correlation: length mismatch");
  const std::size_t n = x.size();
  require(n >= 2, "distance_correlation: need at least two samples");

  std::vector<double> rx(n, 0.0), ry(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    Kahan sx, sy;
    for (std::size_t k = 0; k < n; ++k) {
      sx.add(std::fabs(x[j] - x[k]));
      sy.add(std::fabs(y[j] - y[k]));
    }
    rx[j] = sx.value();
    ry[j] = sy.value();
  }
  Kahan gxa, gya;
  for (std::size_t j = 0; j < n; ++j) {
    gxa.add(rx[j]);
    gya.add(ry[j]);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const double gx = gxa.value() * inv_n * inv_n;
  const double gy = gya.value() * inv_n * inv_n;

  Kahan ab, aa, bb;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < n; ++k) {
      const double A = std::fabs(x[j] - x[k]) - rx[j] * inv_n - rx[k] * inv_n + gx;
      const double B = std::fabs(y[j] - y[k]) - ry[j] * inv_n - ry[k] * inv_n + gy;
      ab.add(A * B);
      aa.add(A * A);
      bb.add(B * B);
    }
  const double dvarx = aa.value() * inv_n * inv_n;
  const double dvary = bb.value() * inv_n * inv_n;
  if (dvarx <= 0.0 || dvary <= 0.0) return 0.0;  // a constant side carries no signal
  double r2 = (ab.value() * inv_n * inv_n) / std::sqrt(dvarx * dvary);
  r2 = std::clamp(r2, 0.0, 1.0);
  return std::sqrt(r2);
}

// Non-overlapping window means; source length must tile the target.
inline std::vector<double> avg_downsample(const std::vector<double>& x, std::size_t target) {
  require(target > 0, "avg_downsample: target must be positive");
  require(x.size() % target == 0, "avg_downsample: length " + std::to_string(x.size()) +
                                      " not divisible by " + std::to_string(target));
  const std::size_t w = x.size() / target;
  std::vector<double> out(target, 0.0);
  for (std::size_t i = 0; i < target; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < w; ++k) acc += x[i * w + k];
    out[i] = acc / static_cast<double>(w);
  }
  return out;
}

// Dynamic time warping with |a_i - b_j| cell cost; returns the accumulated
// cost of the optimal monotone alignment (not normalized by path length).
inline double dtw_distance(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size(), m = b.size();
  require(n > 0 && m > 0, "dtw_distance: empty input");
  constexpr double inf = 1e300;
  std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = inf;
    for (std::size_t j = 1; j <= m; ++j) {
      const double cost = std::fabs(a[i - 1] - b[j - 1]);
      cur[j] = cost + std::min(prev[j], std::min(cur[j - 1], prev[j - 1]));
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

}  // namespace splitnn
