#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "splitnn/tensor.hpp"

namespace splitnn {

// Biorthogonal 3.1 filter bank. All four filters have length 4; the
// analysis/synthesis pair reconstructs with a composite delay of 3 taps,
// which the inverse transform crops off.
namespace bior31 {
inline constexpr std::size_t kFilterLen = 4;
inline const double kA = std::sqrt(2.0) / 8.0;
inline const double kB = 3.0 * std::sqrt(2.0) / 8.0;
inline const double kC = std::sqrt(2.0) / 4.0;
inline const double kD = 3.0 * std::sqrt(2.0) / 4.0;
inline const double kDecLo[kFilterLen] = {-kC, kD, kD, -kC};
inline const double kDecHi[kFilterLen] = {kA, -kB, kB, -kA};
inline const double kRecLo[kFilterLen] = {kA, kB, kB, kA};
inline const double kRecHi[kFilterLen] = {kC, kD, -kD, -kC};
}  // namespace bior31

struct DwtPair {
  std::vector<double> approx;
  std::vector<double> detail;
};

// Half-point symmetric extension: x[-1-t] to the left, x[2n-1-t] to the right.
inline double sym_ext(const std::vector<double>& x, long long t) {
  const long long n = static_cast<long long>(x.size());
  if (t < 0) t = -1 - t;
  if (t >= n) t = 2 * n - 1 - t;
  if (t < 0 || t >= n) throw ShapeError("signal too short for symmetric extension");
  return x[static_cast<std::size_t>(t)];
}

// One analysis step: convolve against the extended signal and keep the odd
// phases of the full convolution, floor((n + 3) / 2) coefficients per band.
// Those positions read only taps inside the 3-sample extension margin, so
// the inverse step below reconstructs exactly.
inline DwtPair dwt_step(const std::vector<double>& x) {
  using namespace bior31;
  const std::size_t n = x.size();
  if (n < kFilterLen) throw ShapeError("dwt_step needs at least 4 samples, got " + std::to_string(n));
  const std::size_t m = (n + kFilterLen - 1) / 2;
  DwtPair out;
  out.approx.resize(m);
  out.detail.resize(m);
  for (std::size_t q = 0; q < m; ++q) {
    const long long pos = static_cast<long long>(2 * q + 1);
    double lo = 0.0, hi = 0.0;
    for (std::size_t u = 0; u < kFilterLen; ++u) {
      const double xv = sym_ext(x, pos - static_cast<long long>(u));
      lo += kDecLo[u] * xv;
      hi += kDecHi[u] * xv;
    }
    out.approx[q] = lo;
    out.detail[q] = hi;
  }
  return out;
}

// One synthesis step: upsample both bands to the odd phases, convolve with
// the reconstruction filters, and crop the 3-tap delay to recover n samples.
inline std::vector<double> idwt_step(const std::vector<double>& approx,
                                     const std::vector<double>& detail, std::size_t n) {
  using namespace bior31;
  if (approx.size() != detail.size())
    throw ShapeError("idwt_step: band length mismatch " + std::to_string(approx.size()) + " vs " +
                     std::to_string(detail.size()));
  if (approx.size() != (n + kFilterLen - 1) / 2)
    throw ShapeError("idwt_step: " + std::to_string(approx.size()) + " coefficients cannot yield " +
                     std::to_string(n) + " samples");
  std::vector<double> y(n, 0.0);
  for (std::size_t q = 0; q < approx.size(); ++q) {
    const long long pos = static_cast<long long>(2 * q + 1);
    for (std::size_t u = 0; u < kFilterLen; ++u) {
      // output index before cropping is pos + u; crop shifts by the delay
      const long long t = pos + static_cast<long long>(u) - (static_cast<long long>(kFilterLen) - 1);
      if (t < 0 || t >= static_cast<long long>(n)) continue;
      y[static_cast<std::size_t>(t)] += kRecLo[u] * approx[q] + kRecHi[u] * detail[q];
    }
  }
  return y;
}

struct WaveletDecomposition {
  // detail[0] is the finest band (level 1); approx is the coarsest residue.
  std::vector<std::vector<double>> detail;
  std::vector<double> approx;
  std::vector<std::size_t> lengths;  // input length at each level, outermost first
};

inline WaveletDecomposition wavelet_decompose(const std::vector<double>& x, std::size_t levels) {
  if (levels == 0) throw ShapeError("wavelet_decompose needs at least one level");
  WaveletDecomposition d;
  std::vector<double> cur = x;
  for (std::size_t l = 0; l < levels; ++l) {
    d.lengths.push_back(cur.size());
    DwtPair p = dwt_step(cur);
    d.detail.push_back(std::move(p.detail));
    cur = std::move(p.approx);
  }
  d.approx = std::move(cur);
  return d;
}

inline std::vector<double> wavelet_reconstruct(const WaveletDecomposition& d) {
  if (d.detail.size() != d.lengths.size()) throw ShapeError("decomposition bands and lengths disagree");
  std::vector<double> cur = d.approx;
  for (std::size_t l = d.detail.size(); l-- > 0;)
    cur = idwt_step(cur, d.detail[l], d.lengths[l]);
  return cur;
}

inline double soft_threshold(double v, double lambda) {
  const double mag = std::abs(v) - lambda;
  return mag <= 0.0 ? 0.0 : (v < 0.0 ? -mag : mag);
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw ShapeError("median of empty vector");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

// Noise scale from the coarsest detail band: median absolute deviation
// about the median, rescaled by the Gaussian consistency constant.
inline double estimate_sigma(const std::vector<double>& band) {
  const double med = median_of(band);
  std::vector<double> dev(band.size());
  for (std::size_t i = 0; i < band.size(); ++i) dev[i] = std::abs(band[i] - med);
  return median_of(dev) / 0.6745;
}

inline double universal_threshold(double sigma, std::size_t n) {
  return sigma * std::sqrt(2.0 * std::log(static_cast<double>(n)));
}

// 3-level decomposition, soft-threshold the detail bands with the universal
// threshold estimated from the coarsest one, reconstruct, clamp to [0, 1].
inline std::vector<double> wavelet_denoise(const std::vector<double>& x) {
  constexpr std::size_t kLevels = 3;
  WaveletDecomposition d = wavelet_decompose(x, kLevels);
  const double sigma = estimate_sigma(d.detail.back());
  const double lambda = universal_threshold(sigma, x.size());
  for (auto& band : d.detail)
    for (double& v : band) v = soft_threshold(v, lambda);
  std::vector<double> y = wavelet_reconstruct(d);
  for (double& v : y) v = std::clamp(v, 0.0, 1.0);
  return y;
}

}  // namespace splitnn
