#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <numbers>
#include <utility>
#include <vector>

#include "splitnn/tensor.hpp"
#include "splitnn/wavelet.hpp"
#include "splitnn/wfdb.hpp"

namespace splitnn {

// Scales to [0, 1]; a flat segment has no scale, so the caller drops it.
inline bool minmax_normalize(std::vector<double>& x) {
  if (x.empty()) throw ShapeError("minmax_normalize on empty vector");
  double lo = x[0], hi = x[0];
  for (double v : x) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi <= lo) return false;
  const double inv = 1.0 / (hi - lo);
  for (double& v : x) v = (v - lo) * inv;
  return true;
}

namespace detail {

struct ResampleTables {
  std::size_t kmax = 0;      // highest analysis bin
  std::vector<double> ac, as;  // N x (kmax+1) analysis cos / sin
  std::vector<double> sc, ss;  // M x (kmax+1) synthesis cos / sin
};

inline const ResampleTables& resample_tables(std::size_t n, std::size_t m) {
  static std::map<std::pair<std::size_t, std::size_t>, ResampleTables> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find({n, m});
  if (it != cache.end()) return it->second;
  ResampleTables t;
  t.kmax = m / 2;  // for odd m this is (m-1)/2, and there is no half-band bin
  t.ac.resize(n * (t.kmax + 1));
  t.as.resize(n * (t.kmax + 1));
  t.sc.resize(m * (t.kmax + 1));
  t.ss.resize(m * (t.kmax + 1));
  for (std::size_t k = 0; k <= t.kmax; ++k) {
    for (std::size_t s = 0; s < n; ++s) {
      const double ang = 2.0 * std::numbers::pi * static_cast<double>(k * s) / static_cast<double>(n);
      t.ac[s * (t.kmax + 1) + k] = std::cos(ang);
      t.as[s * (t.kmax + 1) + k] = std::sin(ang);
    }
    for (std::size_t s = 0; s < m; ++s) {
      const double ang = 2.0 * std::numbers::pi * static_cast<double>(k * s) / static_cast<double>(m);
      t.sc[s * (t.kmax + 1) + k] = std::cos(ang);
      t.ss[s * (t.kmax + 1) + k] = std::sin(ang);
    }
  }
  return cache.emplace(std::make_pair(n, m), std::move(t)).first->second;
}

}  // namespace detail

// Band-limited resampling: take the DFT, keep the m lowest bins, and
// evaluate the inverse transform on the coarser grid. When m is even the
// half-band bin takes the real part of the source bin, which averages the
// two conjugate contributions and never raises the energy of the result.
inline std::vector<double> fourier_resample(const std::vector<double>& x, std::size_t m) {
  const std::size_t n = x.size();
  if (m < 2 || m > n) throw ShapeError("fourier_resample to " + std::to_string(m) + " from " + std::to_string(n));
  const detail::ResampleTables& t = detail::resample_tables(n, m);
  const std::size_t stride = t.kmax + 1;
  std::vector<double> re(t.kmax + 1, 0.0), im(t.kmax + 1, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const double v = x[s];
    const double* c = &t.ac[s * stride];
    const double* si = &t.as[s * stride];
    for (std::size_t k = 0; k <= t.kmax; ++k) {
      re[k] += v * c[k];
      im[k] -= v * si[k];
    }
  }
  const bool has_half_band = (m % 2 == 0);
  const std::size_t kfull = has_half_band ? t.kmax - 1 : t.kmax;  // bins doubled by conjugate symmetry
  std::vector<double> y(m);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t s = 0; s < m; ++s) {
    const double* c = &t.sc[s * stride];
    const double* si = &t.ss[s * stride];
    double acc = re[0];
    for (std::size_t k = 1; k <= kfull; ++k) acc += 2.0 * (re[k] * c[k] - im[k] * si[k]);
    if (has_half_band) acc += re[t.kmax] * c[t.kmax];  // cos(pi*s) = (-1)^s
    y[s] = acc * scale;
  }
  return y;
}

struct BeatSegment {
  std::vector<double> samples;  // window around the annotated peak
  std::uint8_t label = 0;       // class index in [0, 5)
  std::size_t r_pos = 0;        // peak sample in the source record
};

struct SegmentStats {
  std::size_t out_of_bounds = 0;
  std::size_t overlapping = 0;
  std::size_t other_class = 0;
};

// Cut a fixed window around every study-class beat whose window stays in
// bounds and contains no other beat annotation. Overlap is checked against
// all beats, including classes outside the study set.
inline std::vector<BeatSegment> segment_beats(const std::vector<double>& signal,
                                              const std::vector<Annotation>& anns,
                                              std::size_t half_window = 100,
                                              SegmentStats* stats = nullptr) {
  struct BeatAnn {
    std::size_t sample;
    std::uint8_t code;
  };
  std::vector<BeatAnn> beats;
  for (const Annotation& a : anns)
    if (is_beat_code(a.code)) beats.push_back({a.sample, a.code});
  std::vector<BeatSegment> out;
  SegmentStats local;
  for (std::size_t i = 0; i < beats.size(); ++i) {
    const std::size_t r = beats[i].sample;
    const int cls = beat_code_to_class(beats[i].code);
    if (r < half_window || r + half_window >= signal.size()) {
      ++local.out_of_bounds;
      continue;
    }
    // beat times are strictly increasing, so only the adjacent beats can land
    // inside the window
    const bool left_in = i > 0 && beats[i - 1].sample + half_window >= r;
    const bool right_in = i + 1 < beats.size() && beats[i + 1].sample <= r + half_window;
    if (left_in || right_in) {
      ++local.overlapping;
      continue;
    }
    if (cls < 0) {
      ++local.other_class;
      continue;
    }
    BeatSegment seg;
    seg.samples.assign(signal.begin() + static_cast<std::ptrdiff_t>(r - half_window),
                       signal.begin() + static_cast<std::ptrdiff_t>(r + half_window + 1));
    seg.label = static_cast<std::uint8_t>(cls);
    seg.r_pos = r;
    out.push_back(std::move(seg));
  }
  if (stats) *stats = local;
  return out;
}

inline constexpr std::size_t kSegmentHalfWindow = 100;
inline constexpr std::size_t kBeatLength = 128;

// Full per-beat chain: normalize, denoise, resample to the model length,
// normalize again to undo any range lost to thresholding. Returns false for
// flat segments.
inline bool preprocess_beat(const std::vector<double>& segment, std::vector<double>& out) {
  std::vector<double> x = segment;
  if (!minmax_normalize(x)) return false;
  x = wavelet_denoise(x);
  x = fourier_resample(x, kBeatLength);
  out = std::move(x);
  if (!minmax_normalize(out)) return false;
  return true;
}

}  // namespace splitnn
