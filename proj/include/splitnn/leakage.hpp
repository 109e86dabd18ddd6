#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <string>
#include <vector>

#include "splitnn/dataset.hpp"
#include "splitnn/metrics.hpp"
#include "splitnn/model.hpp"

namespace splitnn {

// Mutator applied to an activation before it is assessed, matching what the
// client would do before transmission. The bool marks evaluation traffic.
using LeakageHook = std::function<void(Tensor&, bool)>;

struct ChannelLeakage {
  std::size_t channel = 0;
  double dcor_mean = 0.0;
  double dtw_mean = 0.0;
  std::size_t samples = 0;
  std::size_t constant_flags = 0;  // samples whose channel was flat (dCor counted as 0)
};

// Raw per-sample metric values, one row per channel, for distribution plots.
struct LeakageDetail {
  std::vector<std::vector<double>> dcor;
  std::vector<std::vector<double>> dtw;
};

struct LeakageReport {
  std::string description;
  std::vector<ChannelLeakage> channels;

  std::vector<std::size_t> by_dcor_desc() const {
    std::vector<std::size_t> idx(channels.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return channels[a].dcor_mean > channels[b].dcor_mean;
    });
    return idx;
  }
  std::vector<std::size_t> by_dtw_asc() const {
    std::vector<std::size_t> idx(channels.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return channels[a].dtw_mean < channels[b].dtw_mean;
    });
    return idx;
  }
  double max_dcor() const {
    double m = 0.0;
    for (const auto& c : channels) m = std::max(m, c.dcor_mean);
    return m;
  }
  double mean_dcor() const {
    Kahan k;
    for (const auto& c : channels) k.add(c.dcor_mean);
    return channels.empty() ? 0.0 : k.value() / static_cast<double>(channels.size());
  }
};

inline Tensor tap_activation(const Model& part, const Beat& beat, std::size_t tap_layers,
                             const LeakageHook& hook) {
  Tensor cur({1, beat.samples.size()});
  cur.data = beat.samples;
  for (std::size_t i = 0; i < tap_layers; ++i) cur = part.apply_layer(i, cur, nullptr);
  if (hook) hook(cur, true);
  return cur;
}

// Per-channel dependence of what the server sees on what the client holds:
// for every beat, tap the activation after tap_layers of the lower part,
// then per channel take dCor against the average-downsampled raw beat and
// DTW against the raw beat itself. Means use compensated summation, so the
// result is independent of sample order.
inline LeakageReport channel_leakage(const Model& part, const std::vector<Beat>& beats,
                                     std::size_t tap_layers, const LeakageHook& hook = {},
                                     LeakageDetail* detail = nullptr) {
  if (beats.empty()) throw DataError("leakage assessment needs at least one beat");
  if (tap_layers == 0 || tap_layers > part.layers.size())
    throw ConfigError("tap depth " + std::to_string(tap_layers) + " outside part of " +
                      std::to_string(part.layers.size()) + " layers");
  Tensor probe = tap_activation(part, beats[0], tap_layers, {});
  if (probe.ndim() != 2)
    throw ConfigError("leakage tap must be a channels x length activation, got " +
                      shape_str(probe.shape));
  const std::size_t nch = probe.shape[0];
  const std::size_t clen = probe.shape[1];
  if (beats[0].samples.size() % clen != 0)
    throw ConfigError("channel length " + std::to_string(clen) + " does not divide the beat length");

  std::vector<Kahan> dcor_sum(nch), dtw_sum(nch);
  std::vector<std::size_t> flats(nch, 0);
  if (detail) {
    detail->dcor.assign(nch, {});
    detail->dtw.assign(nch, {});
  }
  for (const Beat& b : beats) {
    const Tensor act = tap_activation(part, b, tap_layers, hook);
    if (act.shape != probe.shape)
      throw ConfigError("activation shape changed across beats: " + shape_str(act.shape));
    const std::vector<double> down = avg_downsample(b.samples, clen);
    for (std::size_t k = 0; k < nch; ++k) {
      std::vector<double> ch(act.data.begin() + static_cast<std::ptrdiff_t>(k * clen),
                             act.data.begin() + static_cast<std::ptrdiff_t>((k + 1) * clen));
      const auto [lo, hi] = std::minmax_element(ch.begin(), ch.end());
      if (*hi <= *lo) ++flats[k];  // dCor contributes 0 by definition below
      const double dc = distance_correlation(down, ch);
      const double dt = dtw_distance(b.samples, ch);
      dcor_sum[k].add(dc);
      dtw_sum[k].add(dt);
      if (detail) {
        detail->dcor[k].push_back(dc);
        detail->dtw[k].push_back(dt);
      }
    }
  }
  LeakageReport rep;
  for (std::size_t k = 0; k < nch; ++k) {
    ChannelLeakage cl;
    cl.channel = k;
    cl.dcor_mean = dcor_sum[k].value() / static_cast<double>(beats.size());
    cl.dtw_mean = dtw_sum[k].value() / static_cast<double>(beats.size());
    cl.samples = beats.size();
    cl.constant_flags = flats[k];
    rep.channels.push_back(cl);
  }
  return rep;
}

inline void write_leakage_csv(const std::string& path, const LeakageReport& rep) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path);
  os << "channel,dcor_mean,dtw_mean,samples\n" << std::setprecision(17);
  for (const auto& c : rep.channels)
    os << c.channel << ',' << c.dcor_mean << ',' << c.dtw_mean << ',' << c.samples << '\n';
  if (!os) throw DataError("short write to " + path);
}

// Side-by-side dumps for the visual invertibility check: per class, the raw
// beat next to its most-correlated channel. The first beat seen of each class
// is the one dumped. Returns the written file names.
inline std::vector<std::string> export_visual(const Model& part, const std::vector<Beat>& beats,
                                              const std::string& out_dir, std::size_t tap_layers,
                                              const LeakageHook& hook = {}) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;
  bool done[kNumClasses] = {};
  for (const Beat& b : beats) {
    if (b.label >= kNumClasses || done[b.label]) continue;
    done[b.label] = true;
    const Tensor act = tap_activation(part, b, tap_layers, hook);
    const std::size_t nch = act.shape[0];
    const std::size_t clen = act.shape[1];
    const std::vector<double> down = avg_downsample(b.samples, clen);
    std::size_t best = 0;
    double best_dcor = -1.0;
    for (std::size_t k = 0; k < nch; ++k) {
      std::vector<double> ch(act.data.begin() + static_cast<std::ptrdiff_t>(k * clen),
                             act.data.begin() + static_cast<std::ptrdiff_t>((k + 1) * clen));
      const double dc = distance_correlation(down, ch);
      if (dc > best_dcor) {
        best_dcor = dc;
        best = k;
      }
    }
    const std::string path = out_dir + "/visual_" + kClassNames[b.label] + ".csv";
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open " + path);
    os << "raw,channel" << best << "_activation\n" << std::setprecision(17);
    const std::size_t rows = std::max(b.samples.size(), clen);
    for (std::size_t i = 0; i < rows; ++i) {
      if (i < b.samples.size()) os << b.samples[i];
      os << ',';
      if (i < clen) os << act.data[best * clen + i];
      os << '\n';
    }
    written.push_back(path);
  }
  return written;
}

}  // namespace splitnn
