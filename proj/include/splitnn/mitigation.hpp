#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "splitnn/leakage.hpp"
#include "splitnn/training.hpp"

namespace splitnn {

// How the Laplace scale's sensitivity is chosen. FixedUnit treats every
// value as having unit range; PerChannelRange uses each channel's actual
// max - min within the activation being transmitted.
enum class SensitivityPolicy { FixedUnit, PerChannelRange };

struct DpConfig {
  double epsilon = 1.0;
  SensitivityPolicy policy = SensitivityPolicy::FixedUnit;
  std::uint64_t seed = 1;
};

// Adds Lap(0, b) noise in place with b = sensitivity / epsilon. An infinite
// epsilon degenerates to b = 0 and leaves the tensor untouched, as does a
// flat channel under PerChannelRange.
inline void laplace_noise(Tensor& a, double epsilon, SensitivityPolicy policy, Rng& rng) {
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (policy == SensitivityPolicy::FixedUnit) {
    const double b = 1.0 / epsilon;
    for (double& v : a.data) v += rng.laplace(b);
    return;
  }
  if (a.ndim() != 2)
    throw ConfigError("per-channel sensitivity needs a [channels, length] activation, got " +
                      shape_str(a.shape));
  const std::size_t nch = a.shape[0], len = a.shape[1];
  for (std::size_t k = 0; k < nch; ++k) {
    double lo = a.data[k * len], hi = lo;
    for (std::size_t t = 1; t < len; ++t) {
      lo = std::min(lo, a.data[k * len + t]);
      hi = std::max(hi, a.data[k * len + t]);
    }
    const double b = (hi - lo) / epsilon;
    for (std::size_t t = 0; t < len; ++t) a.data[k * len + t] += rng.laplace(b);
  }
}

inline constexpr std::uint64_t kDpStreamTag = 0x1AB1ACEULL;

inline Tensor laplace_noise(const Tensor& a, const DpConfig& cfg) {
  Tensor out = a;
  Rng rng(mix_seed(cfg.seed, kDpStreamTag));
  laplace_noise(out, cfg.epsilon, cfg.policy, rng);
  return out;
}

// Client-side hook noising every activation before it leaves the process,
// during training and evaluation alike. One stream per hook instance; the
// first tensor it touches matches laplace_noise(t, cfg) exactly.
inline NoiseHook make_dp_hook(const DpConfig& cfg) {
  if (!(cfg.epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  auto rng = std::make_shared<Rng>(mix_seed(cfg.seed, kDpStreamTag));
  return [cfg, rng](Tensor& a, bool) { laplace_noise(a, cfg.epsilon, cfg.policy, *rng); };
}

// ---- sweeps ----

struct SweepPointResult;

struct SweepConfig {
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  TrainConfig train;  // seed is overridden per point from `seeds`
  std::size_t leakage_samples = 100;
  SensitivityPolicy policy = SensitivityPolicy::FixedUnit;
  std::function<void(const SweepPointResult&)> on_point;  // progress reporting
};

struct SweepPointResult {
  double axis = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  LeakageReport leakage;
  bool failed = false;
  std::string error;
};

struct SweepResult {
  std::string axis_name;            // "depth" or "epsilon"
  std::vector<double> axis_values;  // sweep order, preserved in all outputs
  std::vector<SweepPointResult> points;
  std::vector<LeakageDetail> details;  // per axis value, from its first succeeding seed
};

inline std::string format_axis(double v) {
  if (std::isinf(v)) return "inf";
  if (v == std::floor(v) && std::fabs(v) < 1e15) {
    std::ostringstream os;
    os << static_cast<long long>(v);
    return os.str();
  }
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// Evenly spaced draw so a class-ordered pool still yields a class mix.
inline std::vector<Beat> pick_assessment_beats(const std::vector<Beat>& pool, std::size_t n) {
  if (pool.empty()) throw DataError("no beats to assess");
  if (n == 0 || n >= pool.size()) return pool;
  std::vector<Beat> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(pool[i * pool.size() / n]);
  return out;
}

inline constexpr std::uint64_t kAssessStreamTag = 0xA55E55ULL;

namespace detail {

inline SweepPointResult run_sweep_point(const std::function<ModelConfig()>& make_arch,
                                        const BeatDataset& ds, const SweepConfig& cfg,
                                        std::uint64_t seed, double axis, double epsilon,
                                        LeakageDetail* det) {
  SweepPointResult r;
  r.axis = axis;
  r.seed = seed;
  try {
    const ModelConfig arch = make_arch();
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    NoiseHook train_hook, assess_hook;
    if (std::isfinite(epsilon)) {
      train_hook = make_dp_hook({epsilon, cfg.policy, seed});
      assess_hook = make_dp_hook({epsilon, cfg.policy, mix_seed(seed, kAssessStreamTag)});
    }
    SplitModel sm = split_model(arch, tc.seed);
    const std::vector<EpochMetrics> history = train_full(sm, ds, tc, train_hook);
    r.accuracy = history.back().test_accuracy;
    const std::vector<Beat> sample = pick_assessment_beats(ds.test, cfg.leakage_samples);
    r.leakage = channel_leakage(sm.client, sample, sm.client.layers.size(), assess_hook, det);
  } catch (const std::exception& e) {
    r.failed = true;
    r.error = e.what();
  }
  return r;
}

inline SweepResult run_sweep(const std::string& axis_name, const std::vector<double>& axis_values,
                             const std::function<ModelConfig(double)>& arch_for,
                             const std::function<double(double)>& eps_for, const BeatDataset& ds,
                             const SweepConfig& cfg) {
  if (cfg.seeds.empty()) throw ConfigError("sweep needs at least one seed");
  SweepResult res;
  res.axis_name = axis_name;
  res.axis_values = axis_values;
  res.details.resize(axis_values.size());
  for (std::size_t ai = 0; ai < axis_values.size(); ++ai) {
    const double axis = axis_values[ai];
    bool captured = false;
    for (std::uint64_t seed : cfg.seeds) {
      SweepPointResult p = run_sweep_point([&] { return arch_for(axis); }, ds, cfg, seed, axis,
                                           eps_for(axis), captured ? nullptr : &res.details[ai]);
      if (!p.failed) captured = true;
      if (cfg.on_point) cfg.on_point(p);
      res.points.push_back(std::move(p));
    }
  }
  return res;
}

}  // namespace detail

// Retrains the depth-k client for each k and measures split-layer leakage.
// A failing point (bad k, training blowup) is recorded, not fatal.
inline SweepResult depth_sweep(const std::vector<int>& k_values, const BeatDataset& ds,
                               const SweepConfig& cfg) {
  std::vector<double> axis(k_values.begin(), k_values.end());
  return detail::run_sweep(
      "depth", axis, [](double k) { return build_depth_k(static_cast<std::size_t>(k)); },
      [](double) { return std::numeric_limits<double>::infinity(); }, ds, cfg);
}

// Retrains the two-layer model per epsilon with Laplace noise on the split
// layer, during training and evaluation both. Include +inf as the no-noise
// baseline point; it doubles as the channel-selection base for distributions.
inline SweepResult dp_sweep(const std::vector<double>& eps_values, const BeatDataset& ds,
                            const SweepConfig& cfg) {
  return detail::run_sweep(
      "epsilon", eps_values, [](double) { return build_two_layer(); },
      [](double e) { return e; }, ds, cfg);
}

// ---- aggregation ----

struct AxisLeakage {
  double axis = 0.0;
  std::vector<ChannelLeakage> channels;  // seed-averaged
};

inline std::vector<AxisLeakage> averaged_leakage(const SweepResult& res) {
  std::vector<AxisLeakage> out;
  for (double axis : res.axis_values) {
    AxisLeakage row;
    row.axis = axis;
    std::size_t n = 0;
    for (const SweepPointResult& p : res.points) {
      if (p.axis != axis || p.failed) continue;
      if (row.channels.empty()) row.channels.resize(p.leakage.channels.size());
      if (row.channels.size() != p.leakage.channels.size())
        throw StateError("channel count changed between seeds at one sweep point");
      for (std::size_t k = 0; k < row.channels.size(); ++k) {
        row.channels[k].channel = k;
        row.channels[k].dcor_mean += p.leakage.channels[k].dcor_mean;
        row.channels[k].dtw_mean += p.leakage.channels[k].dtw_mean;
        row.channels[k].samples = p.leakage.channels[k].samples;
      }
      ++n;
    }
    for (auto& c : row.channels) {
      c.dcor_mean /= static_cast<double>(n);
      c.dtw_mean /= static_cast<double>(n);
    }
    if (n > 0) out.push_back(std::move(row));
  }
  return out;
}

struct AxisAccuracy {
  double axis = 0.0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, n - 1
  std::size_t n = 0;
};

inline std::vector<AxisAccuracy> accuracy_summary(const SweepResult& res) {
  std::vector<AxisAccuracy> out;
  for (double axis : res.axis_values) {
    AxisAccuracy row;
    row.axis = axis;
    Kahan sum;
    std::vector<double> vals;
    for (const SweepPointResult& p : res.points) {
      if (p.axis != axis || p.failed) continue;
      sum.add(p.accuracy);
      vals.push_back(p.accuracy);
    }
    row.n = vals.size();
    if (row.n == 0) continue;
    row.mean = sum.value() / static_cast<double>(row.n);
    if (row.n > 1) {
      Kahan sq;
      for (double v : vals) sq.add((v - row.mean) * (v - row.mean));
      row.stddev = std::sqrt(sq.value() / static_cast<double>(row.n - 1));
    }
    out.push_back(row);
  }
  return out;
}

// ---- CSV emission ----

inline void write_sweep_accuracy_csv(const std::string& path, const SweepResult& res) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path);
  os << "axis,seed,accuracy\n" << std::setprecision(17);
  for (const SweepPointResult& p : res.points) {
    if (p.failed) continue;
    os << format_axis(p.axis) << ',' << p.seed << ',' << p.accuracy << '\n';
  }
  if (!os) throw DataError("short write to " + path);
}

inline void write_sweep_accuracy_summary_csv(const std::string& path, const SweepResult& res) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path);
  os << "axis,mean,std\n" << std::setprecision(17);
  for (const AxisAccuracy& a : accuracy_summary(res))
    os << format_axis(a.axis) << ',' << a.mean << ',' << a.stddev << '\n';
  if (!os) throw DataError("short write to " + path);
}

inline void write_sweep_leakage_csv(const std::string& path, const SweepResult& res) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path);
  os << "axis,channel,dcor_mean,dtw_mean\n" << std::setprecision(17);
  for (const AxisLeakage& row : averaged_leakage(res))
    for (const ChannelLeakage& c : row.channels)
      os << format_axis(row.axis) << ',' << c.channel << ',' << c.dcor_mean << ',' << c.dtw_mean
         << '\n';
  if (!os) throw DataError("short write to " + path);
}

// Full per-sample metric distributions for the channels that matter: the
// top-2 and bottom-2 by seed-averaged mean at the base axis point, for dCor
// (high = correlated) and DTW (low = similar) independently. Values come
// from each axis point's first succeeding seed; mu repeats the column mean.
inline void write_distributions_csv(const std::string& path, const SweepResult& res,
                                    double base_axis) {
  const std::vector<AxisLeakage> avg = averaged_leakage(res);
  const AxisLeakage* base = nullptr;
  for (const AxisLeakage& row : avg)
    if (row.axis == base_axis) base = &row;
  if (!base) throw StateError("base axis point " + format_axis(base_axis) + " missing from sweep");

  const std::size_t nch = base->channels.size();
  std::vector<std::size_t> by_dcor(nch), by_dtw(nch);
  std::iota(by_dcor.begin(), by_dcor.end(), std::size_t{0});
  by_dtw = by_dcor;
  std::stable_sort(by_dcor.begin(), by_dcor.end(), [&](std::size_t a, std::size_t b) {
    return base->channels[a].dcor_mean > base->channels[b].dcor_mean;
  });
  std::stable_sort(by_dtw.begin(), by_dtw.end(), [&](std::size_t a, std::size_t b) {
    return base->channels[a].dtw_mean < base->channels[b].dtw_mean;
  });
  if (nch < 2) throw StateError("distribution dump needs at least 2 channels");

  struct Group {
    const char* metric;
    const char* group;
    std::size_t ch[2];
  };
  const Group groups[4] = {
      {"dcor", "top", {by_dcor[0], by_dcor[1]}},
      {"dcor", "bottom", {by_dcor[nch - 1], by_dcor[nch - 2]}},
      {"dtw", "top", {by_dtw[0], by_dtw[1]}},
      {"dtw", "bottom", {by_dtw[nch - 1], by_dtw[nch - 2]}},
  };

  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path);
  os << "axis,metric,group,channel,sample,value,mu\n" << std::setprecision(17);
  for (std::size_t ai = 0; ai < res.axis_values.size(); ++ai) {
    const LeakageDetail& det = res.details[ai];
    if (det.dcor.empty()) continue;  // every seed at this point failed
    for (const Group& g : groups) {
      const auto& rows = std::string(g.metric) == "dcor" ? det.dcor : det.dtw;
      for (std::size_t ch : {g.ch[0], g.ch[1]}) {
        if (ch >= rows.size()) throw StateError("distribution channel out of range");
        Kahan mu;
        for (double v : rows[ch]) mu.add(v);
        const double m = rows[ch].empty() ? 0.0 : mu.value() / static_cast<double>(rows[ch].size());
        for (std::size_t s = 0; s < rows[ch].size(); ++s)
          os << format_axis(res.axis_values[ai]) << ',' << g.metric << ',' << g.group << ',' << ch
             << ',' << s << ',' << rows[ch][s] << ',' << m << '\n';
      }
    }
  }
  if (!os) throw DataError("short write to " + path);
}

inline void write_sweep_outputs(const std::string& dir, const SweepResult& res, double base_axis) {
  std::filesystem::create_directories(dir);
  write_sweep_accuracy_csv(dir + "/sweep_accuracy.csv", res);
  write_sweep_accuracy_summary_csv(dir + "/sweep_accuracy_summary.csv", res);
  write_sweep_leakage_csv(dir + "/sweep_leakage.csv", res);
  write_distributions_csv(dir + "/distributions.csv", res, base_axis);
}

}  // namespace splitnn
