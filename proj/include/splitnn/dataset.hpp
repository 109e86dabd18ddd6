#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>
#include <vector>

#include "splitnn/pipeline.hpp"
#include "splitnn/rng.hpp"
#include "splitnn/tensor.hpp"
#include "splitnn/wfdb.hpp"

namespace splitnn {

inline constexpr std::size_t kNumClasses = 5;

struct Beat {
  std::vector<double> samples;  // kBeatLength values in [0, 1]
  std::uint8_t label = 0;
  int record_id = -1;
  std::size_t r_pos = 0;
};

struct BeatDataset {
  std::vector<Beat> train;
  std::vector<Beat> test;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Per-class draw for the training half; the test half takes the same count
// again, so a class needs twice this many beats in the pool.
inline constexpr std::array<std::size_t, kNumClasses> kTrainTargets = {3000, 3000, 3000, 1245, 3000};

// Deterministic class-balanced subsample: shuffle each class pool with its
// own seed stream, then deal the first half of the draw to train and the
// second half to test.
inline BeatDataset build_dataset(const std::vector<Beat>& all, std::uint64_t seed,
                                 const std::array<std::size_t, kNumClasses>& train_targets = kTrainTargets) {
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].label >= kNumClasses)
      throw DataError("beat " + std::to_string(i) + " has label " + std::to_string(all[i].label));
    by_class[all[i].label].push_back(i);
  }
  BeatDataset ds;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::size_t need = 2 * train_targets[c];
    if (by_class[c].size() < need)
      throw DataError(std::string("class ") + kClassNames[c] + " has " +
                      std::to_string(by_class[c].size()) + " beats, need " + std::to_string(need));
    Rng rng(mix_seed(seed, 0xDA7A0000ull + c));
    rng.shuffle(by_class[c]);
    for (std::size_t i = 0; i < train_targets[c]; ++i) ds.train.push_back(all[by_class[c][i]]);
    for (std::size_t i = train_targets[c]; i < need; ++i) ds.test.push_back(all[by_class[c][i]]);
  }
  return ds;
}

// ---- binary beat cache ----

inline constexpr char kBeatCacheMagic[4] = {'B', 'E', 'A', 'T'};
inline constexpr std::uint16_t kBeatCacheVersion = 1;

inline void save_beat_cache(const std::string& path, const BeatDataset& ds) {
  if (ds.train.size() != ds.test.size())
    throw DataError("cache expects equal train/test halves, got " + std::to_string(ds.train.size()) +
                    " and " + std::to_string(ds.test.size()));
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os.write(kBeatCacheMagic, 4);
  const std::uint16_t ver = kBeatCacheVersion;
  os.write(reinterpret_cast<const char*>(&ver), sizeof ver);
  const std::uint32_t count = static_cast<std::uint32_t>(ds.train.size() + ds.test.size());
  os.write(reinterpret_cast<const char*>(&count), sizeof count);
  auto put = [&](const Beat& b) {
    if (b.samples.size() != kBeatLength)
      throw DataError("cache beat has " + std::to_string(b.samples.size()) + " samples");
    for (double v : b.samples) {
      const float f = static_cast<float>(v);
      os.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
    os.write(reinterpret_cast<const char*>(&b.label), 1);
  };
  for (const Beat& b : ds.train) put(b);
  for (const Beat& b : ds.test) put(b);
  if (!os) throw DataError("short write to " + path);
}

// Train beats occupy the first half of the file, test beats the second.
inline BeatDataset load_beat_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  char magic[4];
  std::uint16_t ver = 0;
  std::uint32_t count = 0;
  is.read(magic, 4);
  is.read(reinterpret_cast<char*>(&ver), sizeof ver);
  is.read(reinterpret_cast<char*>(&count), sizeof count);
  if (!is || std::memcmp(magic, kBeatCacheMagic, 4) != 0)
    throw DataError(path + ": not a beat cache");
  if (ver != kBeatCacheVersion)
    throw DataError(path + ": cache version " + std::to_string(ver) + ", expected " +
                    std::to_string(kBeatCacheVersion));
  if (count % 2 != 0) throw DataError(path + ": odd beat count " + std::to_string(count));
  BeatDataset ds;
  for (std::uint32_t i = 0; i < count; ++i) {
    Beat b;
    b.samples.resize(kBeatLength);
    for (std::size_t s = 0; s < kBeatLength; ++s) {
      float f = 0.0f;
      is.read(reinterpret_cast<char*>(&f), sizeof f);
      b.samples[s] = static_cast<double>(f);
    }
    is.read(reinterpret_cast<char*>(&b.label), 1);
    if (!is) throw DataError(path + ": truncated at beat " + std::to_string(i));
    if (b.label >= kNumClasses) throw DataError(path + ": bad label at beat " + std::to_string(i));
    (i < count / 2 ? ds.train : ds.test).push_back(std::move(b));
  }
  return ds;
}

// ---- record loading ----

struct RecordBeats {
  int id = 0;
  std::vector<Beat> beats;
  SegmentStats stats;
  std::size_t flat_discarded = 0;
};

// Reads <id>.hea/.dat/.atr from dir, picks the named lead, and runs the full
// segmentation and preprocessing chain.
inline RecordBeats load_record_beats(const std::filesystem::path& dir, int id,
                                     const std::string& lead = "MLII") {
  const std::string name = std::to_string(id);
  auto slurp = [&](const char* ext) {
    std::ifstream is(dir / (name + ext), std::ios::binary);
    if (!is) throw DataError("cannot open " + (dir / (name + ext)).string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(is), {});
  };
  std::ifstream hs(dir / (name + ".hea"));
  if (!hs) throw DataError("cannot open " + (dir / (name + ".hea")).string());
  std::string header_text((std::istreambuf_iterator<char>(hs)), {});
  const WfdbHeader header = parse_wfdb_header(header_text);
  if (header.nsig != 2 || header.signals[0].format != 212)
    throw DataError(name + ": expected two format-212 signals");
  const int ch = find_channel(header, lead);
  if (ch < 0) throw DataError(name + ": no " + lead + " lead");
  const auto channels = unpack_212(slurp(".dat"), header.nsamples);
  const auto anns = parse_annotations(slurp(".atr"));
  std::vector<double> signal(channels[static_cast<std::size_t>(ch)].begin(),
                             channels[static_cast<std::size_t>(ch)].end());
  RecordBeats out;
  out.id = id;
  const auto segments = segment_beats(signal, anns, kSegmentHalfWindow, &out.stats);
  for (const BeatSegment& seg : segments) {
    Beat b;
    if (!preprocess_beat(seg.samples, b.samples)) {
      ++out.flat_discarded;
      continue;
    }
    b.label = seg.label;
    b.record_id = id;
    b.r_pos = seg.r_pos;
    out.beats.push_back(std::move(b));
  }
  return out;
}

// The database's canonical 48 record ids, exclusions included.
inline constexpr int kAllRecordIds[48] = {
    100, 101, 102, 103, 104, 105, 106, 107, 108, 109, 111, 112, 113, 114, 115, 116,
    117, 118, 119, 121, 122, 123, 124, 200, 201, 202, 203, 205, 207, 208, 209, 210,
    212, 213, 214, 215, 217, 219, 220, 221, 222, 223, 228, 230, 231, 232, 233, 234};

// Every non-excluded record id present as a .hea file in dir, ascending.
inline std::vector<int> list_usable_records(const std::filesystem::path& dir) {
  std::vector<int> ids;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() != ".hea") continue;
    const std::string stem = e.path().stem().string();
    if (stem.empty() || stem.find_first_not_of("0123456789") != std::string::npos) continue;
    const int id = std::stoi(stem);
    if (!record_excluded(id)) ids.push_back(id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

// ---- synthetic corpus ----

// Five fixed morphologies built from Gaussian bumps, jittered per beat in
// position, width, and amplitude, plus a slow sine and sample noise. Clean
// signals keep the classes learnable while the discriminative features stay
// small next to the shared R spike.
namespace synth {

struct Bump {
  double center, width, amp;
};

// Every class shares the dominant R spike at the segmentation anchor; the
// classes differ only in the low-amplitude P and T morphology, the way real
// beat classes do. Keeping the discriminative features small relative to the
// QRS is what lets range-scaled noise suppress them.
inline const std::vector<Bump>& class_template(std::size_t cls) {
  static const std::vector<Bump> kTemplates[kNumClasses] = {
      {{30, 4.0, 0.28}, {64, 3.0, 1.00}, {94, 7.0, 0.36}},   // N: textbook P-QRS-T
      {{30, 4.0, 0.26}, {64, 3.8, 0.98}, {102, 8.0, 0.36}},  // L: widened QRS, delayed T
      {{30, 4.0, 0.09}, {64, 3.0, 1.02}, {90, 6.0, 0.40}},   // R: suppressed P, early T
      {{22, 3.5, 0.30}, {64, 3.0, 0.99}, {94, 7.0, 0.24}},   // A: premature P, weak T
      {{64, 4.6, 0.97}, {94, 8.0, -0.22}},                   // V: no P, wide QRS, inverted T
  };
  if (cls >= kNumClasses) throw DataError("synthetic class out of range");
  return kTemplates[cls];
}

}  // namespace synth

inline Beat synth_beat(std::size_t cls, Rng& rng, double noise_sigma) {
  const auto& tmpl = synth::class_template(cls);
  double qrs_amp = 0.0;
  for (const synth::Bump& b : tmpl) qrs_amp = std::max(qrs_amp, std::abs(b.amp));
  std::vector<synth::Bump> bumps;
  for (const synth::Bump& b : tmpl) {
    // Segmentation centers real beats on the annotated R sample, so the QRS
    // itself does not wander; only the satellite waves do.
    const double jitter = std::abs(b.amp) == qrs_amp ? 0.0 : rng.uniform(-2.0, 2.0);
    bumps.push_back({b.center + jitter, b.width * rng.uniform(0.9, 1.1),
                     b.amp * rng.uniform(0.85, 1.15)});
  }
  const double f = rng.uniform(0.5, 1.5);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  Beat out;
  out.samples.resize(kBeatLength);
  for (std::size_t t = 0; t < kBeatLength; ++t) {
    double v = 0.04 * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(t) / 128.0 + phase);
    for (const synth::Bump& b : bumps) {
      const double d = (static_cast<double>(t) - b.center) / b.width;
      v += b.amp * std::exp(-0.5 * d * d);
    }
    out.samples[t] = v + noise_sigma * rng.normal();
  }
  if (!minmax_normalize(out.samples)) throw DataError("synthetic beat came out flat");
  out.label = static_cast<std::uint8_t>(cls);
  out.record_id = -1;
  double peak = 0.0;
  for (const synth::Bump& b : tmpl)
    if (std::abs(b.amp) > peak) {
      peak = std::abs(b.amp);
      out.r_pos = static_cast<std::size_t>(b.center);
    }
  return out;
}

inline BeatDataset generate_synthetic(std::size_t n_per_class, std::uint64_t seed,
                                      double noise_sigma = 0.02) {
  Rng rng(mix_seed(seed, 0x5EEDull));
  BeatDataset ds;
  for (auto* pool : {&ds.train, &ds.test})
    for (std::size_t c = 0; c < kNumClasses; ++c)
      for (std::size_t i = 0; i < n_per_class; ++i) pool->push_back(synth_beat(c, rng, noise_sigma));
  return ds;
}

}  // namespace splitnn
