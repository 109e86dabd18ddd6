#pragma once

#include <array>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

namespace splitnn {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct WfdbSignalInfo {
  std::string file;
  int format = 0;
  double gain = 200.0;
  double baseline = 0.0;
  std::string description;
};

struct WfdbHeader {
  std::string record;
  std::size_t nsig = 0;
  double fs = 0.0;
  std::size_t nsamples = 0;
  std::vector<WfdbSignalInfo> signals;
};

// Header text: "name nsig fs nsamples" then one line per signal:
// "file format gain(baseline)/units adcres adczero initval checksum blksize description"
inline WfdbHeader parse_wfdb_header(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  WfdbHeader h;
  bool have_record = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    if (!have_record) {
      std::string fs_tok;
      if (!(ls >> h.record >> h.nsig >> fs_tok >> h.nsamples))
        throw ParseError("header line " + std::to_string(lineno) + ": expected 'record nsig fs nsamples'");
      try {
        h.fs = std::stod(fs_tok);  // may carry /counter suffixes; leading number rules
      } catch (const std::logic_error&) {
        throw ParseError("header line " + std::to_string(lineno) + ": bad sampling frequency '" + fs_tok + "'");
      }
      if (h.nsig == 0) throw ParseError("header line " + std::to_string(lineno) + ": zero signals");
      have_record = true;
      continue;
    }
    if (h.signals.size() == h.nsig) break;  // trailing info lines
    WfdbSignalInfo si;
    std::string fmt_tok, gain_tok, adcres, adczero, initval, checksum, blocksize;
    if (!(ls >> si.file >> fmt_tok >> gain_tok >> adcres >> adczero >> initval >> checksum >> blocksize))
      throw ParseError("header line " + std::to_string(lineno) + ": short signal description");
    try {
      si.format = std::stoi(fmt_tok);
    } catch (const std::logic_error&) {
      throw ParseError("header line " + std::to_string(lineno) + ": bad format '" + fmt_tok + "'");
    }
    // gain token: gain, optionally "(baseline)" and "/units"
    try {
      std::size_t pos = 0;
      si.gain = std::stod(gain_tok, &pos);
      if (si.gain == 0.0) si.gain = 200.0;
      si.baseline = std::stod(adczero);
      if (pos < gain_tok.size() && gain_tok[pos] == '(') {
        std::size_t close = gain_tok.find(')', pos);
        if (close == std::string::npos) throw ParseError("");
        si.baseline = std::stod(gain_tok.substr(pos + 1, close - pos - 1));
      }
    } catch (const std::logic_error&) {
      throw ParseError("header line " + std::to_string(lineno) + ": bad gain '" + gain_tok + "'");
    }
    std::string word;
    while (ls >> word) {
      if (!si.description.empty()) si.description += " ";
      si.description += word;
    }
    h.signals.push_back(si);
  }
  if (!have_record) throw ParseError("header: empty file");
  if (h.signals.size() != h.nsig)
    throw ParseError("header: expected " + std::to_string(h.nsig) + " signal lines, found " +
                     std::to_string(h.signals.size()));
  return h;
}

inline int sign_extend_12(int v) { return v >= 2048 ? v - 4096 : v; }

// Format 212 packs two 12-bit two's-complement samples into three bytes:
// A = low byte + low nibble of the middle byte as its high bits,
// B = high nibble of the middle byte as its high bits + the third byte.
inline std::array<std::vector<int>, 2> unpack_212(const std::vector<std::uint8_t>& bytes,
                                                  std::size_t nsamples_per_channel) {
  const std::size_t need = nsamples_per_channel * 3;
  if (bytes.size() < need)
    throw ParseError("format 212 payload truncated at byte " + std::to_string(bytes.size()) +
                     ", need " + std::to_string(need));
  std::array<std::vector<int>, 2> out;
  out[0].resize(nsamples_per_channel);
  out[1].resize(nsamples_per_channel);
  for (std::size_t i = 0; i < nsamples_per_channel; ++i) {
    const std::uint8_t b0 = bytes[3 * i], b1 = bytes[3 * i + 1], b2 = bytes[3 * i + 2];
    out[0][i] = sign_extend_12(((b1 & 0x0F) << 8) | b0);
    out[1][i] = sign_extend_12(((b1 & 0xF0) << 4) | b2);
  }
  return out;
}

inline std::vector<std::uint8_t> pack_212(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw ParseError("pack_212: channel length mismatch");
  std::vector<std::uint8_t> out;
  out.reserve(a.size() * 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < -2048 || a[i] > 2047 || b[i] < -2048 || b[i] > 2047)
      throw ParseError("pack_212: sample outside 12-bit range at index " + std::to_string(i));
    const unsigned ua = static_cast<unsigned>(a[i]) & 0xFFF;
    const unsigned ub = static_cast<unsigned>(b[i]) & 0xFFF;
    out.push_back(static_cast<std::uint8_t>(ua & 0xFF));
    out.push_back(static_cast<std::uint8_t>(((ua >> 8) & 0x0F) | (((ub >> 8) & 0x0F) << 4)));
    out.push_back(static_cast<std::uint8_t>(ub & 0xFF));
  }
  return out;
}

struct Annotation {
  std::size_t sample = 0;
  std::uint8_t code = 0;
};

// Published annotation code table, beat subset.
inline bool is_beat_code(std::uint8_t code) {
  switch (code) {
    case 1: case 2: case 3: case 4: case 5: case 6: case 7: case 8: case 9:
    case 10: case 11: case 12: case 13: case 25: case 34: case 35: case 38: case 41:
      return true;
    default:
      return false;
  }
}

// Class order is [N, L, R, A, V]; -1 for beats outside the study set.
inline int beat_code_to_class(std::uint8_t code) {
  switch (code) {
    case 1: return 0;   // N
    case 2: return 1;   // L
    case 3: return 2;   // R
    case 8: return 3;   // A
    case 5: return 4;   // V
    default: return -1;
  }
}

inline constexpr char kClassNames[6] = "NLRAV";

// Byte-pair annotation stream: each u16 (LE) holds a 6-bit code and a
// 10-bit sample delta. Pseudo-codes: SKIP(59) with delta 0 pulls a 4-byte
// long interval (high u16 first); NUM/SUB/CHN(60..62) attach to the prior
// annotation; AUX(63) skips its byte payload plus an odd-length pad byte.
// The stream ends at a zero word.
inline std::vector<Annotation> parse_annotations(const std::vector<std::uint8_t>& bytes) {
  std::vector<Annotation> out;
  std::size_t pos = 0;
  long long t = 0;
  long long pending_skip = 0;
  long long last_beat_time = -1;
  auto read_u16 = [&](const char* what) -> unsigned {
    if (pos + 2 > bytes.size())
      throw ParseError(std::string("annotation stream truncated reading ") + what + " at byte " +
                       std::to_string(pos));
    unsigned v = bytes[pos] | (bytes[pos + 1] << 8);
    pos += 2;
    return v;
  };
  while (true) {
    const std::size_t at = pos;
    const unsigned word = read_u16("annotation word");
    const unsigned code = word >> 10;
    const unsigned delta = word & 0x3FF;
    if (word == 0) break;  // end of stream
    if (code == 59) {      // SKIP
      if (delta == 0) {
        const unsigned hi = read_u16("skip interval high word");
        const unsigned lo = read_u16("skip interval low word");
        pending_skip += (static_cast<long long>(hi) << 16) | lo;
      } else {
        pending_skip += delta;
      }
      continue;
    }
    if (code == 60 || code == 61 || code == 62) continue;  // NUM/SUB/CHN: no time advance
    if (code == 63) {                                      // AUX: delta counts payload bytes
      std::size_t skip = delta + (delta % 2);
      if (pos + skip > bytes.size())
        throw ParseError("annotation stream truncated inside aux payload at byte " + std::to_string(pos));
      pos += skip;
      continue;
    }
    t += pending_skip + delta;
    pending_skip = 0;
    if (is_beat_code(static_cast<std::uint8_t>(code))) {
      if (t <= last_beat_time)
        throw ParseError("beat annotation times not strictly increasing at byte " + std::to_string(at));
      last_beat_time = t;
    }
    out.push_back({static_cast<std::size_t>(t), static_cast<std::uint8_t>(code)});
  }
  return out;
}

inline std::vector<std::uint8_t> encode_annotations(const std::vector<Annotation>& anns) {
  std::vector<std::uint8_t> out;
  long long t = 0;
  auto put_u16 = [&](unsigned v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
  };
  for (const Annotation& a : anns) {
    long long delta = static_cast<long long>(a.sample) - t;
    if (delta < 0) throw ParseError("encode_annotations: samples must not decrease");
    if (delta > 1023) {
      put_u16(59u << 10);  // SKIP with explicit 4-byte interval
      put_u16(static_cast<unsigned>((delta >> 16) & 0xFFFF));
      put_u16(static_cast<unsigned>(delta & 0xFFFF));
      delta = 0;
    }
    put_u16((static_cast<unsigned>(a.code) << 10) | static_cast<unsigned>(delta));
    t = a.sample;
  }
  put_u16(0);
  return out;
}

// MIT-BIH study subset: four paced/hardware-unsuitable records plus 114,
// whose chest lead sits on the other channel.
inline bool record_excluded(int id) {
  return id == 102 || id == 104 || id == 107 || id == 217 || id == 114;
}

// Upper-channel selection by lead name.
inline int find_channel(const WfdbHeader& h, const std::string& lead) {
  for (std::size_t i = 0; i < h.signals.size(); ++i)
    if (h.signals[i].description == lead) return static_cast<int>(i);
  return -1;
}

}  // namespace splitnn
