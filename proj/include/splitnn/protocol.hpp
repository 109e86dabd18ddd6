#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <string>
#include <variant>
#include <vector>

#include "splitnn/tensor.hpp"

namespace splitnn {

struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Frame grammar: [length: u32 LE][type: u8][payload]. The length counts the
// type byte plus the payload.
inline constexpr std::uint8_t kMsgHello = 0x01;
inline constexpr std::uint8_t kMsgClientMeta = 0x02;
inline constexpr std::uint8_t kMsgActivation = 0x03;
inline constexpr std::uint8_t kMsgGradient = 0x04;
inline constexpr std::uint8_t kMsgEnd = 0x05;
inline constexpr std::uint8_t kMsgError = 0x7F;

inline constexpr std::uint16_t kErrMalformed = 0x0001;
inline constexpr std::uint16_t kErrProtocolState = 0x0002;

// High bit of batch_index marks evaluation traffic: the server runs the
// forward pass and tallies accuracy but answers with a zero gradient and
// performs no update.
inline constexpr std::uint32_t kEvalFlag = 0x80000000u;
inline constexpr std::uint32_t batch_seq(std::uint32_t batch_index) { return batch_index & ~kEvalFlag; }
inline constexpr bool is_eval_batch(std::uint32_t batch_index) { return (batch_index & kEvalFlag) != 0; }

struct HelloMsg {
  std::uint64_t seed = 0;
  double learning_rate = 0.0;
  std::uint8_t optimizer = 0;  // 0 = Adam
  std::uint32_t batch_size = 0;
  std::uint32_t epochs = 0;
  bool exact = false;  // 64-bit wire floats
  bool operator==(const HelloMsg&) const = default;
};

struct ClientMetaMsg {
  std::uint32_t batches_per_epoch = 0;
  std::uint32_t epochs = 0;
  bool operator==(const ClientMetaMsg&) const = default;
};

struct ActivationMsg {
  std::uint32_t batch_index = 0;
  std::vector<std::uint32_t> dims;  // dims[0] = rows; one label per row
  std::vector<double> values;
  std::vector<std::uint8_t> labels;
  bool operator==(const ActivationMsg&) const = default;
};

struct GradientMsg {
  std::uint32_t batch_index = 0;
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
  bool operator==(const GradientMsg&) const = default;
};

struct EndMsg {
  bool operator==(const EndMsg&) const = default;
};

struct ErrorMsg {
  std::uint16_t code = 0;
  std::string text;
  bool operator==(const ErrorMsg&) const = default;
};

using Message = std::variant<HelloMsg, ClientMetaMsg, ActivationMsg, GradientMsg, EndMsg, ErrorMsg>;

namespace wire {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

struct Reader {
  const std::uint8_t* p;
  std::size_t n;
  std::size_t off = 0;

  void need(std::size_t k, const char* what) const {
    if (off + k > n)
      throw ProtocolError(std::string("frame truncated reading ") + what + " at byte " +
                          std::to_string(off));
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return p[off++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(p[off] | (p[off + 1] << 8));
    off += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[off + i]) << (8 * i);
    off += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[off + i]) << (8 * i);
    off += 8;
    return v;
  }
  double f32(const char* what) {
    std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return static_cast<double>(v);
  }
  double f64(const char* what) {
    std::uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::size_t remaining() const { return n - off; }
};

}  // namespace wire

inline constexpr std::size_t kMaxFrameLen = std::size_t{1} << 28;
inline constexpr std::size_t kMaxDims = 8;
inline constexpr std::uint64_t kMaxValues = std::uint64_t{1} << 26;

namespace detail {

inline std::vector<std::uint8_t> finish_frame(std::uint8_t type, const std::vector<std::uint8_t>& payload) {
  std::vector<std::uint8_t> out;
  out.reserve(5 + payload.size());
  wire::put_u32(out, static_cast<std::uint32_t>(1 + payload.size()));
  out.push_back(type);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

inline void put_tensor_body(std::vector<std::uint8_t>& pl, std::uint32_t batch_index,
                            const std::vector<std::uint32_t>& dims, const std::vector<double>& values,
                            bool exact) {
  wire::put_u32(pl, batch_index);
  wire::put_u32(pl, static_cast<std::uint32_t>(dims.size()));
  std::uint64_t prod = 1;
  for (std::uint32_t d : dims) {
    wire::put_u32(pl, d);
    prod *= d;
  }
  if (prod != values.size())
    throw ProtocolError("dims product " + std::to_string(prod) + " does not match " +
                        std::to_string(values.size()) + " values");
  for (double v : values) {
    if (exact)
      wire::put_f64(pl, v);
    else
      wire::put_f32(pl, static_cast<float>(v));
  }
}

// Shared layout of ACTIVATION and GRADIENT. Value width is not flagged in
// the frame; it is inferred from the byte count, which the dims pin down.
inline void read_tensor_body(wire::Reader& r, std::uint32_t& batch_index,
                             std::vector<std::uint32_t>& dims, std::vector<double>& values,
                             bool with_labels, std::vector<std::uint8_t>* labels) {
  batch_index = r.u32("batch_index");
  const std::uint32_t ndims = r.u32("dims count");
  if (ndims == 0 || ndims > kMaxDims)
    throw ProtocolError("dims count " + std::to_string(ndims) + " out of range");
  dims.resize(ndims);
  std::uint64_t prod = 1;
  for (std::uint32_t i = 0; i < ndims; ++i) {
    dims[i] = r.u32("dim");
    if (dims[i] == 0) throw ProtocolError("zero dimension in frame");
    prod *= dims[i];
    if (prod > kMaxValues) throw ProtocolError("dims product overflows sanity cap");
  }
  const std::size_t nlabels = with_labels ? dims[0] : 0;
  if (r.remaining() < nlabels) throw ProtocolError("frame too short for labels");
  const std::size_t value_bytes = r.remaining() - nlabels;
  bool exact;
  if (value_bytes == prod * 8)
    exact = true;
  else if (value_bytes == prod * 4)
    exact = false;
  else
    throw ProtocolError("payload size " + std::to_string(value_bytes) + " does not fit " +
                        std::to_string(prod) + " values");
  values.resize(prod);
  for (std::uint64_t i = 0; i < prod; ++i) values[i] = exact ? r.f64("value") : r.f32("value");
  if (with_labels) {
    labels->resize(nlabels);
    for (std::size_t i = 0; i < nlabels; ++i) (*labels)[i] = r.u8("label");
  }
}

}  // namespace detail

// exact selects 64-bit wire floats for ACTIVATION/GRADIENT payloads; all
// other message types have a fixed layout.
inline std::vector<std::uint8_t> encode_message(const Message& msg, bool exact = false) {
  std::vector<std::uint8_t> pl;
  std::uint8_t type = 0;
  if (const auto* m = std::get_if<HelloMsg>(&msg)) {
    type = kMsgHello;
    wire::put_u64(pl, m->seed);
    wire::put_f64(pl, m->learning_rate);
    pl.push_back(m->optimizer);
    wire::put_u32(pl, m->batch_size);
    wire::put_u32(pl, m->epochs);
    pl.push_back(m->exact ? 1 : 0);
  } else if (const auto* m = std::get_if<ClientMetaMsg>(&msg)) {
    type = kMsgClientMeta;
    wire::put_u32(pl, m->batches_per_epoch);
    wire::put_u32(pl, m->epochs);
  } else if (const auto* m = std::get_if<ActivationMsg>(&msg)) {
    type = kMsgActivation;
    if (m->dims.empty() || m->labels.size() != m->dims[0])
      throw ProtocolError("activation needs one label per row");
    detail::put_tensor_body(pl, m->batch_index, m->dims, m->values, exact);
    pl.insert(pl.end(), m->labels.begin(), m->labels.end());
  } else if (const auto* m = std::get_if<GradientMsg>(&msg)) {
    type = kMsgGradient;
    detail::put_tensor_body(pl, m->batch_index, m->dims, m->values, exact);
  } else if (std::get_if<EndMsg>(&msg)) {
    type = kMsgEnd;
  } else if (const auto* m = std::get_if<ErrorMsg>(&msg)) {
    type = kMsgError;
    wire::put_u16(pl, m->code);
    pl.insert(pl.end(), m->text.begin(), m->text.end());
  } else {
    throw ProtocolError("unencodable message");
  }
  return detail::finish_frame(type, pl);
}

// Decodes a complete frame, header included. Malformed input of any shape
// raises ProtocolError; nothing here crashes or over-reads.
inline Message decode_message(const std::vector<std::uint8_t>& frame) {
  if (frame.size() < 5) throw ProtocolError("frame shorter than minimal END frame");
  wire::Reader r{frame.data(), frame.size()};
  const std::uint32_t len = r.u32("length");
  if (len == 0) throw ProtocolError("frame length field is zero");
  if (static_cast<std::uint64_t>(len) + 4 != frame.size())
    throw ProtocolError("frame length field " + std::to_string(len) + " does not match " +
                        std::to_string(frame.size() - 4) + " available bytes");
  const std::uint8_t type = r.u8("type");
  switch (type) {
    case kMsgHello: {
      HelloMsg m;
      m.seed = r.u64("seed");
      m.learning_rate = r.f64("learning rate");
      m.optimizer = r.u8("optimizer");
      m.batch_size = r.u32("batch size");
      m.epochs = r.u32("epochs");
      m.exact = r.u8("exact flag") != 0;
      if (r.remaining() != 0) throw ProtocolError("trailing bytes after HELLO");
      if (m.batch_size == 0 || m.epochs == 0 || !(m.learning_rate > 0.0))
        throw ProtocolError("HELLO carries a degenerate configuration");
      return m;
    }
    case kMsgClientMeta: {
      ClientMetaMsg m;
      m.batches_per_epoch = r.u32("batch count");
      m.epochs = r.u32("epochs");
      if (r.remaining() != 0) throw ProtocolError("trailing bytes after CLIENT_META");
      if (m.batches_per_epoch == 0) throw ProtocolError("CLIENT_META with zero batches");
      return m;
    }
    case kMsgActivation: {
      ActivationMsg m;
      detail::read_tensor_body(r, m.batch_index, m.dims, m.values, true, &m.labels);
      if (r.remaining() != 0) throw ProtocolError("trailing bytes after ACTIVATION");
      return m;
    }
    case kMsgGradient: {
      GradientMsg m;
      detail::read_tensor_body(r, m.batch_index, m.dims, m.values, false, nullptr);
      if (r.remaining() != 0) throw ProtocolError("trailing bytes after GRADIENT");
      return m;
    }
    case kMsgEnd: {
      if (r.remaining() != 0) throw ProtocolError("trailing bytes after END");
      return EndMsg{};
    }
    case kMsgError: {
      ErrorMsg m;
      m.code = r.u16("error code");
      m.text.assign(frame.begin() + static_cast<std::ptrdiff_t>(7), frame.end());
      return m;
    }
    default:
      throw ProtocolError("unknown frame type 0x" + std::to_string(type));
  }
}

// ---- tensor batch <-> message helpers ----

inline std::vector<std::uint32_t> batch_dims(const std::vector<Tensor>& batch) {
  if (batch.empty()) throw ProtocolError("empty tensor batch");
  std::vector<std::uint32_t> dims;
  dims.push_back(static_cast<std::uint32_t>(batch.size()));
  for (std::size_t d : batch[0].shape) dims.push_back(static_cast<std::uint32_t>(d));
  return dims;
}

inline std::vector<double> flatten_batch(const std::vector<Tensor>& batch) {
  std::vector<double> values;
  values.reserve(batch.size() * batch[0].size());
  for (const Tensor& t : batch) {
    if (t.shape != batch[0].shape) throw ProtocolError("ragged tensor batch");
    values.insert(values.end(), t.data.begin(), t.data.end());
  }
  return values;
}

inline ActivationMsg make_activation(std::uint32_t batch_index, const std::vector<Tensor>& batch,
                                     const std::vector<std::uint8_t>& labels) {
  ActivationMsg m;
  m.batch_index = batch_index;
  m.dims = batch_dims(batch);
  m.values = flatten_batch(batch);
  m.labels = labels;
  if (m.labels.size() != batch.size()) throw ProtocolError("one label per batch row required");
  return m;
}

inline GradientMsg make_gradient(std::uint32_t batch_index, const std::vector<Tensor>& batch) {
  GradientMsg m;
  m.batch_index = batch_index;
  m.dims = batch_dims(batch);
  m.values = flatten_batch(batch);
  return m;
}

inline std::vector<Tensor> unpack_batch(const std::vector<std::uint32_t>& dims,
                                        const std::vector<double>& values) {
  if (dims.size() < 2) throw ProtocolError("tensor frame needs at least rank 2 dims");
  const std::size_t rows = dims[0];
  std::vector<std::size_t> shape;  // per-sample shape
  std::size_t per = 1;
  for (std::size_t i = 1; i < dims.size(); ++i) {
    shape.push_back(dims[i]);
    per *= dims[i];
  }
  std::vector<Tensor> out;
  out.reserve(rows);
  for (std::size_t s = 0; s < rows; ++s) {
    Tensor t(shape);
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(s * per),
              values.begin() + static_cast<std::ptrdiff_t>((s + 1) * per), t.data.begin());
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace splitnn
