#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <string>
#include <vector>

#include "splitnn/checkpoint.hpp"
#include "splitnn/dataset.hpp"
#include "splitnn/model.hpp"
#include "splitnn/net.hpp"
#include "splitnn/protocol.hpp"
#include "splitnn/rng.hpp"

namespace splitnn {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double lr = 0.001;
  std::uint64_t seed = 1;
  bool exact = false;  // 64-bit wire floats
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
};

// Mutates an activation about to cross the split boundary. eval marks
// test-set traffic. Applied identically by the split client and by the
// in-process reference path, so the two stay comparable.
using NoiseHook = std::function<void(Tensor& activation, bool eval)>;

// Identical batch schedules on both sides of the comparison come from
// deriving the epoch's shuffle from the shared seed alone.
inline std::vector<std::size_t> make_batch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0xBA7C0000ull + epoch));
  rng.shuffle(order);
  return order;
}

inline Tensor beat_tensor(const Beat& b) {
  Tensor t({1, b.samples.size()});
  t.data = b.samples;
  return t;
}

struct BatchView {
  std::vector<Tensor> inputs;
  std::vector<std::uint8_t> labels;
};

inline BatchView take_batch(const std::vector<Beat>& pool, const std::vector<std::size_t>& order,
                            std::size_t start, std::size_t count) {
  BatchView bv;
  bv.inputs.reserve(count);
  bv.labels.reserve(count);
  for (std::size_t i = start; i < start + count; ++i) {
    const Beat& b = pool[order[i]];
    bv.inputs.push_back(beat_tensor(b));
    bv.labels.push_back(b.label);
  }
  return bv;
}

inline std::size_t argmax_class(const Tensor& probs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i)
    if (probs.data[i] > probs.data[best]) best = i;
  return best;
}

class MetricsWriter {
 public:
  MetricsWriter() = default;
  explicit MetricsWriter(const std::string& path) {
    if (path.empty()) return;
    os_.open(path, std::ios::trunc);
    if (!os_) throw std::runtime_error("cannot open metrics file " + path);
    os_ << "epoch,loss,test_accuracy\n";
    os_.flush();
  }
  void row(const EpochMetrics& m) {
    if (!os_.is_open()) return;
    os_ << m.epoch << ',' << std::setprecision(17) << m.train_loss << ',' << m.test_accuracy << '\n';
    os_.flush();  // partial logs must survive an aborted session
  }

 private:
  std::ofstream os_;
};

inline void checkpoint_part(const std::string& dir, const char* part, std::size_t epoch, const Model& m) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  save_checkpoint(dir + "/" + part + "_epoch" + std::to_string(epoch) + ".ckpt", m);
}

// Test accuracy of the composed model, sequential batches, no updates.
inline double evaluate_accuracy(SplitModel& sm, const std::vector<Beat>& test, std::size_t batch_size,
                                const NoiseHook& hook) {
  if (test.empty()) return 0.0;
  std::vector<std::size_t> order(test.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t hits = 0;
  for (std::size_t start = 0; start < test.size(); start += batch_size) {
    const std::size_t rows = std::min(batch_size, test.size() - start);
    BatchView bv = take_batch(test, order, start, rows);
    std::vector<Tensor> acts = sm.client.forward(bv.inputs, false);
    if (hook)
      for (Tensor& a : acts) hook(a, true);
    std::vector<Tensor> outs = sm.server.forward(acts, false);
    for (std::size_t s = 0; s < rows; ++s)
      if (argmax_class(outs[s]) == bv.labels[s]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

// In-process reference: the same two part models, the same batch schedule
// and update order as the wire protocol, with no serialization between the
// parts. The split session in exact mode must reproduce this bitwise.
inline std::vector<EpochMetrics> train_full(SplitModel& sm, const BeatDataset& ds,
                                            const TrainConfig& cfg, NoiseHook hook = {},
                                            const std::string& metrics_csv = {},
                                            const std::string& checkpoint_dir = {}) {
  if (ds.train.empty()) throw DataError("training pool is empty");
  if (cfg.batch_size == 0 || cfg.epochs == 0) throw ConfigError("epochs and batch size must be positive");
  const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
  MetricsWriter writer(metrics_csv);
  std::vector<EpochMetrics> log;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<std::size_t> order = make_batch_order(ds.train.size(), cfg.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < ds.train.size(); start += cfg.batch_size) {
      const std::size_t rows = std::min(cfg.batch_size, ds.train.size() - start);
      BatchView bv = take_batch(ds.train, order, start, rows);
      std::vector<Tensor> acts = sm.client.forward(bv.inputs, true);
      if (hook)
        for (Tensor& a : acts) hook(a, false);
      sm.server.forward(acts, true);
      loss_sum += sm.server.mean_loss(bv.labels) * static_cast<double>(rows);
      std::vector<Tensor> grads = sm.server.backward_from_labels(bv.labels);
      sm.client.backward(grads);
      sm.server.adam_update(adam);
      sm.client.adam_update(adam);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(ds.train.size());
    m.test_accuracy = evaluate_accuracy(sm, ds.test, cfg.batch_size, hook);
    writer.row(m);
    log.push_back(m);
    checkpoint_part(checkpoint_dir, "client", epoch, sm.client);
    checkpoint_part(checkpoint_dir, "server", epoch, sm.server);
  }
  return log;
}

// ---- wire sessions ----

struct TraceEvent {
  bool outbound = false;
  std::uint8_t type = 0;
  std::uint32_t batch_index = 0;
};

// Alternation checker for the batch-frame exchange: every ACTIVATION is
// answered by exactly one GRADIENT echoing its batch_index before the next
// ACTIVATION, train sequence numbers count up from zero per epoch, and so
// do eval sequence numbers per eval phase.
inline void check_lockstep(const std::vector<TraceEvent>& trace) {
  std::optional<std::uint32_t> in_flight;
  std::int64_t prev_train = -1, prev_eval = -1;
  std::size_t activations = 0, gradients = 0;
  for (const TraceEvent& e : trace) {
    if (e.type == kMsgActivation) {
      if (in_flight)
        throw ProtocolError("second ACTIVATION while batch " + std::to_string(*in_flight) + " in flight");
      in_flight = e.batch_index;
      ++activations;
      const std::int64_t seq = batch_seq(e.batch_index);
      if (is_eval_batch(e.batch_index)) {
        if (seq != prev_eval + 1) throw ProtocolError("eval sequence jump to " + std::to_string(seq));
        prev_eval = seq;
        prev_train = -1;
      } else {
        if (seq != prev_train + 1 && seq != 0)
          throw ProtocolError("train sequence jump to " + std::to_string(seq));
        prev_train = seq;
        prev_eval = -1;
      }
    } else if (e.type == kMsgGradient) {
      if (!in_flight) throw ProtocolError("GRADIENT with no ACTIVATION in flight");
      if (*in_flight != e.batch_index)
        throw ProtocolError("GRADIENT echoes batch " + std::to_string(e.batch_index) + ", expected " +
                            std::to_string(*in_flight));
      in_flight.reset();
      ++gradients;
    }
  }
  if (in_flight) throw ProtocolError("session ended with a batch in flight");
  if (activations != gradients) throw ProtocolError("unmatched activation/gradient counts");
}

namespace detail {

inline void try_send(TcpStream& s, const Message& m) {
  try {
    s.write_frame(encode_message(m));
  } catch (...) {
    // the peer may already be gone; the original error wins
  }
}

struct Endpoint {
  TcpStream& stream;
  std::vector<TraceEvent>* trace = nullptr;
  bool exact = false;

  void send(const Message& m) {
    s_trace(m, true);
    stream.write_frame(encode_message(m, exact));
  }

  // Reads one message; malformed bytes raise after an ERROR frame goes back,
  // and a peer ERROR surfaces as ProtocolError.
  Message recv(const char* ctx) {
    std::optional<std::vector<std::uint8_t>> frame;
    try {
      frame = stream.read_frame();
    } catch (const ProtocolError& e) {
      try_send(stream, ErrorMsg{kErrMalformed, e.what()});
      throw;
    }
    if (!frame) throw ProtocolError(std::string("connection closed awaiting ") + ctx);
    Message m;
    try {
      m = decode_message(*frame);
    } catch (const ProtocolError& e) {
      try_send(stream, ErrorMsg{kErrMalformed, e.what()});
      throw;
    }
    if (const auto* err = std::get_if<ErrorMsg>(&m))
      throw ProtocolError("peer error 0x" + std::to_string(err->code) + ": " + err->text);
    s_trace(m, false);
    return m;
  }

  template <typename T>
  T expect(const char* ctx) {
    Message m = recv(ctx);
    if (auto* v = std::get_if<T>(&m)) return std::move(*v);
    try_send(stream, ErrorMsg{kErrProtocolState, std::string("expected ") + ctx});
    throw ProtocolError(std::string("expected ") + ctx + ", got frame type " +
                        std::to_string(m.index()));
  }

 private:
  void s_trace(const Message& m, bool outbound) {
    if (!trace) return;
    TraceEvent e;
    e.outbound = outbound;
    if (const auto* a = std::get_if<ActivationMsg>(&m)) {
      e.type = kMsgActivation;
      e.batch_index = a->batch_index;
    } else if (const auto* g = std::get_if<GradientMsg>(&m)) {
      e.type = kMsgGradient;
      e.batch_index = g->batch_index;
    } else if (std::get_if<HelloMsg>(&m)) {
      e.type = kMsgHello;
    } else if (std::get_if<ClientMetaMsg>(&m)) {
      e.type = kMsgClientMeta;
    } else if (std::get_if<EndMsg>(&m)) {
      e.type = kMsgEnd;
    } else {
      e.type = kMsgError;
    }
    trace->push_back(e);
  }
};

}  // namespace detail

struct ServerResult {
  Model model;  // trained upper part
  std::vector<EpochMetrics> metrics;
  std::size_t train_batches = 0;
  std::size_t eval_batches = 0;
};

struct ClientResult {
  Model model;  // trained lower part
  HelloMsg config;
  std::size_t train_batches = 0;
  std::size_t eval_batches = 0;
};

// Upper-part session: offer the configuration, then answer every ACTIVATION
// with the matching GRADIENT in lockstep. Never sees raw beats; logs loss
// over received labels and accuracy over eval traffic.
inline ServerResult run_server(TcpStream& stream, const ModelConfig& arch, const TrainConfig& cfg,
                               const std::string& metrics_csv = {},
                               const std::string& checkpoint_dir = {},
                               std::vector<TraceEvent>* trace = nullptr) {
  detail::Endpoint ep{stream, trace, cfg.exact};
  ep.send(HelloMsg{cfg.seed, cfg.lr, 0, static_cast<std::uint32_t>(cfg.batch_size),
                   static_cast<std::uint32_t>(cfg.epochs), cfg.exact});
  const ClientMetaMsg meta = ep.expect<ClientMetaMsg>("CLIENT_META");
  if (meta.epochs != cfg.epochs) {
    detail::try_send(stream, ErrorMsg{kErrProtocolState, "epoch count mismatch"});
    throw ProtocolError("client confirmed " + std::to_string(meta.epochs) + " epochs, offered " +
                        std::to_string(cfg.epochs));
  }
  SplitModel sm = split_model(arch, cfg.seed);
  Model& server = sm.server;
  const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
  MetricsWriter writer(metrics_csv);

  ServerResult res;
  std::optional<Message> pending;
  auto next = [&](const char* ctx) -> Message {
    if (pending) {
      Message m = std::move(*pending);
      pending.reset();
      return m;
    }
    return ep.recv(ctx);
  };
  auto fail_state = [&](const std::string& why) -> ProtocolError {
    detail::try_send(stream, ErrorMsg{kErrProtocolState, why});
    return ProtocolError(why);
  };

  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t samples = 0;
    for (std::uint32_t b = 0; b < meta.batches_per_epoch; ++b) {
      Message m = next("ACTIVATION");
      auto* act = std::get_if<ActivationMsg>(&m);
      if (!act) throw fail_state("expected train ACTIVATION");
      if (is_eval_batch(act->batch_index) || act->batch_index != b)
        throw fail_state("out-of-order batch_index " + std::to_string(act->batch_index) +
                         ", expected " + std::to_string(b));
      std::vector<Tensor> acts = unpack_batch(act->dims, act->values);
      server.forward(acts, true);
      loss_sum += server.mean_loss(act->labels) * static_cast<double>(acts.size());
      samples += acts.size();
      std::vector<Tensor> grads = server.backward_from_labels(act->labels);
      ep.send(make_gradient(act->batch_index, grads));
      server.adam_update(adam);
      ++res.train_batches;
    }
    // eval phase: zero or more flagged frames, answered with zero gradients
    std::size_t hits = 0, eval_samples = 0;
    std::uint32_t eval_seq = 0;
    while (true) {
      Message m = next("ACTIVATION or END");
      auto* act = std::get_if<ActivationMsg>(&m);
      if (!act || !is_eval_batch(act->batch_index)) {
        pending = std::move(m);
        break;
      }
      if (batch_seq(act->batch_index) != eval_seq)
        throw fail_state("out-of-order eval batch " + std::to_string(batch_seq(act->batch_index)));
      ++eval_seq;
      std::vector<Tensor> acts = unpack_batch(act->dims, act->values);
      std::vector<Tensor> outs = server.forward(acts, false);
      for (std::size_t s = 0; s < outs.size(); ++s)
        if (argmax_class(outs[s]) == act->labels[s]) ++hits;
      eval_samples += outs.size();
      std::vector<Tensor> zeros(acts.size());
      for (std::size_t s = 0; s < zeros.size(); ++s) zeros[s] = Tensor(acts[s].shape);
      ep.send(make_gradient(act->batch_index, zeros));
      ++res.eval_batches;
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = samples ? loss_sum / static_cast<double>(samples) : 0.0;
    em.test_accuracy = eval_samples ? static_cast<double>(hits) / static_cast<double>(eval_samples) : 0.0;
    writer.row(em);
    res.metrics.push_back(em);
    checkpoint_part(checkpoint_dir, "server", epoch, server);
  }
  Message m = next("END");
  if (!std::get_if<EndMsg>(&m)) throw fail_state("expected END after final epoch");
  ep.send(EndMsg{});
  res.model = std::move(server);
  return res;
}

// Lower-part session: adopt the offered configuration, stream activations
// and labels up, apply returned gradients. Raw beats never reach the wire;
// the only outbound tensors are split-layer activations.
inline ClientResult run_client(TcpStream& stream, const ModelConfig& arch, const BeatDataset& ds,
                               NoiseHook hook = {}, const std::string& checkpoint_dir = {},
                               std::vector<TraceEvent>* trace = nullptr) {
  if (ds.train.empty()) throw DataError("training pool is empty");
  detail::Endpoint ep{stream, trace, false};
  const HelloMsg hello = ep.expect<HelloMsg>("HELLO");
  if (hello.optimizer != 0) throw ProtocolError("unknown optimizer code " + std::to_string(hello.optimizer));
  ep.exact = hello.exact;
  const std::size_t batch_size = hello.batch_size;
  const std::uint32_t batches =
      static_cast<std::uint32_t>((ds.train.size() + batch_size - 1) / batch_size);
  ep.send(ClientMetaMsg{batches, hello.epochs});

  SplitModel sm = split_model(arch, hello.seed);
  Model& client = sm.client;
  const AdamConfig adam{hello.learning_rate, 0.9, 0.999, 1e-8};
  ClientResult res;
  res.config = hello;

  auto exchange = [&](std::uint32_t batch_index, const BatchView& bv, bool eval) -> GradientMsg {
    std::vector<Tensor> acts = client.forward(bv.inputs, !eval);
    if (hook)
      for (Tensor& a : acts) hook(a, eval);
    ActivationMsg up = make_activation(batch_index, acts, bv.labels);
    ep.send(up);
    GradientMsg down = ep.expect<GradientMsg>("GRADIENT");
    if (down.batch_index != batch_index || down.dims != up.dims)
      throw ProtocolError("gradient frame does not match activation " + std::to_string(batch_index));
    return down;
  };

  for (std::uint32_t epoch = 0; epoch < hello.epochs; ++epoch) {
    const std::vector<std::size_t> order = make_batch_order(ds.train.size(), hello.seed, epoch);
    for (std::uint32_t b = 0; b < batches; ++b) {
      const std::size_t start = static_cast<std::size_t>(b) * batch_size;
      const std::size_t rows = std::min(batch_size, ds.train.size() - start);
      BatchView bv = take_batch(ds.train, order, start, rows);
      GradientMsg down = exchange(b, bv, false);
      client.backward(unpack_batch(down.dims, down.values));
      client.adam_update(adam);
      ++res.train_batches;
    }
    std::vector<std::size_t> test_order(ds.test.size());
    for (std::size_t i = 0; i < test_order.size(); ++i) test_order[i] = i;
    std::uint32_t eval_seq = 0;
    for (std::size_t start = 0; start < ds.test.size(); start += batch_size) {
      const std::size_t rows = std::min(batch_size, ds.test.size() - start);
      BatchView bv = take_batch(ds.test, test_order, start, rows);
      exchange(kEvalFlag | eval_seq, bv, true);  // gradient is zeros; nothing to apply
      ++eval_seq;
      ++res.eval_batches;
    }
    checkpoint_part(checkpoint_dir, "client", epoch, client);
  }
  ep.send(EndMsg{});
  ep.expect<EndMsg>("END acknowledgement");
  res.model = std::move(client);
  return res;
}

}  // namespace splitnn
