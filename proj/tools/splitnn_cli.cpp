// Operator surface: preprocess a WFDB directory into a beat cache, train
// split or non-split models, assess split-layer leakage, run mitigation
// sweeps. Exit codes: 0 success, 1 internal error, 2 usage/input error.
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "splitnn/checkpoint.hpp"
#include "splitnn/dataset.hpp"
#include "splitnn/leakage.hpp"
#include "splitnn/mitigation.hpp"
#include "splitnn/model.hpp"
#include "splitnn/net.hpp"
#include "splitnn/training.hpp"

namespace sn = splitnn;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSyntheticSeed = 9001;  // fixed corpus; preprocess real data for others
constexpr double kInf = std::numeric_limits<double>::infinity();

struct DataOpts {
  std::string data;
  std::size_t synthetic = 0;
};

void add_data_opts(CLI::App* cmd, DataOpts& d) {
  auto* data = cmd->add_option("--data", d.data, "beat cache file (default: $SPLITNN_DATA)");
  cmd->add_option("--synthetic", d.synthetic,
                  "use a generated corpus with this many beats per class per pool")
      ->excludes(data);
}

std::string data_or_env(const std::string& data) {
  if (!data.empty()) return data;
  const char* env = std::getenv("SPLITNN_DATA");
  return env ? env : "";
}

sn::BeatDataset load_beats(const DataOpts& d) {
  if (d.synthetic > 0) return sn::generate_synthetic(d.synthetic, kSyntheticSeed);
  const std::string path = data_or_env(d.data);
  if (path.empty())
    throw sn::DataError("no dataset: pass --data or --synthetic, or set SPLITNN_DATA");
  return sn::load_beat_cache(path);
}

sn::ModelConfig pick_model(const std::string& model, std::size_t depth) {
  if (model == "two-layer") return sn::build_two_layer();
  if (model == "three-layer") return sn::build_three_layer();
  if (model == "depth-k") return sn::build_depth_k(depth);
  if (fs::exists(model)) {
    std::ifstream is(model);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return sn::parse_model_config(text);
  }
  throw sn::ConfigError("unknown model '" + model +
                        "' (two-layer, three-layer, depth-k, or a config file path)");
}

sn::SensitivityPolicy pick_policy(const std::string& name) {
  if (name == "fixed") return sn::SensitivityPolicy::FixedUnit;
  if (name == "range") return sn::SensitivityPolicy::PerChannelRange;
  throw sn::ConfigError("unknown sensitivity policy '" + name + "' (fixed or range)");
}

std::pair<std::string, std::uint16_t> parse_addr(const std::string& addr) {
  const auto pos = addr.rfind(':');
  if (pos == std::string::npos || pos + 1 >= addr.size())
    throw sn::ConfigError("--addr must be host:port, got '" + addr + "'");
  std::string host = addr.substr(0, pos);
  if (host.empty()) host = "127.0.0.1";
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(addr.substr(pos + 1), &used);
    if (used != addr.size() - pos - 1) throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw sn::ConfigError("bad port in --addr '" + addr + "'");
  }
  if (port < 0 || port > 65535) throw sn::ConfigError("port out of range in --addr");
  return {host, static_cast<std::uint16_t>(port)};
}

// ---- preprocess ----

int cmd_preprocess(const std::string& data, const std::string& out, std::uint64_t seed) {
  const std::string dir = data_or_env(data);
  if (dir.empty())
    throw sn::DataError("no input: pass --data <wfdb-dir> or set SPLITNN_DATA");
  if (!fs::is_directory(dir)) throw sn::DataError("not a directory: " + dir);

  const std::vector<int> present = sn::list_usable_records(dir);
  std::vector<int> missing;
  for (int id : sn::kAllRecordIds)
    if (!sn::record_excluded(id) &&
        std::find(present.begin(), present.end(), id) == present.end())
      missing.push_back(id);
  if (!missing.empty()) {
    std::fprintf(stderr, "warning: missing records:");
    for (int id : missing) std::fprintf(stderr, " %d", id);
    std::fprintf(stderr, "\n");
  }

  std::vector<sn::Beat> all;
  std::size_t skipped_segments = 0, flat = 0;
  for (int id : present) {
    try {
      sn::RecordBeats rb = sn::load_record_beats(dir, id);
      all.insert(all.end(), rb.beats.begin(), rb.beats.end());
      skipped_segments +=
          rb.stats.out_of_bounds + rb.stats.overlapping + rb.stats.other_class;
      flat += rb.flat_discarded;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "warning: record %d: %s\n", id, e.what());
    }
  }
  if (all.empty()) throw sn::DataError("no beats found under " + dir);
  std::printf("segmented %zu beats (%zu segments skipped, %zu flat)\n", all.size(),
              skipped_segments, flat);

  std::array<std::size_t, sn::kNumClasses> avail{};
  for (const sn::Beat& b : all) ++avail[b.label];
  std::array<std::size_t, sn::kNumClasses> targets = sn::kTrainTargets;
  bool partial = false;
  for (std::size_t c = 0; c < sn::kNumClasses; ++c)
    if (avail[c] < 2 * targets[c]) {
      partial = true;
      targets[c] = avail[c] / 2;
    }
  if (partial)
    std::fprintf(stderr,
                 "warning: partial dataset, falling back to available per-class counts\n");

  sn::BeatDataset ds = sn::build_dataset(all, seed, targets);
  std::size_t total = 0;
  for (std::size_t c = 0; c < sn::kNumClasses; ++c) {
    std::size_t tr = 0, te = 0;
    for (const sn::Beat& b : ds.train) tr += b.label == c;
    for (const sn::Beat& b : ds.test) te += b.label == c;
    std::printf("class %c: train %zu, test %zu\n", sn::kClassNames[c], tr, te);
    total += tr + te;
  }
  std::printf("total %zu\n", total);

  sn::save_beat_cache(out, ds);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

// ---- train ----

struct TrainOpts {
  std::string role, addr, model = "two-layer", out = "run";
  std::size_t depth = 2;
  double epsilon = kInf, lr = 0.001;
  std::string policy = "range";
  std::uint64_t seed = 1;
  std::size_t epochs = 400, batch = 32;
  bool exact = false;
  DataOpts data;
};

int cmd_train(const TrainOpts& o) {
  if (o.role.empty() && !o.addr.empty())
    throw sn::ConfigError("--addr given without --role (non-split runs are local)");
  if (!o.role.empty() && o.addr.empty())
    throw sn::ConfigError("--role " + o.role + " requires --addr host:port");
  if (!o.role.empty() && o.role != "client" && o.role != "server")
    throw sn::ConfigError("--role must be client or server");

  std::pair<std::string, std::uint16_t> addr;
  if (!o.role.empty()) addr = parse_addr(o.addr);

  const sn::ModelConfig arch = pick_model(o.model, o.depth);
  sn::TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.lr = o.lr;
  tc.seed = o.seed;
  tc.exact = o.exact;

  sn::NoiseHook hook;
  if (std::isfinite(o.epsilon))
    hook = sn::make_dp_hook({o.epsilon, pick_policy(o.policy), o.seed});

  // the server owns no beats; every other role validates its data before
  // anything is written to disk
  sn::BeatDataset ds;
  if (o.role != "server") ds = load_beats(o.data);

  fs::create_directories(o.out);
  std::ofstream(o.out + "/model.cfg") << sn::serialize_model_config(arch);

  if (o.role.empty()) {
    sn::SplitModel sm = sn::split_model(arch, tc.seed);
    auto hist = sn::train_full(sm, ds, tc, hook, o.out + "/metrics.csv", o.out);
    std::printf("final test accuracy %.4f over %zu epochs; metrics in %s/metrics.csv\n",
                hist.back().test_accuracy, hist.size(), o.out.c_str());
    return 0;
  }

  const auto& [host, port] = addr;
  if (o.role == "server") {
    sn::TcpListener listener(host, port);
    std::printf("listening on %s:%u\n", host.c_str(), listener.port());
    std::fflush(stdout);
    sn::TcpStream peer = listener.accept();
    sn::ServerResult r = sn::run_server(peer, arch, tc, o.out + "/metrics.csv", o.out);
    std::printf("final test accuracy %.4f; %zu train / %zu eval batches; metrics in %s/metrics.csv\n",
                r.metrics.back().test_accuracy, r.train_batches, r.eval_batches, o.out.c_str());
    return 0;
  }

  sn::TcpStream peer = sn::TcpStream::connect_retry(host, port);
  sn::ClientResult r = sn::run_client(peer, arch, ds, hook, o.out);
  std::printf("client done: %zu train / %zu eval batches; checkpoints in %s\n", r.train_batches,
              r.eval_batches, o.out.c_str());
  return 0;
}

// ---- assess ----

struct AssessOpts {
  std::string checkpoint, model = "two-layer", tap = "wire", out = "assess";
  std::size_t depth = 2, samples = 100;
  double epsilon = kInf;
  std::string policy = "range";
  std::uint64_t seed = 1;
  DataOpts data;
};

int cmd_assess(const AssessOpts& o) {
  const sn::ModelConfig arch = pick_model(o.model, o.depth);
  sn::SplitModel sm = sn::split_model(arch, o.seed);
  sn::load_checkpoint_into(o.checkpoint, sm.client, true);

  sn::BeatDataset ds = load_beats(o.data);
  const std::vector<sn::Beat> sample = sn::pick_assessment_beats(ds.test, o.samples);

  std::size_t tap = sm.client.layers.size();
  if (o.tap == "pre-pool") {
    while (tap > 1 && sm.client.layers[tap - 1].kind == sn::LayerKind::maxpool2) --tap;
  } else if (o.tap != "wire") {
    throw sn::ConfigError("--tap must be wire or pre-pool");
  }

  sn::LeakageHook hook;
  if (std::isfinite(o.epsilon))
    hook = sn::make_dp_hook(
        {o.epsilon, pick_policy(o.policy), sn::mix_seed(o.seed, sn::kAssessStreamTag)});

  sn::LeakageReport rep = sn::channel_leakage(sm.client, sample, tap, hook);
  fs::create_directories(o.out);
  sn::write_leakage_csv(o.out + "/leakage.csv", rep);
  const auto files = sn::export_visual(sm.client, sample, o.out, tap, hook);

  const auto order = rep.by_dcor_desc();
  std::printf("assessed %zu beats at tap depth %zu (%zu channels)\n", sample.size(), tap,
              rep.channels.size());
  std::printf("most correlated channel %zu: dcor %.4f, dtw %.2f\n", order.front(),
              rep.channels[order.front()].dcor_mean, rep.channels[order.front()].dtw_mean);
  std::printf("least correlated channel %zu: dcor %.4f\n", order.back(),
              rep.channels[order.back()].dcor_mean);
  std::printf("wrote %s/leakage.csv and %zu visual dumps\n", o.out.c_str(), files.size());
  return 0;
}

// ---- sweep ----

struct SweepOpts {
  std::string kind, out = "sweep";
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::size_t epochs = 50, batch = 32, samples = 100;
  double lr = 0.001;
  std::string policy = "range";
  DataOpts data;
};

int cmd_sweep(const SweepOpts& o) {
  if (o.kind != "depth" && o.kind != "dp")
    throw sn::ConfigError("--kind must be depth or dp");
  if (o.seeds.size() < 3)
    std::fprintf(stderr, "warning: figure-grade sweeps average at least 3 seeds, got %zu\n",
                 o.seeds.size());

  sn::SweepConfig cfg;
  cfg.seeds = o.seeds;
  cfg.train.epochs = o.epochs;
  cfg.train.batch_size = o.batch;
  cfg.train.lr = o.lr;
  cfg.leakage_samples = o.samples;
  cfg.policy = pick_policy(o.policy);
  cfg.on_point = [&](const sn::SweepPointResult& p) {
    if (p.failed)
      std::printf("%s=%s seed=%llu FAILED: %s\n", o.kind.c_str(), sn::format_axis(p.axis).c_str(),
                  static_cast<unsigned long long>(p.seed), p.error.c_str());
    else
      std::printf("%s=%s seed=%llu accuracy=%.4f max_dcor=%.4f\n", o.kind.c_str(),
                  sn::format_axis(p.axis).c_str(), static_cast<unsigned long long>(p.seed),
                  p.accuracy, p.leakage.max_dcor());
    std::fflush(stdout);
  };

  sn::BeatDataset ds = load_beats(o.data);
  sn::SweepResult res;
  double base = 0.0;
  if (o.kind == "depth") {
    res = sn::depth_sweep({2, 3, 4, 5, 6, 7, 8}, ds, cfg);
    base = 2.0;
  } else {
    res = sn::dp_sweep({kInf, 10.0, 7.0, 5.0, 3.0, 1.0}, ds, cfg);
    base = kInf;
  }

  sn::write_sweep_outputs(o.out, res, base);
  for (const sn::AxisAccuracy& a : sn::accuracy_summary(res))
    std::printf("%s=%s: accuracy %.4f +/- %.4f (n=%zu)\n", o.kind.c_str(),
                sn::format_axis(a.axis).c_str(), a.mean, a.stddev, a.n);
  std::printf(
      "wrote sweep_accuracy.csv, sweep_accuracy_summary.csv, sweep_leakage.csv, "
      "distributions.csv to %s\n",
      o.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"split-learning workbench for ECG beat classification"};
  app.require_subcommand(1);

  std::string pre_data, pre_out = "beats.cache";
  std::uint64_t pre_seed = 1;
  auto* pre = app.add_subcommand("preprocess", "segment a WFDB directory into a beat cache");
  pre->add_option("--data", pre_data, "WFDB directory (default: $SPLITNN_DATA)");
  pre->add_option("--out", pre_out, "cache file to write");
  pre->add_option("--seed", pre_seed, "shuffle seed for the train/test split");

  TrainOpts tr;
  auto* train = app.add_subcommand("train", "train non-split, or one side of a split session");
  train->add_option("--role", tr.role, "client or server (omit for non-split)");
  train->add_option("--addr", tr.addr, "host:port to listen on (server) or connect to (client)");
  train->add_option("--model", tr.model, "two-layer | three-layer | depth-k | config file");
  train->add_option("--depth", tr.depth, "client conv layers for --model depth-k");
  train->add_option("--epsilon", tr.epsilon, "Laplace DP budget on split activations (default off)");
  train->add_option("--policy", tr.policy, "DP sensitivity: fixed (unit) or range (per channel)");
  train->add_option("--seed", tr.seed, "master seed (server-authoritative in split mode)");
  train->add_option("--epochs", tr.epochs, "training epochs");
  train->add_option("--batch", tr.batch, "batch size");
  train->add_option("--lr", tr.lr, "Adam learning rate");
  train->add_flag("--exact", tr.exact, "f64 wire tensors for bitwise split/non-split equality");
  train->add_option("--out", tr.out, "output directory (metrics.csv, checkpoints, model.cfg)");
  add_data_opts(train, tr.data);

  AssessOpts as;
  auto* assess = app.add_subcommand("assess", "measure split-layer leakage of a client checkpoint");
  assess->add_option("checkpoint", as.checkpoint, "client checkpoint file")->required();
  assess->add_option("--model", as.model, "two-layer | three-layer | depth-k | config file");
  assess->add_option("--depth", as.depth, "client conv layers for --model depth-k");
  assess->add_option("--samples", as.samples, "test beats to assess");
  assess->add_option("--tap", as.tap, "wire (post-pool) or pre-pool activation tap");
  assess->add_option("--epsilon", as.epsilon, "apply DP noise at assessment time");
  assess->add_option("--policy", as.policy, "DP sensitivity: fixed or range");
  assess->add_option("--seed", as.seed, "init seed for layers the checkpoint does not cover");
  assess->add_option("--out", as.out, "output directory (leakage.csv, visual_*.csv)");
  add_data_opts(assess, as.data);

  SweepOpts sw;
  auto* sweep = app.add_subcommand("sweep", "retrain across a mitigation axis and emit CSVs");
  sweep->add_option("--kind", sw.kind, "depth (k=2..8) or dp (epsilon inf,10,7,5,3,1)")->required();
  sweep->add_option("--seeds", sw.seeds, "comma-separated training seeds")->delimiter(',');
  sweep->add_option("--epochs", sw.epochs, "epochs per point");
  sweep->add_option("--batch", sw.batch, "batch size");
  sweep->add_option("--lr", sw.lr, "Adam learning rate");
  sweep->add_option("--samples", sw.samples, "test beats per leakage assessment");
  sweep->add_option("--policy", sw.policy, "DP sensitivity: fixed or range");
  sweep->add_option("--out", sw.out, "output directory for the four CSVs");
  add_data_opts(sweep, sw.data);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (pre->parsed()) return cmd_preprocess(pre_data, pre_out, pre_seed);
    if (train->parsed()) return cmd_train(tr);
    if (assess->parsed()) return cmd_assess(as);
    return cmd_sweep(sw);
  } catch (const sn::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const sn::DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const sn::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const sn::CheckpointError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
}
