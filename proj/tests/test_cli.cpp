// Drives the installed binary as a user would: real processes, real files,
// exit codes checked against the documented contract (0 ok, 1 internal, 2 usage).
#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

#include "splitnn/model.hpp"
#include "splitnn/wfdb.hpp"

using namespace splitnn;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path work_dir() {
  static fs::path p = [] {
    auto d = fs::temp_directory_path() / ("splitnn_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return p;
}

RunResult run(const std::string& args) {
  static int seq = 0;
  const fs::path out = work_dir() / ("out" + std::to_string(seq));
  const fs::path err = work_dir() / ("err" + std::to_string(seq));
  ++seq;
  const std::string cmd = std::string(SPLITNN_CLI_PATH) + " " + args + " > " + out.string() +
                          " 2> " + err.string();
  const int rc = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::size_t line_count(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

// Minimal two-signal 212 record with one gaussian QRS per desired beat.
void write_record(const fs::path& dir, int id, const std::vector<std::size_t>& r_positions,
                  const std::vector<std::uint8_t>& codes) {
  const std::size_t nsamples = r_positions.back() + 500;
  std::vector<int> ch0(nsamples, 0), ch1(nsamples, 50);
  for (std::size_t b = 0; b < r_positions.size(); ++b)
    for (long long t = -60; t <= 60; ++t) {
      const auto at = static_cast<std::size_t>(static_cast<long long>(r_positions[b]) + t);
      ch0[at] += static_cast<int>(900.0 * std::exp(-0.5 * std::pow(double(t) / 6.0, 2.0)));
    }
  const std::string name = std::to_string(id);
  std::ofstream(dir / (name + ".hea")) << name << " 2 360 " << nsamples << "\n"
                                       << name << ".dat 212 200 11 1024 0 0 0 MLII\n"
                                       << name << ".dat 212 200 11 1024 0 0 0 V5\n";
  auto dat = pack_212(ch0, ch1);
  std::ofstream(dir / (name + ".dat"), std::ios::binary)
      .write(reinterpret_cast<const char*>(dat.data()), static_cast<std::streamsize>(dat.size()));
  std::vector<Annotation> anns;
  for (std::size_t b = 0; b < r_positions.size(); ++b) anns.push_back({r_positions[b], codes[b]});
  auto atr = encode_annotations(anns);
  std::ofstream(dir / (name + ".atr"), std::ios::binary)
      .write(reinterpret_cast<const char*>(atr.data()), static_cast<std::streamsize>(atr.size()));
}

bool wait_for(const fs::path& file, const std::string& needle, int timeout_ms) {
  for (int waited = 0; waited < timeout_ms; waited += 50) {
    if (fs::exists(file) && slurp(file).find(needle) != std::string::npos) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  return false;
}

}  // namespace

TEST_CASE("usage errors exit 2", "[cli]") {
  ::unsetenv("SPLITNN_DATA");
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("--help").code == 0);
  CHECK(run("train --help").code == 0);

  auto r = run("train --role client --synthetic 4");
  CHECK(r.code == 2);
  CHECK(r.err.find("--addr") != std::string::npos);
  r = run("train --addr 127.0.0.1:9 --synthetic 4");
  CHECK(r.code == 2);
  CHECK(r.err.find("--role") != std::string::npos);
  CHECK(run("train --role referee --addr 127.0.0.1:9 --synthetic 4").code == 2);
  CHECK(run("train --synthetic 4 --data x.cache").code == 2);

  r = run("train --epochs 1");
  CHECK(r.code == 2);  // no dataset source at all
  CHECK(r.err.find("SPLITNN_DATA") != std::string::npos);

  CHECK(run("train --synthetic 4 --model nonesuch --epochs 1").code == 2);
  CHECK(run("train --synthetic 4 --epsilon 1 --policy diagonal --epochs 1").code == 2);
  CHECK(run("assess").code == 2);  // checkpoint is required
  CHECK(run("sweep --kind sideways --synthetic 4").code == 2);
  CHECK(run("train --role server --addr nocolon --synthetic 4").code == 2);
  CHECK(run("train --role server --addr 127.0.0.1:99999 --synthetic 4").code == 2);
}

TEST_CASE("preprocess builds a reproducible cache", "[cli]") {
  const fs::path dir = work_dir() / "records";
  fs::create_directories(dir);
  // one record per class, four beats each, spaced well apart
  const std::uint8_t codes[5] = {1, 2, 3, 8, 5};
  const int ids[5] = {100, 101, 103, 105, 106};
  for (int k = 0; k < 5; ++k)
    write_record(dir, ids[k], {300, 700, 1100, 1500}, std::vector<std::uint8_t>(4, codes[k]));

  const fs::path c1 = work_dir() / "c1.cache";
  auto r = run("preprocess --data " + dir.string() + " --out " + c1.string());
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("segmented 20 beats") != std::string::npos);
  for (char cls : std::string("NLRAV"))
    CHECK(r.out.find(std::string("class ") + cls + ": train 2, test 2") != std::string::npos);
  CHECK(r.out.find("total 20") != std::string::npos);
  // 43 of the 48 canonical records absent, named on stderr
  CHECK(r.err.find("missing records") != std::string::npos);
  CHECK(r.err.find("234") != std::string::npos);
  CHECK(r.err.find("partial dataset") != std::string::npos);

  const fs::path c2 = work_dir() / "c2.cache";
  auto r2 = run("preprocess --data " + dir.string() + " --out " + c2.string());
  REQUIRE(r2.code == 0);
  CHECK(slurp(c1) == slurp(c2));

  SECTION("a broken record warns but does not abort") {
    std::ofstream(dir / "109.hea") << "garbage";
    auto r3 = run("preprocess --data " + dir.string() + " --out " + (work_dir() / "c3.cache").string());
    CHECK(r3.code == 0);
    CHECK(r3.err.find("record 109") != std::string::npos);
  }

  SECTION("the cache feeds training through the environment") {
    ::setenv("SPLITNN_DATA", c1.string().c_str(), 1);
    auto rt = run("train --epochs 1 --batch 8 --out " + (work_dir() / "envrun").string());
    ::unsetenv("SPLITNN_DATA");
    CHECK(rt.code == 0);
    CHECK(rt.out.find("final test accuracy") != std::string::npos);
  }
}

TEST_CASE("preprocess rejects unusable input", "[cli]") {
  const fs::path empty = work_dir() / "empty";
  fs::create_directories(empty);
  auto r = run("preprocess --data " + empty.string() + " --out x.cache");
  CHECK(r.code == 2);
  CHECK(run("preprocess --data /nonexistent-path --out x.cache").code == 2);
  CHECK(run("preprocess --out x.cache").code == 2);  // no --data, no env
}

TEST_CASE("non-split training writes metrics, config, and checkpoints", "[cli]") {
  const fs::path o1 = work_dir() / "t1";
  auto r = run("train --synthetic 6 --epochs 2 --batch 16 --out " + o1.string());
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("final test accuracy") != std::string::npos);

  const std::string metrics = slurp(o1 / "metrics.csv");
  CHECK(metrics.rfind("epoch,loss,test_accuracy\n", 0) == 0);
  CHECK(line_count(metrics) == 3);
  CHECK(fs::exists(o1 / "client_epoch1.ckpt"));
  CHECK(fs::exists(o1 / "server_epoch1.ckpt"));

  const ModelConfig cfg = parse_model_config(slurp(o1 / "model.cfg"));
  CHECK(cfg.split_index == 6);
  CHECK(cfg.layers.size() == 11);

  const fs::path o2 = work_dir() / "t2";
  REQUIRE(run("train --synthetic 6 --epochs 2 --batch 16 --out " + o2.string()).code == 0);
  CHECK(slurp(o1 / "metrics.csv") == slurp(o2 / "metrics.csv"));
  CHECK(slurp(o1 / "client_epoch1.ckpt") == slurp(o2 / "client_epoch1.ckpt"));
}

TEST_CASE("split loopback run matches the non-split run", "[cli]") {
  const fs::path srv = work_dir() / "srv";
  const fs::path cli = work_dir() / "cli";
  const fs::path slog = work_dir() / "server.log";
  // port 0: the server binds an ephemeral port and prints the real one
  const std::string scmd = std::string(SPLITNN_CLI_PATH) +
                           " train --role server --addr 127.0.0.1:0 --synthetic 6 --epochs 2"
                           " --batch 16 --exact --out " +
                           srv.string() + " > " + slog.string() + " 2>&1 &";
  REQUIRE(std::system(scmd.c_str()) == 0);
  REQUIRE(wait_for(slog, "listening on 127.0.0.1:", 10000));
  const std::string text = slurp(slog);
  const auto colon = text.rfind(':');
  const int port = std::stoi(text.substr(colon + 1));
  REQUIRE(port > 0);

  auto rc = run("train --role client --addr 127.0.0.1:" + std::to_string(port) +
                " --synthetic 6 --out " + cli.string());
  CAPTURE(rc.err);
  REQUIRE(rc.code == 0);
  REQUIRE(wait_for(slog, "final test accuracy", 10000));

  // same seed, same data, exact wire: byte-identical history and parameters
  const fs::path ref = work_dir() / "t1";  // written by the non-split test case
  if (fs::exists(ref / "metrics.csv")) {
    CHECK(slurp(srv / "metrics.csv") == slurp(ref / "metrics.csv"));
    CHECK(slurp(cli / "client_epoch1.ckpt") == slurp(ref / "client_epoch1.ckpt"));
  }
}

TEST_CASE("assess reports per-channel leakage and rejects foreign checkpoints", "[cli]") {
  const fs::path train_out = work_dir() / "t1";
  if (!fs::exists(train_out / "client_epoch1.ckpt"))
    REQUIRE(run("train --synthetic 6 --epochs 2 --batch 16 --out " + train_out.string()).code == 0);
  const std::string ckpt = (train_out / "client_epoch1.ckpt").string();

  const fs::path a1 = work_dir() / "a1";
  auto r = run("assess " + ckpt + " --synthetic 6 --samples 12 --out " + a1.string());
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("most correlated channel") != std::string::npos);

  const std::string leak = slurp(a1 / "leakage.csv");
  CHECK(leak.rfind("channel,dcor_mean,dtw_mean,samples\n", 0) == 0);
  CHECK(line_count(leak) == 17);  // header + one row per split-layer channel
  for (char cls : std::string("NLRAV"))
    CHECK(fs::exists(a1 / (std::string("visual_") + cls + ".csv")));

  const fs::path a2 = work_dir() / "a2";
  REQUIRE(run("assess " + ckpt + " --synthetic 6 --samples 12 --out " + a2.string()).code == 0);
  CHECK(leak == slurp(a2 / "leakage.csv"));

  SECTION("model config files are accepted in place of names") {
    const fs::path a3 = work_dir() / "a3";
    auto r3 = run("assess " + ckpt + " --model " + (train_out / "model.cfg").string() +
                  " --synthetic 6 --samples 12 --out " + a3.string());
    REQUIRE(r3.code == 0);
    CHECK(leak == slurp(a3 / "leakage.csv"));
  }

  SECTION("wrong depth and wrong part both fail with named shapes") {
    auto bad = run("assess " + ckpt + " --model depth-k --depth 4 --synthetic 6 --out " +
                   (work_dir() / "bad1").string());
    CHECK(bad.code == 2);
    CHECK(bad.err.find("blobs") != std::string::npos);

    auto srv = run("assess " + (train_out / "server_epoch1.ckpt").string() + " --synthetic 6 --out " +
                   (work_dir() / "bad2").string());
    CHECK(srv.code == 2);
    CHECK(srv.err.find("conv1d weights") != std::string::npos);
    CHECK(srv.err.find("[16x1x7]") != std::string::npos);
  }

  SECTION("assessment-time noise changes the report") {
    const fs::path a4 = work_dir() / "a4";
    auto r4 = run("assess " + ckpt + " --synthetic 6 --samples 12 --epsilon 2 --out " + a4.string());
    REQUIRE(r4.code == 0);
    CHECK(leak != slurp(a4 / "leakage.csv"));
  }
}

TEST_CASE("sweep emits the four summary files", "[cli]") {
  const fs::path sw = work_dir() / "sw";
  auto r = run("sweep --kind dp --synthetic 4 --seeds 1 --epochs 1 --batch 16 --samples 8 --out " +
               sw.string());
  CAPTURE(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.err.find("at least 3 seeds") != std::string::npos);
  CHECK(r.out.find("dp=inf seed=1") != std::string::npos);
  CHECK(r.out.find("dp=1 seed=1") != std::string::npos);

  CHECK(line_count(slurp(sw / "sweep_accuracy.csv")) == 7);          // header + 6 axis points
  CHECK(line_count(slurp(sw / "sweep_accuracy_summary.csv")) == 7);
  CHECK(line_count(slurp(sw / "sweep_leakage.csv")) == 1 + 6 * 16);  // 16 channels per point
  CHECK(fs::exists(sw / "distributions.csv"));
}
