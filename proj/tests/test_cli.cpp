#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "csiloc/binary_io.hpp"
#include "csiloc/cli.hpp"
#include "csiloc/dataset.hpp"
#include "json.hpp"

using namespace csiloc;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("csiloc_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    const nlohmann::json cfg = {
        {"synth", {{"grid", {{"cols", 4}, {"rows", 2}, {"aps", 1}, {"tps_per_ap", 2}}}, {"packets_per_rp", 80}, {"packets_per_tp", 20}}},
        {"preprocess", {{"k_max", 6}}},
        {"train", {{"max_epochs", 3}}},
        {"evaluate", {{"draws", 5}}},
        {"bench", {{"iterations", 100}, {"warmup", 5}}}};
    std::ofstream(dir_ / "small.json") << cfg.dump(2);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::vector<std::string> base(const std::string& cmd) const { return {cmd, "--config", path("small.json")}; }

  fs::path dir_;
};

std::vector<std::string> with(std::vector<std::string> a, std::initializer_list<std::string> more) {
  a.insert(a.end(), more);
  return a;
}

}  // namespace

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run_cli({}).code, cli::kConfigError);
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kConfigError);
  EXPECT_EQ(run_cli({"synth"}).code, cli::kConfigError);
  EXPECT_EQ(run_cli({"synth", "--out", path("x"), "--config", path("missing.json")}).code, cli::kConfigError);
  EXPECT_EQ(run_cli({"--help"}).code, cli::kOk);
}

TEST_F(CliTest, SynthRequiresSeed) {
  const auto r = run_cli(with(base("synth"), {"--out", path("data")}));
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_NE(r.err.find("seed"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir_ / "data"));
}

TEST_F(CliTest, SynthIsByteIdenticalAcrossRunsAndThreads) {
  ASSERT_EQ(run_cli(with(base("synth"), {"--seed", "5", "--out", path("a")})).code, 0);
  ASSERT_EQ(run_cli(with(base("synth"), {"--seed", "5", "--out", path("b"), "--single-thread"})).code, 0);
  ASSERT_EQ(run_cli(with(base("synth"), {"--seed", "6", "--out", path("c")})).code, 0);
  EXPECT_EQ(dataset_checksum(dir_ / "a"), dataset_checksum(dir_ / "b"));
  EXPECT_NE(dataset_checksum(dir_ / "a"), dataset_checksum(dir_ / "c"));
  for (const auto& e : fs::directory_iterator(dir_ / "a")) {
    EXPECT_EQ(io::read_file(e.path()), io::read_file(dir_ / "b" / e.path().filename())) << e.path();
  }
}

TEST_F(CliTest, MissingInputsFail) {
  EXPECT_EQ(run_cli(with(base("preprocess"), {"--seed", "1", "--in", path("nope"), "--out", path("p")})).code,
            cli::kDataError);
  EXPECT_EQ(run_cli(with(base("train"), {"--seed", "1", "--in", path("nope"), "--out", path("m")})).code,
            cli::kDataError);
  EXPECT_EQ(run_cli(with(base("bench"), {"--model", path("nope.csim")})).code, cli::kDataError);
}

TEST_F(CliTest, SmallPipelineEndToEnd) {
  auto seed = std::initializer_list<std::string>{"--seed", "11"};
  ASSERT_EQ(run_cli(with(with(base("synth"), seed), {"--out", path("data")})).code, 0);

  auto pre = run_cli(with(with(base("preprocess"), seed), {"--in", path("data"), "--out", path("proc")}));
  ASSERT_EQ(pre.code, 0) << pre.err;
  std::ifstream audit(dir_ / "proc" / "audit.jsonl");
  std::string line;
  std::getline(audit, line);
  const auto prov = nlohmann::json::parse(line);
  EXPECT_EQ(prov.at("seed"), 11);
  EXPECT_EQ(prov.at("dataset_sha256"), dataset_checksum(dir_ / "data"));
  std::size_t records = 0;
  while (std::getline(audit, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("k"));
    EXPECT_TRUE(j.contains("spikes_removed"));
    EXPECT_TRUE(j.contains("scale_factor"));
    ++records;
  }
  EXPECT_EQ(records, 10u);

  auto train = run_cli(with(with(base("train"), seed), {"--in", path("proc"), "--out", path("models")}));
  ASSERT_EQ(train.code, 0) << train.err;
  ASSERT_TRUE(fs::exists(dir_ / "models" / "model_ap1.csim"));

  // Evaluating against an empty model directory is a configuration problem.
  fs::create_directories(dir_ / "empty");
  EXPECT_EQ(run_cli(with(with(base("evaluate"), seed), {"--in", path("proc"), "--models", path("empty"), "--out", path("r0")})).code,
            cli::kConfigError);

  auto ev = run_cli(with(with(base("evaluate"), seed), {"--in", path("proc"), "--models", path("models"), "--out", path("report")}));
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_NE(ev.out.find("overall\tmean_error_m="), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "report" / "summary.tsv"));
  EXPECT_TRUE(fs::exists(dir_ / "report" / "cdf_ap1.tsv"));

  auto bench = run_cli(with(base("bench"), {"--model", path("models/model_ap1.csim"), "--out", path("lat.tsv")}));
  ASSERT_EQ(bench.code, 0) << bench.err;
  EXPECT_NE(bench.out.find("iterations 100"), std::string::npos);
  EXPECT_NE(bench.out.find("p99_ms"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "lat.tsv"));

  // Predict on a clean test packet, then on the same packet with a spike.
  const auto manifest = load_manifest(dir_ / "data");
  std::string tp_file;
  for (const auto& e : manifest.locations) {
    if (e.role == LocationRole::test) tp_file = (dir_ / "data" / e.file).string();
  }
  ASSERT_FALSE(tp_file.empty());
  auto packets = decode_packets(io::read_file(tp_file), tp_file);
  std::size_t clean = 0;
  while (std::abs(packets[clean].subcarriers[10]) > 1000 || std::abs(packets[clean].subcarriers[40]) > 1000) ++clean;
  std::vector<CsiPacket> one{packets[clean]};
  io::write_file(dir_ / "clean.csi", encode_packets(one));
  auto p = run_cli(with(base("predict"), {"--model", path("models/model_ap1.csim"), "--packet", path("clean.csi")}));
  EXPECT_EQ(p.code, 0) << p.err;
  EXPECT_EQ(std::count(p.out.begin(), p.out.end(), '\t'), 3);

  one[0].subcarriers[20] = {3000.0, 0.0};
  io::write_file(dir_ / "spiked.csi", encode_packets(one));
  auto rejected = run_cli(with(base("predict"), {"--model", path("models/model_ap1.csim"), "--packet", path("spiked.csi")}));
  EXPECT_EQ(rejected.code, cli::kRejectedSample);
  EXPECT_EQ(run_cli(with(base("predict"), {"--model", path("models/model_ap1.csim"), "--packet", path("clean.csi"), "--index", "4"})).code,
            cli::kDataError);
}

TEST(CliBinary, ExistsAndPrintsHelp) {
  ASSERT_TRUE(fs::exists(CSILOC_CLI_PATH));
  const std::string cmd = std::string("\"") + CSILOC_CLI_PATH + "\" --help > /dev/null 2>&1";
  EXPECT_EQ(std::system(cmd.c_str()), 0);
}
