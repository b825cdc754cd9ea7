#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "rica/data.hpp"
#include "rica/engine.hpp"

using namespace rica;
namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "rica_cli_test";

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const auto log = kDir / "stdout.txt";
  const std::string cmd = std::string(RICA_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

engine::RunConfig run_config(const std::string& out) {
  engine::RunConfig c;
  c.manifest = kDir / "data" / "manifest.json";
  c.out_dir = kDir / out;
  c.model.d_feat = 8;
  c.model.d_text = 8;
  c.model.d_model = 16;
  c.model.heads = 2;
  c.model.max_clips = 10;
  c.model.aggregator_hidden = 16;
  c.model.decoder_hidden = 16;
  c.optimizer.epochs = 2;
  c.optimizer.batch_size = 4;
  c.optimizer.warmup_epochs = 1;
  return c;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kDir);
    fs::create_directories(kDir);
    data::GeneratorConfig g;
    g.n_train = 12;
    g.n_test = 10;
    g.clips = 10;
    g.d_feat = 8;
    g.d_text = 8;
    g.step_types = 6;
    g.k_max = 4;
    g.out_dir = "data";
    write(kDir / "gen.json", data::generator_config_to_json(g));
    write(kDir / "train.json", engine::run_config_to_json(run_config("run")));
    auto det = run_config("det");
    det.mode = model::Mode::kDeterministic;
    write(kDir / "det.json", engine::run_config_to_json(det));
  }
  static void TearDownTestSuite() { fs::remove_all(kDir); }
};

}  // namespace

TEST_F(Cli, EndToEndWorkflow) {
  auto r = cli("gen-data --config " + (kDir / "gen.json").string());
  ASSERT_EQ(r.code, 0) << r.out;
  ASSERT_TRUE(fs::exists(kDir / "data" / "manifest.json"));

  r = cli("train --config " + (kDir / "train.json").string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto ckpt = kDir / "run" / "checkpoint.rack";
  ASSERT_TRUE(fs::exists(ckpt));

  r = cli("eval --ckpt " + ckpt.string() + " --split test");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("\"srcc\""), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(kDir / "run" / "eval_test.csv"));

  const auto m = data::load_manifest(kDir / "data" / "manifest.json");
  const auto sample = m.resolve(m.test.front());
  r = cli("predict --ckpt " + ckpt.string() + " --sample " + sample.string());
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("uncertainty: "), std::string::npos);
  const auto again = cli("predict --ckpt " + ckpt.string() + " --sample " + sample.string());
  EXPECT_EQ(again.out, r.out);

  const auto csv = kDir / "cal.csv";
  r = cli("calibration --ckpt " + ckpt.string() + " --split test --out " + csv.string());
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(csv));

  // Deterministic checkpoints have no uncertainty to calibrate.
  r = cli("train --config " + (kDir / "det.json").string());
  ASSERT_EQ(r.code, 0) << r.out;
  r = cli("calibration --ckpt " + (kDir / "det" / "checkpoint.rack").string() + " --out " +
          (kDir / "det.csv").string());
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_FALSE(fs::exists(kDir / "det.csv"));

  // A truncated sample file is a format error.
  const auto bad = kDir / "broken.bin";
  {
    std::ifstream in(sample, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    write(bad, bytes.substr(0, bytes.size() / 2));
  }
  r = cli("predict --ckpt " + ckpt.string() + " --sample " + bad.string());
  EXPECT_EQ(r.code, 3) << r.out;
}

TEST_F(Cli, ConfigErrorsExitTwo) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("train").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  write(kDir / "unknown.json", R"({"manifest": "m.json", "learning_rate": 0.1})");
  EXPECT_EQ(cli("train --config " + (kDir / "unknown.json").string()).code, 2);
  EXPECT_EQ(cli("train --config " + (kDir / "missing.json").string()).code, 2);
  EXPECT_EQ(cli("accept --suite medium").code, 2);
}

TEST_F(Cli, DivergenceExitsFour) {
  if (!fs::exists(kDir / "data" / "manifest.json")) {
    ASSERT_EQ(cli("gen-data --config " + (kDir / "gen.json").string()).code, 0);
  }
  auto c = run_config("diverge");
  c.optimizer.lr_encoder = c.optimizer.lr_attention = c.optimizer.lr_head = 1e300;
  c.optimizer.warmup_epochs = 0;
  write(kDir / "diverge.json", engine::run_config_to_json(c));
  const auto r = cli("train --config " + (kDir / "diverge.json").string());
  EXPECT_EQ(r.code, 4) << r.out;
}

TEST_F(Cli, HelpExitsZero) { EXPECT_EQ(cli("--help").code, 0); }
