#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "icjm_cli/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = icjm::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("icjm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string at(const std::string& name) const { return (dir / name).string(); }

  fs::path dir;
};

}  // namespace

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run_cli({"--help"}).code, icjm::cli::kOk);
  EXPECT_EQ(run_cli({"fit", "--help"}).code, icjm::cli::kOk);
  EXPECT_EQ(run_cli({}).code, icjm::cli::kUsage);
  EXPECT_EQ(run_cli({"frobnicate"}).code, icjm::cli::kUsage);
  EXPECT_EQ(run_cli({"simulate", "--n", "-3", "--out", at("s")}).code, icjm::cli::kUsage);
  EXPECT_EQ(run_cli({"simulate", "--n", "ten", "--out", at("s")}).code, icjm::cli::kUsage);
  EXPECT_EQ(run_cli({"simulate", "--out", at("s"), "--censor-min", "5", "--censor-max", "2"}).code, icjm::cli::kUsage);
  EXPECT_EQ(run_cli({"fit", "--data", at("missing"), "--out", at("p.json")}).code, icjm::cli::kData);
  EXPECT_EQ(run_cli({"evaluate", "--data", at("missing"), "--out", at("ev")}).code, icjm::cli::kData);
  const auto r = run_cli({"predict", "--posterior", at("none.json"), "--data", at("none"), "--patient", "x", "--out",
                       at("pr")});
  EXPECT_EQ(r.code, icjm::cli::kData);
  EXPECT_FALSE(r.err.empty());
  EXPECT_FALSE(fs::exists(dir / "pr.csv"));
}

TEST_F(CliTest, SimulateRerunsBitwiseFromSnapshot) {
  ASSERT_EQ(run_cli({"simulate", "--n", "25", "--seed", "9", "--out", at("a")}).code, 0);
  ASSERT_TRUE(fs::exists(dir / "a" / "config.toml"));
  ASSERT_TRUE(fs::exists(dir / "a" / "run.log"));
  ASSERT_EQ(run_cli({"simulate", "--config", at("a/config.toml"), "--out", at("b")}).code, 0);
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    const auto name = e.path().filename();
    if (name == "config.toml") continue;
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / name)) << name;
  }
  // flags override the config file
  ASSERT_EQ(run_cli({"simulate", "--config", at("a/config.toml"), "--seed", "10", "--out", at("c")}).code, 0);
  EXPECT_NE(slurp(dir / "a" / "longitudinal.csv"), slurp(dir / "c" / "longitudinal.csv"));
  EXPECT_NE(slurp(dir / "c" / "config.toml").find("seed=10"), std::string::npos);
  EXPECT_NE(slurp(dir / "c" / "config.toml").find("n=25"), std::string::npos);
}

TEST_F(CliTest, PipelineWithReproducibleArtifacts) {
  ASSERT_EQ(run_cli({"simulate", "--n", "30", "--seed", "4", "--out", at("sim")}).code, 0);
  const auto fit = run_cli({"fit", "--data", at("sim"), "--spec", at("sim"), "--out", at("post.json"), "--chains", "2",
                         "--iters", "200", "--seed", "5"});
  ASSERT_EQ(fit.code, 0) << fit.err;
  EXPECT_NE(slurp(dir / "post.json.log").find("R-hat"), std::string::npos);

  const std::vector<std::string> common{"--posterior", at("post.json"), "--data", at("sim"), "--patient", "p01",
                                        "--tb", "1", "--ty", "1.5", "--draws", "8", "--mh", "30", "--warmup", "10"};
  auto pred_args = common;
  pred_args.insert(pred_args.begin(), "predict");
  pred_args.insert(pred_args.end(), {"--out", at("pr")});
  ASSERT_EQ(run_cli(pred_args).code, 0);
  const auto csv = slurp(dir / "pr.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t_p,mean,lower,upper");
  ASSERT_EQ(run_cli({"predict", "--config", at("pr.config.toml")}).code, 0);
  EXPECT_EQ(slurp(dir / "pr.csv"), csv);
  EXPECT_TRUE(fs::exists(dir / "pr.json"));

  auto sched_args = common;
  sched_args.insert(sched_args.begin(), "schedule");
  sched_args.insert(sched_args.end(), {"--phi", "0.1", "--out", at("sc.json")});
  ASSERT_EQ(run_cli(sched_args).code, 0);
  EXPECT_NE(slurp(dir / "sc.json").find("planned_times"), std::string::npos);
  sched_args.insert(sched_args.end(), {"--phi", "1.5"});
  EXPECT_EQ(run_cli(sched_args).code, icjm::cli::kUsage);

  const auto ev = run_cli({"evaluate", "--data", at("sim"), "--posterior", at("post.json"), "--studies", "cif,effects",
                        "--out", at("ev")});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_TRUE(fs::exists(dir / "ev" / "cif.csv"));
  EXPECT_TRUE(fs::exists(dir / "ev" / "effects.csv"));
  EXPECT_TRUE(fs::exists(dir / "ev" / "report.json"));
  EXPECT_EQ(run_cli({"evaluate", "--data", at("sim"), "--studies", "effects", "--out", at("ev2")}).code,
            icjm::cli::kUsage);
  EXPECT_FALSE(fs::exists(dir / "ev2"));
}
