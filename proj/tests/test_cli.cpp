#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "nplab/datagen.hpp"
#include "nplab/rng.hpp"

namespace fs = std::filesystem;
using namespace nplab;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "nplab");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("nplab_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  // A fast training run: tiny epochs, small cross-validation set.
  Result train(const std::string& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"train", "--model", "convcnp", "--process", "eq", "--epochs", "2", "--seed", "0",
                                  "--out", (dir / out).string(), "--set", "tasks_per_epoch=16",
                                  "crossval_tasks=8"};
    args.insert(args.end(), extra.begin(), extra.end());
    return run_cli(args);
  }

  fs::path dir;
};

}  // namespace

TEST_F(CliTest, TrainWritesCheckpointAndHistory) {
  auto r = train("a");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "a" / "best.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "a" / "history.csv"));
  EXPECT_NE(r.out.find("command=train model=convcnp process=eq epochs=2"), std::string::npos);
  auto hist = slurp(dir / "a" / "history.csv");
  EXPECT_EQ(hist.rfind("epoch,train_loss,cv_score\n", 0), 0u);
}

TEST_F(CliTest, TrainIsDeterministic) {
  ASSERT_EQ(train("a").code, 0);
  ASSERT_EQ(train("b").code, 0);
  EXPECT_EQ(slurp(dir / "a" / "history.csv"), slurp(dir / "b" / "history.csv"));
  EXPECT_EQ(slurp(dir / "a" / "best.ckpt"), slurp(dir / "b" / "best.ckpt"));
}

TEST_F(CliTest, BadModelNameListsVariants) {
  auto r = run_cli({"train", "--model", "transformer", "--out", (dir / "x").string()});
  EXPECT_EQ(r.code, 1);
  for (const char* name : {"cnp", "gnp", "convcnp", "convgnp", "fullconvgnp"}) {
    EXPECT_NE(r.err.find(name), std::string::npos) << name;
  }
}

TEST_F(CliTest, ConfigFileLosesToFlags) {
  std::ofstream(dir / "run.cfg") << "# comment\nmodel = cnp\nepochs=3\ntasks_per_epoch=16\ncrossval_tasks=4\n"
                                    "width=8\nencoding_dim=8\n";
  auto r = run_cli({"train", "--config", (dir / "run.cfg").string(), "--epochs", "1", "--out",
                    (dir / "c").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("model=cnp"), std::string::npos);
  EXPECT_NE(r.out.find("epochs=1 "), std::string::npos);
}

TEST_F(CliTest, UnknownKeysAndBadValuesAreConfigErrors) {
  std::ofstream(dir / "bad.cfg") << "epochz=3\n";
  EXPECT_EQ(run_cli({"train", "--config", (dir / "bad.cfg").string()}).code, 1);
  EXPECT_EQ(run_cli({"train", "--set", "epochs=two", "--out", (dir / "x").string()}).code, 1);
  EXPECT_EQ(run_cli({"train", "--process", "lv", "--out", (dir / "x").string()}).code, 1);
  EXPECT_EQ(run_cli({"train", "--split", "sideways", "--out", (dir / "x").string()}).code, 1);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 1);
}

TEST_F(CliTest, EvalWritesModelOracleAndTrivialRows) {
  ASSERT_EQ(train("a").code, 0);
  auto args = std::vector<std::string>{"eval", "--out", (dir / "a").string(), "--process", "eq", "--metric", "kl",
                                       "--set", "eval_tasks=16"};
  auto r = run_cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  auto csv = slurp(dir / "a" / "eval.csv");
  EXPECT_EQ(csv.rfind("process,split,model,metric,value,ci95,n_tasks\n", 0), 0u);
  EXPECT_NE(csv.find("eq,int,convcnp,kl_per_target,"), std::string::npos);
  EXPECT_NE(csv.find("eq,int,diagonal-oracle,kl_per_target,0,0,16\n"), std::string::npos);
  EXPECT_NE(csv.find("eq,int,trivial,kl_per_target,"), std::string::npos);

  ASSERT_EQ(run_cli(args).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "eval.csv"), csv);
}

TEST_F(CliTest, EvalGuards) {
  ASSERT_EQ(train("a").code, 0);
  auto ck = (dir / "a").string();
  auto r = run_cli({"eval", "--out", ck, "--process", "sawtooth", "--metric", "kl"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("no Gaussian oracle"), std::string::npos);
  EXPECT_EQ(run_cli({"eval", "--out", ck, "--model", "cnp"}).code, 1);
  EXPECT_EQ(run_cli({"eval", "--out", (dir / "missing").string()}).code, 1);
  auto ll = run_cli({"eval", "--out", ck, "--process", "sawtooth", "--metric", "loglik", "--set", "eval_tasks=4"});
  EXPECT_EQ(ll.code, 0) << ll.err;
}

TEST_F(CliTest, OracleBatteryPassesAndReportsJacobi) {
  auto r = run_cli({"oracle"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("status=FAIL"), std::string::npos);
  EXPECT_NE(r.out.find("check=ar_chain_rule"), std::string::npos);
  EXPECT_NE(r.out.find("jacobi_iteration=500 "), std::string::npos);
  EXPECT_NE(r.out.find("check=jacobi_error_monotone value="), std::string::npos);
}

TEST_F(CliTest, PerturbedOracleFailsChainRule) {
  auto r = run_cli({"oracle", "--perturb", "0.01"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("check=ar_chain_rule"), std::string::npos);
  auto line = r.out.substr(r.out.find("check=ar_chain_rule"));
  EXPECT_NE(line.substr(0, line.find('\n')).find("status=FAIL"), std::string::npos);
}

TEST_F(CliTest, SimulateWritesPositiveTrajectories) {
  auto r = run_cli({"simulate", "-n", "4", "--seed", "0", "--out", (dir / "s").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("all_positive=1"), std::string::npos);
  for (int i = 0; i < 4; ++i) {
    auto path = dir / "s" / ("trajectory_00" + std::to_string(i) + ".csv");
    ASSERT_TRUE(fs::exists(path));
    std::ifstream is(path);
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "t,prey,predator");
    while (std::getline(is, line)) {
      double t, a, b;
      ASSERT_EQ(std::sscanf(line.c_str(), "%lf,%lf,%lf", &t, &a, &b), 3);
      ASSERT_GT(a, 0);
      ASSERT_GT(b, 0);
    }
    EXPECT_TRUE(fs::exists(dir / "s" / ("task_00" + std::to_string(i) + "_forecasting.csv")));
  }
  ASSERT_EQ(run_cli({"simulate", "-n", "4", "--seed", "0", "--out", (dir / "t").string()}).code, 0);
  for (const auto& f : fs::directory_iterator(dir / "s")) {
    EXPECT_EQ(slurp(f.path()), slurp(dir / "t" / f.path().filename()));
  }
}

TEST_F(CliTest, ZeroSigmaGivesTheDeterministicSystem) {
  ASSERT_EQ(run_cli({"simulate", "-n", "1", "--seed", "7", "--sigma", "0", "--out", (dir / "s").string()}).code, 0);
  // Parameters come from the simulation stream (5) of the root seed; with
  // sigma = 0 the noise stream no longer matters.
  Rng rng(derive_seed(7, 5, 0));
  auto p = LVParams::sample(rng);
  p.sigma = 0;
  Rng other(12345);
  auto traj = lv_simulate(p, 0.01, other);
  std::ostringstream expected;
  write_trajectory_csv(expected, traj);
  EXPECT_EQ(slurp(dir / "s" / "trajectory_000.csv"), expected.str());
}
