/* Copyright 2026 The dtrsim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dtrsim/cli.hpp"

namespace dtr {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "dtrsim");
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
  return out;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("dtrsim_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
    linear_ = (dir_ / "linear.dtrlog").string();
    random_ = (dir_ / "random.dtrlog.gz").string();
    ASSERT_EQ(cli({"gen", "linear", "--n", "64", "--out", linear_}).code, 0);
    ASSERT_EQ(cli({"gen", "random", "--nodes", "80", "--seed", "3", "--out", random_}).code, 0);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  static std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path dir_;
  std::string linear_, random_;
};

TEST_F(CliTest, GenWritesValidLogs) {
  OpLog lin = read_log_file(linear_);
  EXPECT_EQ(lin.base_compute, 128);
  Result r = cli({"gen", "linear", "--n", "64"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, serialize(lin));
  EXPECT_EQ(serialize(read_log_file(random_)), serialize(gen_random_dag(80, 3, 3)));
}

TEST_F(CliTest, ReplayAtFullRatioHasNoOverhead) {
  Result r = cli({"replay", "--log", random_, "--ratio", "1.0"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto ls = lines(r.out);
  ASSERT_EQ(ls.size(), 2u);
  EXPECT_EQ(ls[0], kSweepHeader);
  auto f = fields(ls[1]);
  ASSERT_EQ(f.size(), 12u);
  EXPECT_EQ(f[0], "dtr-full");
  EXPECT_EQ(f[1], "eager-evict");
  EXPECT_EQ(f[6], "1.000000");
  EXPECT_EQ(f[11], "ok");
}

TEST_F(CliTest, ReplayOomExitsTwo) {
  Result r = cli({"replay", "--log", linear_, "--budget", "1", "--policy", "banish"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(fields(lines(r.out)[1])[11], "oom");
}

TEST_F(CliTest, ReplayJsonFormat) {
  Result r = cli({"replay", "--log", linear_, "--budget", "16", "--heuristic", "compute-memory",
                  "--policy", "banish", "--format", "json"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["heuristic"], "compute-memory");
  EXPECT_EQ(j["policy"], "banish");
  EXPECT_EQ(j["budget_bytes"], 16);
  EXPECT_EQ(j["base_compute"], 128);
  EXPECT_EQ(j["status"], "ok");
}

TEST_F(CliTest, ThrashExitsZero) {
  Result r = cli({"replay", "--log", linear_, "--budget", "3", "--policy", "banish"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(fields(lines(r.out)[1])[11], "thrash");
}

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(cli({}).code, 1);
  EXPECT_EQ(cli({"replay", "--log", linear_}).code, 1);
  EXPECT_EQ(cli({"replay", "--log", linear_, "--budget", "4", "--ratio", "0.5"}).code, 1);
  EXPECT_EQ(cli({"replay", "--log", linear_, "--ratio", "1", "--heuristic", "bogus"}).code, 1);
  EXPECT_EQ(cli({"replay", "--log", linear_, "--ratio", "1", "--policy", "bogus"}).code, 1);
  EXPECT_EQ(cli({"replay", "--log", path("missing.dtrlog"), "--ratio", "1"}).code, 1);
  EXPECT_EQ(cli({"frobnicate"}).code, 1);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST_F(CliTest, MalformedLogExitsOneWithLine) {
  std::ofstream(path("bad.dtrlog")) << R"({"instr":"RELEASE","tensor":"x"})" << "\n";
  Result r = cli({"replay", "--log", path("bad.dtrlog"), "--ratio", "1"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("line 1"), std::string::npos);
}

TEST_F(CliTest, SweepHeaderAndOrder) {
  Result r = cli({"sweep", "--log", random_, "--ratios", "0.6,1.0,0.8", "--heuristics",
                  "lru,dtr-full", "--policies", "eager-evict,banish"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto ls = lines(r.out);
  ASSERT_EQ(ls.size(), 13u);
  EXPECT_EQ(ls[0],
            "heuristic,policy,budget_bytes,budget_ratio,base_compute,total_compute,slowdown,"
            "remats,evictions,peak_memory,storage_accesses,status");
  std::vector<std::tuple<std::string, std::string, double>> keys;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    auto f = fields(ls[i]);
    keys.emplace_back(f[0], f[1], -std::stod(f[3]));
  }
  EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
  EXPECT_EQ(std::get<0>(keys.front()), "dtr-full");
  EXPECT_EQ(std::get<1>(keys.front()), "banish");
  // Ratio 1.0 rows have no overhead.
  for (std::size_t i = 1; i < ls.size(); ++i) {
    auto f = fields(ls[i]);
    if (f[3] == "1.000000" && f[1] == "eager-evict") EXPECT_EQ(f[6], "1.000000");
  }
}

TEST_F(CliTest, SweepAblationSpecsUseSemicolons) {
  Result r = cli({"sweep", "--log", linear_, "--ratios", "1.0", "--heuristics",
                  "ablation:s=on,m=off,c=local;ablation:s=off,m=on,c=estar"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto ls = lines(r.out);
  ASSERT_EQ(ls.size(), 3u);
  EXPECT_EQ(ls[1].rfind("\"", 0), std::string::npos);
  EXPECT_EQ(ls[1].substr(0, 27), "ablation:s=off,m=on,c=estar");
}

TEST_F(CliTest, SweepParallelMatchesSerial) {
  std::vector<std::string> base = {"sweep", "--log", random_, "--ratios", "1.0,0.7,0.5,0.3"};
  Result serial = cli(base);
  auto par_args = base;
  par_args.insert(par_args.end(), {"--parallel", "4", "--out", path("sweep.csv")});
  Result parallel = cli(par_args);
  ASSERT_EQ(parallel.code, 0);
  EXPECT_TRUE(parallel.out.empty());
  EXPECT_EQ(slurp(path("sweep.csv")), serial.out);
}

TEST_F(CliTest, IdenticalInvocationsAreByteIdentical) {
  std::vector<std::vector<std::string>> invocations = {
      {"replay", "--log", random_, "--ratio", "0.5", "--heuristic", "random"},
      {"replay", "--log", linear_, "--budget", "16", "--heuristic", "dtr-eqclass", "--format",
       "json"},
      {"sweep", "--log", random_, "--ratios", "0.9,0.5", "--heuristics", "random,msps",
       "--parallel", "3"},
  };
  for (const auto& args : invocations) {
    Result a = cli(args), b = cli(args);
    EXPECT_EQ(a.code, b.code);
    EXPECT_EQ(a.out, b.out);
  }
}

TEST_F(CliTest, SeedEnvironmentSelectsRandomStream) {
  std::vector<std::string> args = {"replay", "--log", random_, "--ratio", "0.4", "--heuristic",
                                   "random", "--format", "json"};
  ::setenv("RMS_SEED", "1", 1);
  Result one = cli(args);
  Result one_again = cli(args);
  ::setenv("RMS_SEED", "2", 1);
  Result two = cli(args);
  ::unsetenv("RMS_SEED");
  EXPECT_EQ(one.out, one_again.out);
  EXPECT_NE(one.out, two.out);
}

TEST_F(CliTest, TraceRecordsResidencyPerStep) {
  Result r = cli({"replay", "--log", linear_, "--budget", "16", "--heuristic", "compute-memory",
                  "--policy", "banish", "--trace", path("trace.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto ls = lines(slurp(path("trace.csv")));
  ASSERT_GT(ls.size(), 1u);
  EXPECT_EQ(ls[0], "step,storage_id,state");
  std::set<std::string> states;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    auto f = fields(ls[i]);
    ASSERT_EQ(f.size(), 3u);
    states.insert(f[2]);
  }
  EXPECT_EQ(states, (std::set<std::string>{"evicted", "pinned", "resident"}));
}

TEST_F(CliTest, VerifyBoundsTheoremOne) {
  Result r = cli({"verify-bounds", "--theorem", "1", "--sizes", "64,128,256"});
  ASSERT_EQ(r.code, 0) << r.out;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j["pass"].get<bool>());
  ASSERT_EQ(j["cases"].size(), 3u);
  for (const auto& c : j["cases"]) EXPECT_EQ(c["forward_compute"], c["N"]);
}

TEST_F(CliTest, VerifyBoundsTheoremTwo) {
  Result r = cli({"verify-bounds", "--theorem", "2", "--sizes", "128", "--budgets", "8",
                  "--out", path("t2.json")});
  ASSERT_EQ(r.code, 0);
  auto j = nlohmann::json::parse(slurp(path("t2.json")));
  EXPECT_TRUE(j["pass"].get<bool>());
  EXPECT_EQ(j["cases"].size(), 3u);
}

TEST_F(CliTest, AdversaryRejectsBudgetBelowTwo) {
  // A node and its input must fit together.
  Result r = cli({"verify-bounds", "--theorem", "2", "--sizes", "16", "--budgets", "1",
                  "--heuristics", "lru"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("2 <= B < N"), std::string::npos) << r.err;
}

TEST_F(CliTest, AdversaryReportAndLog) {
  Result r = cli({"adversary", "--n", "64", "--budget", "8", "--heuristic", "lru", "--log",
                  path("adv.dtrlog")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["static_cost"], 64);
  EXPECT_GE(j["ratio"].get<double>(), 2.0);
  EXPECT_EQ(read_log_file(path("adv.dtrlog")).base_compute, 64);
}

TEST(CliBinaryTest, ExecutableRuns) {
  std::string cmd = std::string(DTRSIM_BINARY) + " gen linear --n 4 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  ASSERT_NE(pipe, nullptr);
  std::string out;
  char buf[256];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  int status = ::pclose(pipe);
  EXPECT_EQ(status, 0);
  EXPECT_EQ(out, serialize(gen_linear(4)));
}

}  // namespace
}  // namespace dtr
