// Copyright 2026 The safetune Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Drives the installed command-line binary through the shell.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "safetune/dpp.hpp"
#include "safetune/embedding.hpp"
#include "safetune/relevance.hpp"

#ifndef SAFETUNE_CLI_PATH
#error "SAFETUNE_CLI_PATH must name the command-line binary"
#endif

namespace safetune {
namespace {

namespace fs = std::filesystem;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() /
           (std::string("safetune_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string Path(const std::string& name) const { return (dir_ / name).string(); }

  int Run(const std::string& args) {
    const std::string cmd = std::string(SAFETUNE_CLI_PATH) + " " + args + " >" +
                            Path("stdout.txt") + " 2>" + Path("stderr.txt");
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string Slurp(const std::string& name) const {
    std::ifstream in(Path(name), std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }

  void Save(const std::string& name, const EmbeddingSet& set) {
    SaveEmbeddings(Path(name), set, EmbeddingFormat::kJsonl);
  }

  void WriteText(const std::string& name, const std::string& text) {
    std::ofstream out(Path(name), std::ios::binary);
    out << text;
  }

  fs::path dir_;
};

TEST_F(CliTest, RelevanceSelfReferenceIsOne) {
  std::mt19937_64 rng(70);
  Save("pool.jsonl", testing::RandomEmbeddings(12, 5, rng));
  ASSERT_EQ(Run("relevance --pool " + Path("pool.jsonl") + " --ft " +
                Path("pool.jsonl") + " --out " + Path("q.jsonl")),
            0);
  std::istringstream in(Slurp("q.jsonl"));
  std::string line;
  int count = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(nlohmann::json::parse(line)["q"].get<double>(), 1.0);
    ++count;
  }
  EXPECT_EQ(count, 12);
  EXPECT_NE(Slurp("stdout.txt").find("max=1"), std::string::npos);
}

TEST_F(CliTest, RelevanceOrthogonalIsZero) {
  WriteText("pool.jsonl", "{\"id\":\"a\",\"embedding\":[0,0,1]}\n"
                          "{\"id\":\"b\",\"embedding\":[0,0,-2]}\n");
  WriteText("ft.jsonl", "{\"id\":\"x\",\"embedding\":[1,0,0]}\n"
                        "{\"id\":\"y\",\"embedding\":[0,3,0]}\n");
  ASSERT_EQ(Run("relevance --pool " + Path("pool.jsonl") + " --ft " +
                Path("ft.jsonl") + " --out " + Path("q.jsonl")),
            0);
  EXPECT_EQ(Slurp("q.jsonl"), "{\"id\":\"a\",\"q\":0.0}\n{\"id\":\"b\",\"q\":0.0}\n");
}

TEST_F(CliTest, RelevanceMatchesLibraryByteForByte) {
  std::mt19937_64 rng(71);
  const EmbeddingSet pool = testing::RandomEmbeddings(40, 8, rng, "p");
  const EmbeddingSet ft = testing::RandomEmbeddings(25, 8, rng, "f");
  Save("pool.jsonl", pool);
  Save("ft.jsonl", ft);
  ASSERT_EQ(Run("relevance --pool " + Path("pool.jsonl") + " --ft " +
                Path("ft.jsonl") + " --out " + Path("q.jsonl") + " --threads 3"),
            0);
  const EmbeddingSet pool_in = LoadEmbeddings(Path("pool.jsonl"));
  const EmbeddingSet ft_in = LoadEmbeddings(Path("ft.jsonl"));
  std::ostringstream expect;
  WriteRelevanceJsonl(expect, pool_in.ids(), ComputeRelevance(pool_in, ft_in));
  EXPECT_EQ(Slurp("q.jsonl"), expect.str());
}

TEST_F(CliTest, SelectMatchesLibraryAndIsDeterministic) {
  std::mt19937_64 rng(72);
  Save("pool.jsonl", testing::RandomEmbeddings(300, 16, rng, "p"));
  Save("ft.jsonl", testing::RandomEmbeddings(200, 16, rng, "f"));
  const std::string args = "select --pool " + Path("pool.jsonl") + " --ft " +
                           Path("ft.jsonl") + " --out " + Path("sel.json");
  ASSERT_EQ(Run(args), 0) << Slurp("stderr.txt");
  const std::string first = Slurp("sel.json");
  ASSERT_EQ(Run(args + " --threads 4"), 0);
  EXPECT_EQ(Slurp("sel.json"), first);
  const auto doc = nlohmann::json::parse(first);
  // Default p = 0.03 of 200 ft rows.
  EXPECT_EQ(doc["k_requested"], 6);
  EXPECT_EQ(doc["beta"], 4.0);
  const EmbeddingSet pool = LoadEmbeddings(Path("pool.jsonl"));
  const RelevanceScores q = ComputeRelevance(pool, LoadEmbeddings(Path("ft.jsonl")));
  const SelectionResult r = GreedySelect(WeightedKernelView(pool, q, 4.0), 6);
  EXPECT_EQ(doc, SelectionToJson(r, pool.ids(), 4.0));
}

TEST_F(CliTest, SelectFromRelevanceFile) {
  std::mt19937_64 rng(73);
  Save("pool.jsonl", testing::RandomEmbeddings(30, 6, rng, "p"));
  Save("ft.jsonl", testing::RandomEmbeddings(20, 6, rng, "f"));
  ASSERT_EQ(Run("relevance --pool " + Path("pool.jsonl") + " --ft " +
                Path("ft.jsonl") + " --out " + Path("q.jsonl")),
            0);
  ASSERT_EQ(Run("select --pool " + Path("pool.jsonl") + " --relevance " +
                Path("q.jsonl") + " --k 5 --beta 2 --out " + Path("a.json")),
            0);
  ASSERT_EQ(Run("select --pool " + Path("pool.jsonl") + " --ft " +
                Path("ft.jsonl") + " --k 5 --beta 2 --out " + Path("b.json")),
            0);
  EXPECT_EQ(Slurp("a.json"), Slurp("b.json"));
  // --p with only a relevance file has nothing to size against.
  EXPECT_EQ(Run("select --pool " + Path("pool.jsonl") + " --relevance " +
                Path("q.jsonl") + " --p 0.1 --out " + Path("c.json")),
            2);
}

TEST_F(CliTest, SelectEarlyStopExitsThree) {
  WriteText("pool.jsonl", "{\"id\":\"a\",\"embedding\":[1,0]}\n"
                          "{\"id\":\"b\",\"embedding\":[2,0]}\n"
                          "{\"id\":\"c\",\"embedding\":[0,1]}\n");
  EXPECT_EQ(Run("select --pool " + Path("pool.jsonl") + " --ft " +
                Path("pool.jsonl") + " --k 3 --out " + Path("s.json")),
            3);
  const auto doc = nlohmann::json::parse(Slurp("s.json"));
  EXPECT_EQ(doc["stopped_early"], true);
  EXPECT_EQ(doc["selected_ids"], nlohmann::json({"a", "c"}));
  EXPECT_NE(Slurp("stderr.txt").find("warning"), std::string::npos);
}

TEST_F(CliTest, ValidationErrorsExitTwo) {
  std::mt19937_64 rng(74);
  Save("pool.jsonl", testing::RandomEmbeddings(10, 4, rng));
  Save("ft3.jsonl", testing::RandomEmbeddings(5, 3, rng, "f"));
  const std::string pool = " --pool " + Path("pool.jsonl");
  EXPECT_EQ(Run("select" + pool + " --ft " + Path("pool.jsonl") +
                " --k 2 --p 0.1 --out " + Path("s.json")),
            2);
  EXPECT_EQ(Run("select" + pool + " --ft " + Path("pool.jsonl") +
                " --k 11 --out " + Path("s.json")),
            2);
  EXPECT_EQ(Run("select" + pool + " --k 2 --out " + Path("s.json")), 2);
  EXPECT_EQ(Run("relevance" + pool + " --ft " + Path("ft3.jsonl") + " --out " +
                Path("q.jsonl")),
            2);
  EXPECT_NE(Slurp("stderr.txt").find("DimensionMismatch"), std::string::npos);
  EXPECT_EQ(Run("relevance --pool " + Path("missing.jsonl") + " --ft " +
                Path("pool.jsonl") + " --out " + Path("q.jsonl")),
            2);
  WriteText("bad.jsonl", "{\"id\":\"a\",\"embedding\":[1,0]}\nnot json\n");
  EXPECT_EQ(Run("relevance --pool " + Path("bad.jsonl") + " --ft " +
                Path("bad.jsonl") + " --out " + Path("q.jsonl")),
            2);
  EXPECT_NE(Slurp("stderr.txt").find("line 2"), std::string::npos);
  EXPECT_EQ(Run("frobnicate"), 2);
  EXPECT_EQ(Run(""), 2);
}

TEST_F(CliTest, OracleMatchesLibraryAndRejectsLargePools) {
  std::mt19937_64 rng(75);
  Save("pool.jsonl", testing::RandomEmbeddings(10, 12, rng, "p"));
  Save("ft.jsonl", testing::RandomEmbeddings(6, 12, rng, "f"));
  ASSERT_EQ(Run("oracle --pool " + Path("pool.jsonl") + " --ft " + Path("ft.jsonl") +
                " --k 3 --out " + Path("o.json")),
            0);
  const auto doc = nlohmann::json::parse(Slurp("o.json"));
  const EmbeddingSet pool = LoadEmbeddings(Path("pool.jsonl"));
  const RelevanceScores q = ComputeRelevance(pool, LoadEmbeddings(Path("ft.jsonl")));
  const MapResult r = BruteForceMap(DenseKernel(WeightedKernelView(pool, q, 4.0)), 3);
  std::vector<std::string> ids;
  for (std::size_t i : r.subset) ids.push_back(pool.ids()[i]);
  EXPECT_EQ(doc["selected_ids"], nlohmann::json(ids));
  EXPECT_EQ(doc["log_det"].get<double>(), r.log_det);

  Save("big.jsonl", testing::RandomEmbeddings(21, 4, rng));
  EXPECT_EQ(Run("oracle --pool " + Path("big.jsonl") + " --k 2"), 2);
  EXPECT_NE(Slurp("stderr.txt").find("TooLargeForExhaustive"), std::string::npos);
}

TEST_F(CliTest, TokenStatePooling) {
  WriteText("pool.jsonl",
            "{\"id\":\"a\",\"token_states\":[[1,0],[3,0]]}\n"
            "{\"id\":\"b\",\"token_states\":[[0,1]]}\n");
  WriteText("ft.jsonl", "{\"id\":\"x\",\"embedding\":[1,0]}\n");
  ASSERT_EQ(Run("relevance --pooling mean --pool " + Path("pool.jsonl") + " --ft " +
                Path("ft.jsonl") + " --out " + Path("q.jsonl")),
            0)
      << Slurp("stderr.txt");
  EXPECT_EQ(Slurp("q.jsonl"), "{\"id\":\"a\",\"q\":1.0}\n{\"id\":\"b\",\"q\":0.0}\n");
  EXPECT_EQ(Run("relevance --pool " + Path("pool.jsonl") + " --ft " +
                Path("ft.jsonl") + " --out " + Path("q.jsonl")),
            2);
}

TEST_F(CliTest, TrainDemoQuadraticIsDeterministic) {
  WriteText("cfg.json", R"({"eta_ft": 0.01, "eta_safe": null, "max_steps": 3000, "seed": 4})");
  const std::string args = "train-demo --problem quadratic --dim 4 --config " +
                           Path("cfg.json") + " --out ";
  ASSERT_EQ(Run(args + Path("a")), 0) << Slurp("stderr.txt");
  ASSERT_EQ(Run(args + Path("b")), 0);
  for (const char* f : {"train_report.jsonl", "comparison.csv", "comparison.txt",
                        "optimum.json"}) {
    EXPECT_EQ(Slurp(std::string("a/") + f), Slurp(std::string("b/") + f)) << f;
  }
  const std::string csv = Slurp("a/comparison.csv");
  EXPECT_EQ(csv.rfind("method,final_utility_loss,final_safety_loss,feasible\n", 0), 0u);
  EXPECT_NE(csv.find("\nspag,"), std::string::npos);
  EXPECT_NE(csv.find("\nplain,"), std::string::npos);
  EXPECT_NE(csv.find("\npenalty(1),"), std::string::npos);
  // One StepReport per configured step plus the summary line.
  std::istringstream in(Slurp("a/train_report.jsonl"));
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 3001);
}

TEST_F(CliTest, TrainDemoConfigErrors) {
  WriteText("bad.json", R"({"eta_ft": -1})");
  EXPECT_EQ(Run("train-demo --config " + Path("bad.json") + " --out " + Path("o")), 2);
  WriteText("junk.json", "{");
  EXPECT_EQ(Run("train-demo --config " + Path("junk.json") + " --out " + Path("o")), 2);
  EXPECT_EQ(Run("train-demo --problem nope --out " + Path("o")), 2);
}

TEST_F(CliTest, HelpDocumentsFlagsDefaultsAndExitCodes) {
  ASSERT_EQ(Run("--help"), 0);
  EXPECT_NE(Slurp("stdout.txt").find("Exit codes"), std::string::npos);
  const std::vector<std::pair<std::string, std::vector<std::string>>> expected{
      {"relevance", {"--pool", "--ft", "--out", "--ft-cap", "--pooling", "--format"}},
      {"select", {"--pool", "--ft", "--relevance", "--beta", "[4]", "--k", "--p",
                  "0.03", "--eps", "[1e-08]", "--out"}},
      {"oracle", {"--pool", "--beta", "--k", "--out"}},
      {"train-demo", {"--problem", "--config", "--out", "[quadratic]"}}};
  for (const auto& [cmd, flags] : expected) {
    ASSERT_EQ(Run(cmd + " --help"), 0) << cmd;
    const std::string text = Slurp("stdout.txt");
    EXPECT_NE(text.find("Exit codes"), std::string::npos) << cmd;
    EXPECT_NE(text.find("  3  "), std::string::npos) << cmd;
    for (const auto& flag : flags) {
      EXPECT_NE(text.find(flag), std::string::npos) << cmd << " " << flag;
    }
  }
}

}  // namespace
}  // namespace safetune
