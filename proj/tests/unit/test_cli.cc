// Copyright 2026 The nsearch Authors
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

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.h"
#include "nsearch/binary_io.h"
#include "nsearch/config.h"
#include "unit/test_util.h"

namespace nsearch::cli {
namespace {

using nsearch::testing::TempDir;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Cli, GenDataIsDeterministic) {
  TempDir a, b;
  for (auto* dir : {&a, &b}) {
    const auto r = invoke({"--seed", "7", "--out-dir", dir->path().string(), "gen-data", "--users",
                           "500", "--items", "2000"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
  }
  const std::string first = slurp(a / "dataset.bin");
  EXPECT_FALSE(first.empty());
  EXPECT_EQ(first, slurp(b / "dataset.bin"));

  TempDir c;
  ASSERT_EQ(invoke({"--seed", "8", "--out-dir", c.path().string(), "gen-data", "--users", "500",
                    "--items", "2000"})
                .code,
            kExitOk);
  EXPECT_NE(first, slurp(c / "dataset.bin"));
}

TEST(Cli, MissingArtifactNamesTheFile) {
  TempDir dir;
  const auto r = invoke({"--out-dir", dir.path().string(), "eval"});
  EXPECT_EQ(r.code, kExitMissingArtifact);
  EXPECT_NE(r.err.find("checkpoint"), std::string::npos) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);

  const auto bi = invoke({"--out-dir", dir.path().string(), "build-index"});
  EXPECT_EQ(bi.code, kExitMissingArtifact);
  EXPECT_NE(bi.err.find("embeddings"), std::string::npos);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(invoke({"gen-data", "--no-such-flag", "1"}).code, kExitUsage);
  EXPECT_EQ(invoke({}).code, kExitUsage);
  EXPECT_EQ(invoke({"frobnicate"}).code, kExitUsage);
}

TEST(Cli, BadValuesFail) {
  TempDir dir;
  const auto r = invoke({"--out-dir", dir.path().string(), "gen-data", "--users", "abc"});
  EXPECT_EQ(r.code, kExitFailure);
  EXPECT_NE(r.err.find("users"), std::string::npos) << r.err;
}

TEST(Cli, ConfigFileAndFlagPrecedence) {
  TempDir dir;
  const auto cfg = dir / "run.conf";
  write_text_file(cfg, "users = 120\nitems = 300\nseq-len = 12\nseed = 3\n");
  const auto r1 = invoke({"--config", cfg.string(), "--out-dir", dir.path().string(), "gen-data"});
  ASSERT_EQ(r1.code, kExitOk) << r1.err;
  const auto m1 = KeyValueConfig::parse(slurp(dir / "gen-data.manifest"));
  EXPECT_EQ(*m1.get("param.users"), "120");
  EXPECT_EQ(*m1.get("param.seq_len"), "12");
  EXPECT_EQ(*m1.get("seed"), "3");
  EXPECT_EQ(*m1.get("tool_version"), kToolVersion);

  const auto r2 = invoke({"--config", cfg.string(), "--seed", "4", "--out-dir",
                          dir.path().string(), "gen-data", "--users", "150"});
  ASSERT_EQ(r2.code, kExitOk) << r2.err;
  const auto m2 = KeyValueConfig::parse(slurp(dir / "gen-data.manifest"));
  EXPECT_EQ(*m2.get("param.users"), "150");
  EXPECT_EQ(*m2.get("param.items"), "300");
  EXPECT_EQ(*m2.get("seed"), "4");
}

TEST(Cli, FullPipeline) {
  TempDir dir;
  const std::string d = dir.path().string();
  auto step = [&](std::vector<std::string> args) {
    args.insert(args.begin(), {"--seed", "5", "--out-dir", d});
    const auto r = invoke(args);
    EXPECT_EQ(r.code, kExitOk) << args[4] << ": " << r.err;
    return r;
  };
  step({"gen-data", "--users", "120", "--items", "400", "--seq-len", "12", "--eval-users", "40"});
  step({"train", "--epochs", "1", "--arch", "two-sided"});
  step({"extract-embeddings"});
  step({"build-index", "--hnsw-m", "8"});
  step({"search", "--users", "0,1", "--k", "5"});
  step({"eval", "--method", "hnsw", "--ef", "1,1,20"});
  step({"sweep", "--grid", "10:1,20:2"});
  step({"perturb-hist", "--epsilon", "0.05", "--bins", "10"});

  const std::string sweep = slurp(dir / "sweep.csv");
  EXPECT_EQ(sweep.substr(0, sweep.find('\n')),
            "method,ef,t,m,users,skipped_users,mean_items_scored,traversed_ratio,recall_all,"
            "recall_retrieval,recall_delta,coverage");
  EXPECT_EQ(std::count(sweep.begin(), sweep.end(), '\n'), 5);
  const std::string results = slurp(dir / "results.csv");
  EXPECT_EQ(std::count(results.begin(), results.end(), '\n'), 11);
  EXPECT_EQ(slurp(dir / "histogram.csv").substr(0, 25), "bin_left,bin_right,count\n");
  EXPECT_FALSE(slurp(dir / "loss_trace.csv").empty());
  for (const char* name : {"gen-data", "train", "extract-embeddings", "build-index", "search", "eval",
                           "sweep", "perturb-hist"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / (std::string(name) + ".manifest"))) << name;
  }
  const auto manifest = KeyValueConfig::parse(slurp(dir / "sweep.manifest"));
  EXPECT_EQ(*manifest.get("input.index"), (dir / "index.bin").string());
}

}  // namespace
}  // namespace nsearch::cli
