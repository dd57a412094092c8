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
#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "nsearch/hnsw.h"
#include "nsearch/rng.h"

namespace nsearch {
namespace {

EmbeddingMatrix gaussian_points(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingMatrix m(n, d);
  for (auto& v : m.data()) v = rng.normal();
  return m;
}

HnswParams params(std::size_t M, std::size_t efc, std::uint64_t seed = 1) {
  HnswParams p;
  p.M = M;
  p.ef_construction = efc;
  p.seed = seed;
  return p;
}

TEST(Levels, BoundaryAndFormula) {
  EXPECT_EQ(level_for_uniform(1.0, 0.7), 0u);
  EXPECT_EQ(level_for_uniform(std::exp(-2.0), 1.0), 2u);
  EXPECT_EQ(level_for_uniform(std::exp(-2.5), 1.0), 2u);
  EXPECT_THROW(level_for_uniform(0.0, 1.0), ContractViolation);
  EXPECT_THROW(level_for_uniform(0.5, 0.0), ContractViolation);
}

TEST(Levels, GeometricTailWithinThreeSigma) {
  for (double M : {4.0, 10.0, 32.0}) {
    const double mL = 1.0 / std::log(M);
    Rng rng(derive_seed(5, "levels"));
    const int n = 100000;
    int above = 0;
    for (int i = 0; i < n; ++i) above += assign_level(rng, mL) >= 1;
    const double p = std::exp(-1.0 / mL);
    const double sigma = std::sqrt(p * (1 - p) / n);
    EXPECT_NEAR(static_cast<double>(above) / n, p, 3 * sigma) << "M=" << M;
  }
}

void expect_structural_invariants(const HnswGraph& g) {
  ASSERT_GE(g.num_layers(), 1u);
  EXPECT_EQ(g.node_level(g.entry_point()), g.top_level());
  for (std::size_t l = 0; l < g.num_layers(); ++l) {
    std::size_t at_level = 0;
    for (ItemId v = 0; v < g.size(); ++v) {
      const auto nb = g.neighbors(v, l);
      if (g.node_level(v) < l) {
        EXPECT_TRUE(nb.empty());
        continue;
      }
      ++at_level;
      EXPECT_LE(nb.size(), g.max_degree(l));
      std::set<ItemId> uniq(nb.begin(), nb.end());
      EXPECT_EQ(uniq.size(), nb.size()) << "duplicate neighbor";
      for (ItemId e : nb) {
        EXPECT_NE(e, v);
        EXPECT_GE(g.node_level(e), l) << "neighbor missing from layer";
      }
    }
    EXPECT_EQ(at_level, g.nodes_at_level(l).size());
    // Nesting: every node on layer l is on every layer below it.
    if (l > 0) {
      const auto lower = g.nodes_at_level(l - 1);
      for (ItemId v : g.nodes_at_level(l)) {
        EXPECT_TRUE(std::binary_search(lower.begin(), lower.end(), v));
      }
    }
  }
}

TEST(Build, InvariantsAcrossSettings) {
  const auto x = gaussian_points(600, 8, 3);
  for (std::size_t M : {2, 4, 10}) {
    for (bool heuristic : {true, false}) {
      HnswParams p = params(M, 20, M);
      p.heuristic = heuristic;
      p.max_layers = 4;
      const HnswGraph g = build_index(x, p);
      expect_structural_invariants(g);
      EXPECT_LE(g.num_layers(), 4u);
      EXPECT_EQ(g.M(), M);
      EXPECT_EQ(g.heuristic(), heuristic);
    }
  }
}

TEST(Build, LevelsClampedToMaxLayers) {
  HnswParams p = params(2, 10);
  p.max_layers = 1;
  const HnswGraph g = build_index(gaussian_points(300, 4, 1), p);
  EXPECT_EQ(g.num_layers(), 1u);
  for (ItemId v = 0; v < g.size(); ++v) EXPECT_EQ(g.node_level(v), 0u);
  expect_structural_invariants(g);
}

TEST(Build, SingleNode) {
  const HnswGraph g = build_index(gaussian_points(1, 3, 1), params(4, 10));
  EXPECT_EQ(g.size(), 1u);
  EXPECT_EQ(g.entry_point(), 0u);
  for (std::size_t l = 0; l < g.num_layers(); ++l) EXPECT_TRUE(g.neighbors(0, l).empty());
  const auto bytes = serialize_graph(g);
  EXPECT_EQ(deserialize_graph(bytes), g);
  EXPECT_EQ(serialize_graph(deserialize_graph(bytes)), bytes);
}

TEST(Build, TwoNodesAreMutualNeighbors) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const HnswGraph g = build_index(gaussian_points(2, 3, seed), params(2, 10, seed));
    const std::size_t shared = std::min(g.node_level(0), g.node_level(1));
    for (std::size_t l = 0; l <= shared; ++l) {
      ASSERT_EQ(g.neighbors(0, l).size(), 1u);
      EXPECT_EQ(g.neighbors(0, l)[0], 1u);
      ASSERT_EQ(g.neighbors(1, l).size(), 1u);
      EXPECT_EQ(g.neighbors(1, l)[0], 0u);
    }
  }
}

TEST(Build, RejectsBadInput) {
  auto x = gaussian_points(10, 3, 1);
  x.row(4)[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(build_index(x, params(4, 10)), ContractViolation);
  EXPECT_THROW(build_index(EmbeddingMatrix(), params(4, 10)), ContractViolation);
  EXPECT_THROW(build_index(gaussian_points(10, 3, 1), params(1, 10)), ContractViolation);
}

TEST(Build, DeterministicBytes) {
  const auto x = gaussian_points(500, 8, 4);
  const auto a = serialize_graph(build_index(x, params(8, 20, 3)));
  EXPECT_EQ(a, serialize_graph(build_index(x, params(8, 20, 3))));
  EXPECT_NE(a, serialize_graph(build_index(x, params(8, 20, 4))));
}

double recall_at_10(const HnswGraph& g, const EmbeddingMatrix& x, std::size_t ef, std::uint64_t seed) {
  const auto queries = gaussian_points(100, x.cols(), seed);
  double hits = 0;
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    const auto truth = knn_l2_bruteforce(x, queries.row(q), 10);
    const auto found = search_l2(g, x, queries.row(q), 10, ef);
    EXPECT_EQ(found.size(), 10u);
    std::set<ItemId> t;
    for (const auto& n : truth) t.insert(n.id);
    for (const auto& n : found) hits += t.count(n.id);
  }
  return hits / 1000.0;
}

TEST(Search, L2RecallAtEf100) {
  const auto x = gaussian_points(2000, 16, 21);
  const HnswGraph g = build_index(x, params(32, 40, 22));
  EXPECT_TRUE(g.is_connected(0));
  EXPECT_GE(recall_at_10(g, x, 100, 23), 0.95);
}

TEST(Search, SmallEfStillReturnsK) {
  const auto x = gaussian_points(300, 4, 2);
  const HnswGraph g = build_index(x, params(4, 16, 2));
  const auto found = search_l2(g, x, x.row(7), 5, 1);
  ASSERT_EQ(found.size(), 5u);
  EXPECT_EQ(found[0].id, 7u);
  for (std::size_t i = 1; i < found.size(); ++i) EXPECT_LE(found[i - 1].distance, found[i].distance);
}

TEST(BruteForce, SelfMatchFullRankingAndTies) {
  const auto x = gaussian_points(50, 4, 9);
  const auto r = knn_l2_bruteforce(x, x.row(3), 1);
  EXPECT_EQ(r[0], (Neighbor{3, 0.0}));
  const auto all = knn_l2_bruteforce(x, x.row(3), 50);
  ASSERT_EQ(all.size(), 50u);
  for (std::size_t i = 1; i < all.size(); ++i) EXPECT_LE(all[i - 1].distance, all[i].distance);
  const auto tie = EmbeddingMatrix::from_rows({{1, 0}, {-1, 0}, {0, 1}, {5, 5}});
  const std::vector<double> origin{0, 0};
  const auto t = knn_l2_bruteforce(tie, origin, 3);
  EXPECT_EQ(t[0].id, 0u);
  EXPECT_EQ(t[1].id, 1u);
  EXPECT_EQ(t[2].id, 2u);
  EXPECT_THROW(knn_l2_bruteforce(tie, origin, 5), ContractViolation);
}

TEST(Serialization, IdempotentRoundTrip) {
  const auto x = gaussian_points(400, 6, 5);
  const HnswGraph g = build_index(x, params(6, 20, 5));
  const auto bytes = serialize_graph(g);
  const HnswGraph back = deserialize_graph(bytes);
  EXPECT_EQ(back, g);
  EXPECT_EQ(serialize_graph(back), bytes);

  const IndexContainer index{g, x};
  const auto ib = serialize_index(index);
  const IndexContainer ib_back = deserialize_index(ib);
  EXPECT_EQ(ib_back.graph, g);
  EXPECT_EQ(ib_back.embeddings, x);
  EXPECT_EQ(serialize_index(ib_back), ib);
  EXPECT_EQ(deserialize_embeddings(serialize_embeddings(x)), x);
}

TEST(Serialization, BadMagicAndVersion) {
  const auto bytes = serialize_graph(build_index(gaussian_points(20, 3, 1), params(4, 10)));
  auto bad = bytes;
  bad[1] ^= 0x20;
  EXPECT_THROW(deserialize_graph(bad), FormatError);
  bad = bytes;
  bad[4] = 99;
  EXPECT_THROW(deserialize_graph(bad), FormatError);
}

TEST(Serialization, EveryTruncationIsLengthError) {
  const auto x = gaussian_points(30, 3, 1);
  const auto bytes = serialize_graph(build_index(x, params(4, 10)));
  for (std::size_t len = 0; len < bytes.size(); ++len) {
    const std::span<const std::uint8_t> prefix(bytes.data(), len);
    EXPECT_THROW(deserialize_graph(prefix), LengthError) << "length " << len;
  }
  const auto ib = serialize_index({build_index(x, params(4, 10)), x});
  for (std::size_t len = 0; len < ib.size(); len += 7) {
    EXPECT_THROW(deserialize_index(std::span<const std::uint8_t>(ib.data(), len)), FormatError);
  }
}

// Header: magic, version, |V|, d, L, M, efC, max_layers, heuristic, mL, entry.
constexpr std::size_t kGraphHeaderBytes = 4 + 4 + 8 + 4 * 5 + 1 + 8 + 4;

TEST(Serialization, CorruptOffsetIsRangeError) {
  const std::size_t n = 200;
  const auto bytes = serialize_graph(build_index(gaussian_points(n, 4, 8), params(4, 16, 8)));
  const std::size_t offsets_begin = kGraphHeaderBytes + n;
  for (std::size_t v = 1; v <= n; ++v) {
    auto bad = bytes;
    // Most significant byte of offsets[v] on the ground layer.
    bad[offsets_begin + 4 * v + 3] = 0xFF;
    EXPECT_THROW(deserialize_graph(bad), RangeError) << "offset " << v;
  }
}

TEST(Serialization, ByteFuzzNeverCrashes) {
  const std::size_t n = 60;
  const auto bytes = serialize_graph(build_index(gaussian_points(n, 3, 2), params(3, 8, 2)));
  Rng rng(99);
  std::size_t rejected = 0;
  for (std::size_t pos = 0; pos < bytes.size(); ++pos) {
    auto bad = bytes;
    bad[pos] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    try {
      const HnswGraph g = deserialize_graph(bad);
      // Accepted corruptions must still describe a well-formed graph.
      expect_structural_invariants(g);
    } catch (const FormatError&) {
      ++rejected;
    }
  }
  EXPECT_GT(rejected, bytes.size() / 2);
}

TEST(Serialization, IndexShapeMismatchRejected) {
  const auto x = gaussian_points(20, 3, 1);
  const HnswGraph g = build_index(x, params(4, 10));
  EXPECT_THROW(serialize_index({g, gaussian_points(21, 3, 1)}), ShapeError);
}

}  // namespace
}  // namespace nsearch
