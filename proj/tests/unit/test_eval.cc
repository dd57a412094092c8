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
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "nsearch/corpus.h"
#include "nsearch/eval.h"
#include "nsearch/hnsw.h"
#include "nsearch/rng.h"
#include "nsearch/scorer.h"

namespace nsearch {
namespace {

class ConstantSimilarity final : public Similarity {
 public:
  explicit ConstantSimilarity(std::size_t dim) : dim_(dim) {}
  std::size_t dim() const override { return dim_; }
  void logits(const UserContext&, MatrixView embs, std::span<double> out) const override {
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(embs.rows), 0.3);
  }

 private:
  std::size_t dim_;
};

std::vector<ItemId> range_ids(ItemId begin, ItemId end) {
  std::vector<ItemId> v(end - begin);
  std::iota(v.begin(), v.end(), begin);
  return v;
}

TEST(Recall, ContainmentDisjointAndFormula) {
  const std::vector<ItemId> p{1, 2, 3, 4, 5}, g{2, 4};
  EXPECT_EQ(recall_at_m(p, g), 1.0);
  const std::vector<ItemId> far{7, 8};
  EXPECT_EQ(recall_at_m(p, far), 0.0);
  const std::vector<ItemId> g4{1, 10, 11, 12};
  EXPECT_EQ(recall_at_m(p, g4), 0.25);
  EXPECT_FALSE(recall_at_m(p, {}).has_value());
}

TEST(Coverage, IdentityAndOverlap) {
  const auto b = range_ids(0, 10);
  EXPECT_EQ(coverage_at_m(b, b), 1.0);
  auto r = range_ids(1, 11);
  EXPECT_DOUBLE_EQ(coverage_at_m(r, b), 0.9);
  EXPECT_THROW(coverage_at_m(r, {}), ContractViolation);
}

TEST(Metrics, SetSemanticsArePermutationInvariant) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ItemId> r(10), b(10), g(3);
    for (auto* v : {&r, &b, &g}) {
      for (auto& x : *v) x = static_cast<ItemId>(rng.below(30));
    }
    auto shuffled = r;
    std::reverse(shuffled.begin(), shuffled.end());
    std::rotate(shuffled.begin(), shuffled.begin() + 3, shuffled.end());
    EXPECT_EQ(coverage_at_m(r, b), coverage_at_m(shuffled, b));
    EXPECT_EQ(recall_at_m(r, g), recall_at_m(shuffled, g));
  }
}

PreparedQueries fixture(std::vector<std::vector<ItemId>> oracle, std::vector<std::vector<ItemId>> truth) {
  PreparedQueries p;
  p.m = oracle.front().size();
  p.oracle = std::move(oracle);
  p.ground_truth = std::move(truth);
  p.contexts.resize(p.oracle.size());
  p.users.resize(p.oracle.size());
  return p;
}

TEST(Aggregate, MeanOfPerUserCoverage) {
  const auto prep = fixture({{1, 2}, {3, 4}}, {{1}, {3}});
  const std::vector<std::vector<ItemId>> retrieved{{1, 2}, {5, 6}};
  const std::vector<std::size_t> scored{10, 30};
  const MetricsRow row = score_retrieved(prep, retrieved, scored, 100);
  EXPECT_EQ(row.users, 2u);
  EXPECT_EQ(row.coverage, 0.5);
  EXPECT_EQ(row.recall_all, 1.0);
  EXPECT_EQ(row.recall_retrieval, 0.5);
  EXPECT_EQ(row.recall_delta, 0.5);
  EXPECT_EQ(row.mean_items_scored, 20.0);
  EXPECT_EQ(row.traversed_ratio, 0.2);
}

TEST(Aggregate, IdenticalUsersGiveCommonValue) {
  const auto prep = fixture({{1, 2, 3, 4}, {1, 2, 3, 4}, {1, 2, 3, 4}}, {{1, 9}, {1, 9}, {1, 9}});
  const std::vector<std::vector<ItemId>> retrieved(3, {1, 2, 3, 7});
  const std::vector<std::size_t> scored(3, 5);
  const MetricsRow row = score_retrieved(prep, retrieved, scored, 10);
  EXPECT_EQ(row.coverage, 0.75);
  EXPECT_EQ(row.recall_all, 0.5);
  EXPECT_EQ(row.recall_retrieval, 0.5);
  EXPECT_EQ(row.recall_delta, 0.0);
}

TEST(Aggregate, DeltaFromAggregateRecalls) {
  // Per-user recall_all of 0 would make a per-user delta undefined.
  const auto prep = fixture({{1, 2}, {3, 4}}, {{1}, {9}});
  const std::vector<std::vector<ItemId>> retrieved{{5, 6}, {9, 3}};
  const std::vector<std::size_t> scored{1, 1};
  const MetricsRow row = score_retrieved(prep, retrieved, scored, 10);
  EXPECT_EQ(row.recall_all, 0.5);
  EXPECT_EQ(row.recall_retrieval, 0.5);
  EXPECT_EQ(row.recall_delta, 0.0);
}

TEST(Aggregate, EmptyGroundTruthSkipped) {
  const auto prep = fixture({{1, 2}, {3, 4}}, {{1}, {}});
  const std::vector<std::vector<ItemId>> retrieved{{1, 2}, {3, 4}};
  const std::vector<std::size_t> scored{1, 1};
  const MetricsRow row = score_retrieved(prep, retrieved, scored, 10);
  EXPECT_EQ(row.users, 1u);
  EXPECT_EQ(row.skipped_users, 1u);
}

TEST(Aggregate, OracleSelfConsistency) {
  Rng rng(1);
  std::vector<std::vector<ItemId>> oracle, truth;
  for (int u = 0; u < 40; ++u) {
    std::vector<ItemId> o(10), g(1 + rng.below(4));
    for (auto& x : o) x = static_cast<ItemId>(rng.below(100));
    for (auto& x : g) x = static_cast<ItemId>(rng.below(100));
    if (u % 3 == 0) g[0] = o[0];
    oracle.push_back(o);
    truth.push_back(g);
  }
  const auto prep = fixture(oracle, truth);
  const std::vector<std::size_t> scored(40, 1);
  const MetricsRow row = score_retrieved(prep, prep.oracle, scored, 100);
  EXPECT_EQ(row.coverage, 1.0);
  EXPECT_EQ(row.recall_delta, 0.0);
  EXPECT_EQ(row.recall_all, row.recall_retrieval);
}

TEST(Aggregate, FullCoverageImpliesEqualRecalls) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ItemId> b(10), g(3);
    for (auto& x : b) x = static_cast<ItemId>(rng.below(40));
    for (auto& x : g) x = static_cast<ItemId>(rng.below(40));
    auto r = b;
    std::reverse(r.begin(), r.end());
    ASSERT_EQ(coverage_at_m(r, b), 1.0);
    EXPECT_EQ(recall_at_m(r, g), recall_at_m(b, g));
  }
}

struct TwoSidedFixture : ::testing::Test {
  TwoSidedFixture() {
    ScorerConfig c;
    c.architecture = Architecture::kTwoSided;
    c.feature_dim = 6;
    c.item_categories.assign(120, 0);
    scorer = std::make_unique<Scorer>(Scorer::create(c, 3));
    embs = scorer->item_embeddings();
  }
  std::unique_ptr<Scorer> scorer;
  EmbeddingMatrix embs;
};

TEST_F(TwoSidedFixture, BruteForceIsInnerProductRanking) {
  const std::vector<ItemId> hist{4, 9, 33};
  const UserContext u = scorer->user_context(hist);
  std::vector<double> eu(6, 0.0);
  for (auto h : hist) {
    for (std::size_t j = 0; j < 6; ++j) eu[j] += embs.row(h)[j];
  }
  std::vector<ItemId> expected = range_ids(0, 120);
  std::sort(expected.begin(), expected.end(), [&](ItemId a, ItemId b) {
    const double da = dot(eu, embs.row(a)), db = dot(eu, embs.row(b));
    return da != db ? da > db : a < b;
  });
  const auto all = brute_force_topk(*scorer, embs, u, 120);
  EXPECT_EQ(ids_of(all), expected);
  for (std::size_t i = 1; i < all.size(); ++i) EXPECT_TRUE(ranks_before(all[i - 1], all[i]));
  expected.resize(10);
  EXPECT_EQ(ids_of(brute_force_topk(*scorer, embs, u, 10)), expected);
  EXPECT_THROW(brute_force_topk(*scorer, embs, u, 121), ContractViolation);
}

TEST_F(TwoSidedFixture, ZeroEpsilonHistogramIsAllZeroBin) {
  std::vector<UserContext> users;
  for (ItemId i = 0; i < 5; ++i) users.push_back(scorer->user_context(std::vector<ItemId>{i, i + 7}));
  const auto r = perturbation_histogram(*scorer, users, embs, 10, 0.0, 1);
  EXPECT_EQ(r.histogram.samples, 50u);
  EXPECT_EQ(r.histogram.counts[0], 50u);
  EXPECT_EQ(r.histogram.mean, 0.0);
  EXPECT_EQ(r.histogram.counts.size(), 50u);

  const auto noisy = perturbation_histogram(*scorer, users, embs, 10, 0.1, 1);
  EXPECT_GT(noisy.histogram.mean, 0.0);
  EXPECT_EQ(noisy.values, perturbation_histogram(*scorer, users, embs, 10, 0.1, 1).values);
}

TEST_F(TwoSidedFixture, ConstantScorerHistogramIsAllZeroBin) {
  const ConstantSimilarity constant(6);
  const std::vector<UserContext> users(4);
  const auto r = perturbation_histogram(constant, users, embs, 7, 0.5, 2);
  EXPECT_EQ(r.histogram.counts[0], 28u);
  EXPECT_EQ(r.histogram.max, 0.0);
}

TEST(Histogram, BinsAndCsv) {
  const std::vector<double> v{0.0, 0.25, 0.5, 0.99, 1.0};
  const Histogram h = make_histogram(v, 4);
  EXPECT_EQ(h.counts, (std::vector<std::size_t>{1, 1, 1, 2}));
  EXPECT_EQ(h.edges.front(), 0.0);
  EXPECT_EQ(h.edges.back(), 1.0);
  EXPECT_DOUBLE_EQ(h.mean, 2.74 / 5);
  const std::string csv = histogram_csv(h);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "bin_left,bin_right,count");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  const std::vector<double> neg{-0.1};
  EXPECT_THROW(make_histogram(neg), ContractViolation);
}

TEST(Sweep, GridAndBudgetInterpolation) {
  const auto grid = default_sweep_grid(10, 160, 1);
  ASSERT_EQ(grid.size(), 5u);
  EXPECT_EQ(grid.front().ef0, 10u);
  EXPECT_EQ(grid.back().ef0, 160u);
  EXPECT_EQ(grid.back().t0, 5u);

  std::vector<MetricsRow> curve(3);
  curve[0].mean_items_scored = 100;
  curve[0].coverage = 0.5;
  curve[1].mean_items_scored = 300;
  curve[1].coverage = 0.9;
  curve[2].mean_items_scored = 200;
  curve[2].coverage = 0.8;
  EXPECT_DOUBLE_EQ(*coverage_at_budget(curve, 150), 0.65);
  EXPECT_DOUBLE_EQ(*coverage_at_budget(curve, 250), 0.85);
  EXPECT_DOUBLE_EQ(*coverage_at_budget(curve, 300), 0.9);
  EXPECT_FALSE(coverage_at_budget(curve, 99).has_value());
  EXPECT_FALSE(coverage_at_budget(curve, 301).has_value());
}

TEST(Sweep, RowsCsvAndMonotoneBudget) {
  const Dataset ds = split_leave_middle(generate_synthetic(200, 600, 8, 12, 5), 100, 5);
  ScorerConfig c;
  c.architecture = Architecture::kMlpAttention;
  for (const auto& it : ds.items) c.item_categories.push_back(it.category);
  c.n_categories = ds.n_categories;
  const Scorer s = Scorer::create(c, 6);
  const auto embs = s.item_embeddings();
  HnswParams hp;
  hp.M = 8;
  hp.seed = 7;
  const HnswGraph g = build_index(embs, hp);
  const auto prep = prepare_queries(s, embs, make_eval_queries(ds, ds.splits.test), 10, 2);
  EXPECT_EQ(prep.size(), 100u);
  EXPECT_EQ(prepare_queries(s, embs, make_eval_queries(ds, ds.splits.test), 10, 1).oracle, prep.oracle);

  const RetrievalParams base = RetrievalParams::desk_scale();
  const std::vector<SweepPoint> one{{20, 2}};
  EXPECT_EQ(sweep(s, g, embs, prep, base, one, false).size(), 1u);

  const std::vector<SweepPoint> grid{{10, 1}, {10, 2}, {20, 2}, {40, 3}, {80, 4}, {160, 5}};
  const auto rows = sweep(s, g, embs, prep, base, grid, true);
  ASSERT_EQ(rows.size(), 11u);
  std::vector<MetricsRow> beam, hnsw;
  for (const auto& r : rows) (r.method == "beam" ? beam : hnsw).push_back(r);
  ASSERT_EQ(beam.size(), 6u);
  ASSERT_EQ(hnsw.size(), 5u);
  for (std::size_t i = 1; i < hnsw.size(); ++i) {
    EXPECT_GE(hnsw[i].traversed_ratio, hnsw[i - 1].traversed_ratio);
  }
  for (std::size_t i = 2; i < beam.size(); ++i) {
    EXPECT_GE(beam[i].traversed_ratio, beam[i - 1].traversed_ratio);
  }
  EXPECT_GE(beam.back().coverage, beam.front().coverage);
  EXPECT_GE(hnsw.back().coverage, hnsw.front().coverage);
  EXPECT_EQ(beam.front().ef, (std::vector<std::size_t>{10, 20, 10}));

  std::size_t violations = 0;
  for (const auto& r : rows) violations += r.recall_retrieval > r.recall_all;
  std::cout << "recall_retrieval > recall_all on " << violations << " of " << rows.size()
            << " sweep rows\n";
  RecordProperty("recall_violations", static_cast<int>(violations));

  const std::string csv = sweep_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "method,ef,t,m,users,skipped_users,mean_items_scored,traversed_ratio,recall_all,"
            "recall_retrieval,recall_delta,coverage");
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), rows.size() + 1);
  EXPECT_NE(csv.find("\nbeam,10/20/10,1/1/1,10,"), std::string::npos);
}

}  // namespace
}  // namespace nsearch
