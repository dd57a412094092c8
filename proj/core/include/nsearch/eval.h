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

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nsearch/corpus.h"
#include "nsearch/hnsw.h"
#include "nsearch/matrix.h"
#include "nsearch/retrieval.h"
#include "nsearch/scorer.h"

namespace nsearch {

// Exact top-M by logit over every row of `embs`, lower id first on ties.
std::vector<ScoredItem> brute_force_topk(const Similarity& similarity,
                                         const EmbeddingMatrix& embs, const UserContext& user,
                                         std::size_t m);
std::vector<ItemId> ids_of(std::span<const ScoredItem> items);

// |P ∩ G| / |G| with set semantics. Empty G has no defined recall.
std::optional<double> recall_at_m(std::span<const ItemId> predicted,
                                  std::span<const ItemId> ground_truth);
// |R ∩ B| / |B|.
double coverage_at_m(std::span<const ItemId> retrieved, std::span<const ItemId> oracle);

struct MetricsRow {
  std::string method;
  std::vector<std::size_t> ef;     // by layer
  std::vector<std::size_t> steps;  // by layer; empty for the baseline
  std::size_t m = 0;
  std::size_t users = 0;
  std::size_t skipped_users = 0;  // empty ground truth
  double mean_items_scored = 0.0;
  double traversed_ratio = 0.0;
  double recall_all = 0.0;
  double recall_retrieval = 0.0;
  double recall_delta = 0.0;
  double coverage = 0.0;
  double mean_wall_time_ms = 0.0;
};

// Contexts, oracle lists and ground truth for a fixed query set, computed
// once and shared by every point of a sweep.
struct PreparedQueries {
  std::size_t m = 0;
  std::vector<UserId> users;
  std::vector<UserContext> contexts;
  std::vector<std::vector<ItemId>> oracle;
  std::vector<std::vector<ItemId>> ground_truth;

  std::size_t size() const noexcept { return contexts.size(); }
};

PreparedQueries prepare_queries(const Scorer& scorer, const EmbeddingMatrix& embs,
                                std::span<const EvalQuery> queries, std::size_t m,
                                std::size_t threads = 1);

// Aggregates per-user metrics for retrieved lists R_u against the prepared
// oracle and ground truth. Means are uniform over users; recall_delta comes
// from the aggregate recalls.
MetricsRow score_retrieved(const PreparedQueries& prepared,
                           std::span<const std::vector<ItemId>> retrieved,
                           std::span<const std::size_t> items_scored, std::size_t n_items);

// Runs retrieval for every prepared query with K = M and aggregates.
MetricsRow evaluate(const Similarity& similarity, const HnswGraph& graph,
                    const EmbeddingMatrix& embs, const PreparedQueries& prepared,
                    const RetrievalRequest& request, std::size_t threads = 1);

struct SweepPoint {
  std::size_t ef0 = 0;
  std::size_t t0 = 0;
};

// ef_0 doubling from `base.k` up to `max_ef0`, with T_0 growing by one per
// doubling; other layers keep their base settings.
std::vector<SweepPoint> default_sweep_grid(std::size_t k, std::size_t max_ef0,
                                           std::size_t t0_start = 1);

// One row per grid point and method. Baseline rows ignore T_0 and are emitted
// once per distinct ef_0.
std::vector<MetricsRow> sweep(const Similarity& similarity, const HnswGraph& graph,
                              const EmbeddingMatrix& embs, const PreparedQueries& prepared,
                              const RetrievalParams& base, std::span<const SweepPoint> grid,
                              bool include_baseline = true, std::size_t threads = 1);

// Header: method,ef,t,m,users,skipped_users,mean_items_scored,traversed_ratio,
// recall_all,recall_retrieval,recall_delta,coverage. ef and t are listed from
// the top layer down, separated by '/'.
std::string sweep_csv(std::span<const MetricsRow> rows);

// Piecewise-linear coverage at a given mean items_scored along one method's
// curve. nullopt outside the curve's budget range.
std::optional<double> coverage_at_budget(std::span<const MetricsRow> curve, double items_scored);

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts;
  std::size_t samples = 0;
  double mean = 0.0;
  double max = 0.0;
};

// Uniform bins over [0, max(values)]. When every value is zero all mass lands
// in the first bin.
Histogram make_histogram(std::span<const double> values, std::size_t bins = 50);

struct PerturbationResult {
  Histogram histogram;
  std::vector<double> values;  // |Δp| per (user, item), user-major
};

// For each user, perturbs every brute-force top-k item by ε·U(−1, 1)^d and
// records the absolute change in probability.
PerturbationResult perturbation_histogram(const Similarity& similarity,
                                          std::span<const UserContext> users,
                                          const EmbeddingMatrix& embs, std::size_t k,
                                          double epsilon, std::uint64_t seed,
                                          std::size_t bins = 50);

// Header: bin_left,bin_right,count.
std::string histogram_csv(const Histogram& histogram);

}  // namespace nsearch
