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
#include <functional>
#include <span>
#include <vector>

#include "nsearch/common.h"
#include "nsearch/hnsw.h"
#include "nsearch/matrix.h"
#include "nsearch/scorer.h"

namespace nsearch {

// Per-layer beam widths and step budgets, indexed by layer (ef[0] is the
// ground layer). Defaults are the full-size setting {ef_2, ef_1, ef_0} =
// {100, 200, 400}, {T_2, T_1, T_0} = {1, 1, 3}, K = 200.
struct RetrievalParams {
  std::size_t k = 200;
  std::vector<std::size_t> ef{400, 200, 100};
  std::vector<std::size_t> steps{3, 1, 1};
  // Stop a layer as soon as its frontier is empty.
  bool early_stop = true;

  // {10, 20, 40} / {1, 1, 3}, K = 10: the full-size setting scaled to
  // corpora of a few thousand items.
  static RetrievalParams desk_scale();
  void validate(std::size_t graph_layers) const;
};

// Bit per item. Marks are set once per query; clear() costs O(marked).
class VisitedBitmap {
 public:
  explicit VisitedBitmap(std::size_t n = 0);

  std::size_t size() const noexcept { return n_; }
  std::size_t marked_count() const noexcept { return marked_.size(); }
  bool test(ItemId id) const;
  // True when `id` was not marked before. Throws ContractViolation when out
  // of range.
  bool mark(ItemId id);
  // Appends the ids that were not yet marked to `out` (deduplicated within
  // the call) and marks them.
  void mark_and_filter(std::span<const ItemId> ids, std::vector<ItemId>& out);
  std::vector<ItemId> mark_and_filter(std::span<const ItemId> ids);
  void clear();

 private:
  std::size_t n_ = 0;
  std::vector<std::uint64_t> words_;
  std::vector<ItemId> marked_;
};

struct ScoredItem {
  ItemId id = 0;
  double score = 0.0;

  bool operator==(const ScoredItem&) const = default;
};

// Higher score first, lower id on ties.
inline bool ranks_before(const ScoredItem& a, const ScoredItem& b) {
  return a.score != b.score ? a.score > b.score : a.id < b.id;
}

// Scratch state for one query: scorer evaluations are cached so that no item
// is ever scored twice, plus the per-layer visited set. Reusable across
// queries via reset().
class QuerySession {
 public:
  QuerySession(const Similarity& similarity, const UserContext& user,
               const EmbeddingMatrix& embeddings, bool audit = false);

  // Scores `ids`, invoking the similarity once on the batch of ids not seen
  // before in this query.
  void score(std::span<const ItemId> ids, std::span<double> out);
  double score(ItemId id);

  VisitedBitmap& visited() noexcept { return visited_; }
  std::size_t items_scored() const noexcept { return scored_.marked_count(); }
  std::size_t scorer_calls() const noexcept { return scorer_calls_; }
  // Per-id count of similarity evaluations; empty unless audit mode is on.
  const std::vector<std::uint32_t>& audit_counts() const noexcept { return audit_; }

  void reset(const UserContext& user);
  std::size_t universe() const noexcept { return embeddings_->rows(); }

 private:
  const Similarity* similarity_;
  const UserContext* user_;
  const EmbeddingMatrix* embeddings_;
  VisitedBitmap visited_;
  VisitedBitmap scored_;
  std::vector<double> cache_;
  std::vector<std::uint32_t> audit_;
  std::vector<ItemId> pending_;
  EmbeddingMatrix batch_;
  std::vector<double> batch_scores_;
  std::size_t scorer_calls_ = 0;
};

struct LayerResult {
  std::vector<ScoredItem> beam;  // W, best first, |W| <= ef
  std::size_t steps = 0;         // frontier expansions performed
  // Beam after each step, recorded when `trace` was requested.
  std::vector<std::vector<ScoredItem>> history;
};

// Bounded-step beam expansion on one layer: for up to `steps` rounds, the
// unvisited neighbors N of the frontier C are scored in one batch, W keeps
// the top-ef of W ∪ N and C becomes W ∩ N.
LayerResult search_layer(QuerySession& session, const HnswGraph& graph,
                         std::span<const ScoredItem> enter_points, std::size_t ef,
                         std::size_t layer, std::size_t steps, bool early_stop = true,
                         bool trace = false);

struct RetrievalReport {
  std::vector<ItemId> ids;      // top-K, best first
  std::vector<double> scores;   // logits aligned with ids
  std::size_t items_scored = 0;
  std::size_t scorer_calls = 0;
  std::vector<std::size_t> layer_steps;  // indexed by layer
  double wall_time_ms = 0.0;
  std::vector<std::uint32_t> audit_counts;
};

struct RetrievalOptions {
  // Record how many times each id reaches the similarity.
  bool audit = false;
};

// Beam retrieval: every node on the top layer is scored to pick ef_top enter
// points, then search_layer runs from the top layer down, each layer's beam
// seeding the next. Returns the top-K of the ground-layer beam.
RetrievalReport knn_search(const Similarity& similarity, const HnswGraph& graph,
                           const EmbeddingMatrix& embeddings, const UserContext& user,
                           const RetrievalParams& params, const RetrievalOptions& options = {});

// Classic HNSW traversal under the same similarity: greedy (ef = 1) descent
// from the entry point on upper layers, then an unbounded best-first search
// with dynamic list size ef_0 on the ground layer.
RetrievalReport hnsw_retrieval_baseline(const Similarity& similarity, const HnswGraph& graph,
                                        const EmbeddingMatrix& embeddings,
                                        const UserContext& user, std::size_t ef0, std::size_t k,
                                        const RetrievalOptions& options = {});

// Classic while-loop layer search under a similarity (maximizing score).
std::vector<ScoredItem> classic_search_layer(QuerySession& session, const HnswGraph& graph,
                                             std::span<const ScoredItem> enter_points,
                                             std::size_t ef, std::size_t layer);

enum class RetrievalMethod { kBeam, kHnswBaseline };

struct RetrievalRequest {
  RetrievalMethod method = RetrievalMethod::kBeam;
  RetrievalParams params;  // the baseline uses params.k and params.ef[0]
};

// Runs every query independently on up to `threads` workers. Output order
// matches `users` regardless of the thread count.
std::vector<RetrievalReport> search_batch(const Similarity& similarity, const HnswGraph& graph,
                                          const EmbeddingMatrix& embeddings,
                                          std::span<const UserContext> users,
                                          const RetrievalRequest& request, std::size_t threads = 1,
                                          const RetrievalOptions& options = {});

// Calls fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace nsearch
