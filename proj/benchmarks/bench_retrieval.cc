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

#include <benchmark/benchmark.h>

#include <vector>

#include "nsearch/corpus.h"
#include "nsearch/eval.h"
#include "nsearch/hnsw.h"
#include "nsearch/retrieval.h"
#include "nsearch/rng.h"
#include "nsearch/scorer.h"
#include "nsearch/trainer.h"

namespace nsearch {
namespace {

struct Setup {
  Setup() : ds(split_leave_middle(generate_synthetic(500, 2000, 16, 30, 1), 100, 1)),
            scorer(Scorer::create(make_scorer_config(ds, Architecture::kMlpAttention), 2)),
            embs(scorer.item_embeddings()) {
    HnswParams hp;
    hp.M = 8;
    hp.seed = 3;
    graph = build_index(embs, hp);
    for (const auto& q : make_eval_queries(ds, ds.splits.test)) contexts.push_back(scorer.user_context(q.context));
  }
  Dataset ds;
  Scorer scorer;
  EmbeddingMatrix embs;
  HnswGraph graph;
  std::vector<UserContext> contexts;
};

const Setup& setup() {
  static const Setup s;
  return s;
}

void BM_BuildIndex(benchmark::State& state) {
  Rng rng(4);
  EmbeddingMatrix pts(static_cast<std::size_t>(state.range(0)), 16);
  for (double& x : pts.data()) x = rng.normal();
  HnswParams hp;
  hp.M = 16;
  for (auto _ : state) benchmark::DoNotOptimize(build_index(pts, hp));
}
BENCHMARK(BM_BuildIndex)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

void BM_BeamSearch(benchmark::State& state) {
  const Setup& s = setup();
  RetrievalParams p = RetrievalParams::desk_scale();
  p.ef[0] = static_cast<std::size_t>(state.range(0));
  std::size_t i = 0, scored = 0;
  for (auto _ : state) {
    const auto r = knn_search(s.scorer, s.graph, s.embs, s.contexts[i++ % s.contexts.size()], p);
    scored += r.items_scored;
  }
  state.counters["items_scored"] = benchmark::Counter(static_cast<double>(scored), benchmark::Counter::kAvgIterations);
}
BENCHMARK(BM_BeamSearch)->Arg(10)->Arg(40)->Arg(160)->Unit(benchmark::kMicrosecond);

void BM_HnswBaseline(benchmark::State& state) {
  const Setup& s = setup();
  std::size_t i = 0, scored = 0;
  for (auto _ : state) {
    const auto r = hnsw_retrieval_baseline(s.scorer, s.graph, s.embs, s.contexts[i++ % s.contexts.size()],
                                           static_cast<std::size_t>(state.range(0)), 10);
    scored += r.items_scored;
  }
  state.counters["items_scored"] = benchmark::Counter(static_cast<double>(scored), benchmark::Counter::kAvgIterations);
}
BENCHMARK(BM_HnswBaseline)->Arg(10)->Arg(40)->Arg(160)->Unit(benchmark::kMicrosecond);

void BM_BruteForce(benchmark::State& state) {
  const Setup& s = setup();
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(brute_force_topk(s.scorer, s.embs, s.contexts[i++ % s.contexts.size()], 10));
  }
}
BENCHMARK(BM_BruteForce)->Unit(benchmark::kMicrosecond);

}  // namespace
}  // namespace nsearch

BENCHMARK_MAIN();
