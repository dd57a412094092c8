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

#include "nsearch/retrieval.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <queue>
#include <string>
#include <thread>

namespace nsearch {

RetrievalParams RetrievalParams::desk_scale() {
  RetrievalParams p;
  p.k = 10;
  p.ef = {40, 20, 10};
  p.steps = {3, 1, 1};
  return p;
}

void RetrievalParams::validate(std::size_t graph_layers) const {
  if (ef.empty() || ef.size() != steps.size()) {
    throw ConfigError("retrieval: ef and steps must have the same non-zero length");
  }
  if (graph_layers > ef.size()) {
    throw ConfigError("retrieval: graph has " + std::to_string(graph_layers) +
                      " layers but only " + std::to_string(ef.size()) + " ef/T entries");
  }
  for (std::size_t l = 0; l < ef.size(); ++l) {
    if (ef[l] == 0) throw ConfigError("retrieval: ef must be positive");
    if (steps[l] == 0) throw ConfigError("retrieval: step budget must be positive");
  }
  if (k == 0) throw ConfigError("retrieval: K must be positive");
  if (k > ef[0]) throw ConfigError("retrieval: K exceeds ef_0");
}

// ---- VisitedBitmap

VisitedBitmap::VisitedBitmap(std::size_t n) : n_(n), words_((n + 63) / 64, 0) {}

bool VisitedBitmap::test(ItemId id) const {
  if (id >= n_) throw ContractViolation("visited: id out of range");
  return (words_[id >> 6] >> (id & 63)) & 1u;
}

bool VisitedBitmap::mark(ItemId id) {
  if (id >= n_) throw ContractViolation("visited: id " + std::to_string(id) + " out of range");
  std::uint64_t& w = words_[id >> 6];
  const std::uint64_t bit = std::uint64_t{1} << (id & 63);
  if (w & bit) return false;
  w |= bit;
  marked_.push_back(id);
  return true;
}

void VisitedBitmap::mark_and_filter(std::span<const ItemId> ids, std::vector<ItemId>& out) {
  for (ItemId id : ids) {
    if (mark(id)) out.push_back(id);
  }
}

std::vector<ItemId> VisitedBitmap::mark_and_filter(std::span<const ItemId> ids) {
  std::vector<ItemId> out;
  mark_and_filter(ids, out);
  return out;
}

void VisitedBitmap::clear() {
  for (ItemId id : marked_) words_[id >> 6] = 0;
  marked_.clear();
}

// ---- QuerySession

QuerySession::QuerySession(const Similarity& similarity, const UserContext& user,
                           const EmbeddingMatrix& embeddings, bool audit)
    : similarity_(&similarity),
      user_(&user),
      embeddings_(&embeddings),
      visited_(embeddings.rows()),
      scored_(embeddings.rows()),
      cache_(embeddings.rows(), 0.0),
      batch_(0, embeddings.cols()) {
  if (similarity.dim() != embeddings.cols()) {
    throw ShapeError("retrieval: similarity dim " + std::to_string(similarity.dim()) +
                     " does not match embedding dim " + std::to_string(embeddings.cols()));
  }
  if (audit) audit_.assign(embeddings.rows(), 0);
}

void QuerySession::reset(const UserContext& user) {
  user_ = &user;
  visited_.clear();
  scored_.clear();
  if (!audit_.empty()) std::fill(audit_.begin(), audit_.end(), 0u);
  scorer_calls_ = 0;
}

void QuerySession::score(std::span<const ItemId> ids, std::span<double> out) {
  if (out.size() != ids.size()) throw ShapeError("QuerySession::score: output size mismatch");
  pending_.clear();
  scored_.mark_and_filter(ids, pending_);
  if (!pending_.empty()) {
    batch_.resize_rows(pending_.size());
    for (std::size_t i = 0; i < pending_.size(); ++i) {
      const auto src = embeddings_->row(pending_[i]);
      std::copy(src.begin(), src.end(), batch_.row(i).begin());
    }
    batch_scores_.resize(pending_.size());
    similarity_->logits(*user_, batch_.view(), batch_scores_);
    ++scorer_calls_;
    for (std::size_t i = 0; i < pending_.size(); ++i) {
      cache_[pending_[i]] = batch_scores_[i];
      if (!audit_.empty()) ++audit_[pending_[i]];
    }
  }
  for (std::size_t i = 0; i < ids.size(); ++i) out[i] = cache_[ids[i]];
}

double QuerySession::score(ItemId id) {
  double s = 0.0;
  score(std::span<const ItemId>(&id, 1), std::span<double>(&s, 1));
  return s;
}

// ---- beam search

namespace {

void check_layer(const HnswGraph& graph, std::size_t layer) {
  if (layer >= graph.num_layers()) {
    throw ContractViolation("retrieval: layer " + std::to_string(layer) + " not in graph");
  }
}

void check_enter_points(const HnswGraph& graph, std::span<const ScoredItem> eps,
                        std::size_t layer) {
  if (eps.empty()) throw ContractViolation("retrieval: empty enter-point set");
  for (const auto& e : eps) {
    if (e.id >= graph.size()) throw ContractViolation("retrieval: enter point out of range");
    if (graph.node_level(e.id) < layer) {
      throw ContractViolation("retrieval: enter point not present on layer");
    }
  }
}

void truncate_sorted(std::vector<ScoredItem>& v, std::size_t n) {
  if (v.size() > n) {
    std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n), v.end(), ranks_before);
    v.resize(n);
  } else {
    std::sort(v.begin(), v.end(), ranks_before);
  }
}

}  // namespace

LayerResult search_layer(QuerySession& session, const HnswGraph& graph,
                         std::span<const ScoredItem> enter_points, std::size_t ef,
                         std::size_t layer, std::size_t steps, bool early_stop, bool trace) {
  check_layer(graph, layer);
  check_enter_points(graph, enter_points, layer);
  if (ef == 0) throw ContractViolation("search_layer: ef must be positive");

  VisitedBitmap& visited = session.visited();
  visited.clear();
  std::vector<ItemId> frontier;
  frontier.reserve(enter_points.size());
  for (const auto& e : enter_points) {
    if (visited.mark(e.id)) frontier.push_back(e.id);
  }
  LayerResult result;
  result.beam.assign(enter_points.begin(), enter_points.end());
  // Duplicate enter points collapse to one entry.
  std::sort(result.beam.begin(), result.beam.end(), ranks_before);
  result.beam.erase(std::unique(result.beam.begin(), result.beam.end(),
                                [](const ScoredItem& a, const ScoredItem& b) { return a.id == b.id; }),
                    result.beam.end());
  truncate_sorted(result.beam, ef);

  std::vector<ItemId> fresh;
  std::vector<double> fresh_scores;
  std::vector<ScoredItem> merged;
  for (std::size_t t = 1; t <= steps; ++t) {
    fresh.clear();
    for (ItemId c : frontier) visited.mark_and_filter(graph.neighbors(c, layer), fresh);
    result.steps = t;
    frontier.clear();
    if (fresh.empty()) {
      if (trace) result.history.push_back(result.beam);
      if (early_stop) break;
      continue;
    }
    fresh_scores.resize(fresh.size());
    session.score(fresh, fresh_scores);
    merged = result.beam;
    for (std::size_t i = 0; i < fresh.size(); ++i) merged.push_back({fresh[i], fresh_scores[i]});
    truncate_sorted(merged, ef);
    result.beam.swap(merged);
    // C = W ∩ N. Elements of N are unvisited before this step, so membership
    // is decided by the position in `fresh`.
    std::sort(fresh.begin(), fresh.end());
    for (const auto& w : result.beam) {
      if (std::binary_search(fresh.begin(), fresh.end(), w.id)) frontier.push_back(w.id);
    }
    if (trace) result.history.push_back(result.beam);
    if (frontier.empty() && early_stop) break;
  }
  return result;
}

namespace {

using Clock = std::chrono::steady_clock;

void finish_report(RetrievalReport& report, const std::vector<ScoredItem>& beam, std::size_t k,
                   const QuerySession& session, bool audit, Clock::time_point start) {
  const std::size_t n = std::min(k, beam.size());
  report.ids.resize(n);
  report.scores.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    report.ids[i] = beam[i].id;
    report.scores[i] = beam[i].score;
  }
  report.items_scored = session.items_scored();
  report.scorer_calls = session.scorer_calls();
  if (audit) report.audit_counts = session.audit_counts();
  report.wall_time_ms =
      std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void check_inputs(const HnswGraph& graph, const EmbeddingMatrix& embeddings) {
  if (graph.size() == 0) throw ContractViolation("retrieval: empty graph");
  if (graph.size() != embeddings.rows()) {
    throw ShapeError("retrieval: graph has " + std::to_string(graph.size()) +
                     " nodes but embeddings have " + std::to_string(embeddings.rows()) + " rows");
  }
}

RetrievalReport run_beam(QuerySession& session, const HnswGraph& graph,
                         const RetrievalParams& params, bool audit) {
  const auto start = Clock::now();
  RetrievalReport report;
  const std::size_t top = graph.top_level();
  report.layer_steps.assign(graph.num_layers(), 0);

  const std::vector<ItemId> top_nodes = graph.nodes_at_level(top);
  std::vector<double> top_scores(top_nodes.size());
  session.score(top_nodes, top_scores);
  std::vector<ScoredItem> beam(top_nodes.size());
  for (std::size_t i = 0; i < top_nodes.size(); ++i) beam[i] = {top_nodes[i], top_scores[i]};
  truncate_sorted(beam, params.ef[top]);

  for (std::size_t l = top + 1; l-- > 0;) {
    LayerResult r = search_layer(session, graph, beam, params.ef[l], l, params.steps[l],
                                 params.early_stop);
    report.layer_steps[l] = r.steps;
    beam = std::move(r.beam);
  }
  finish_report(report, beam, params.k, session, audit, start);
  return report;
}

RetrievalReport run_baseline(QuerySession& session, const HnswGraph& graph, std::size_t ef0,
                             std::size_t k, bool audit) {
  const auto start = Clock::now();
  RetrievalReport report;
  report.layer_steps.assign(graph.num_layers(), 0);
  const ItemId ep = graph.entry_point();
  std::vector<ScoredItem> beam{{ep, session.score(ep)}};
  for (std::size_t l = graph.top_level(); l > 0; --l) {
    beam = classic_search_layer(session, graph, beam, 1, l);
  }
  beam = classic_search_layer(session, graph, beam, ef0, 0);
  finish_report(report, beam, k, session, audit, start);
  return report;
}

}  // namespace

std::vector<ScoredItem> classic_search_layer(QuerySession& session, const HnswGraph& graph,
                                             std::span<const ScoredItem> enter_points,
                                             std::size_t ef, std::size_t layer) {
  check_layer(graph, layer);
  check_enter_points(graph, enter_points, layer);
  if (ef == 0) throw ContractViolation("classic_search_layer: ef must be positive");

  // Candidates pop best first; the result heap keeps its worst on top.
  auto worse = [](const ScoredItem& a, const ScoredItem& b) { return ranks_before(b, a); };
  std::priority_queue<ScoredItem, std::vector<ScoredItem>, decltype(worse)> candidates(worse);
  std::priority_queue<ScoredItem, std::vector<ScoredItem>, decltype(&ranks_before)> best(
      &ranks_before);

  VisitedBitmap& visited = session.visited();
  visited.clear();
  for (const auto& e : enter_points) {
    if (!visited.mark(e.id)) continue;
    candidates.push(e);
    best.push(e);
    if (best.size() > ef) best.pop();
  }

  std::vector<ItemId> fresh;
  std::vector<double> scores;
  while (!candidates.empty()) {
    const ScoredItem c = candidates.top();
    if (best.size() >= ef && ranks_before(best.top(), c)) break;
    candidates.pop();
    fresh.clear();
    visited.mark_and_filter(graph.neighbors(c.id, layer), fresh);
    if (fresh.empty()) continue;
    scores.resize(fresh.size());
    session.score(fresh, scores);
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      const ScoredItem e{fresh[i], scores[i]};
      if (best.size() < ef || ranks_before(e, best.top())) {
        candidates.push(e);
        best.push(e);
        if (best.size() > ef) best.pop();
      }
    }
  }
  std::vector<ScoredItem> out;
  out.reserve(best.size());
  while (!best.empty()) {
    out.push_back(best.top());
    best.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

RetrievalReport knn_search(const Similarity& similarity, const HnswGraph& graph,
                           const EmbeddingMatrix& embeddings, const UserContext& user,
                           const RetrievalParams& params, const RetrievalOptions& options) {
  check_inputs(graph, embeddings);
  params.validate(graph.num_layers());
  QuerySession session(similarity, user, embeddings, options.audit);
  return run_beam(session, graph, params, options.audit);
}

RetrievalReport hnsw_retrieval_baseline(const Similarity& similarity, const HnswGraph& graph,
                                        const EmbeddingMatrix& embeddings,
                                        const UserContext& user, std::size_t ef0, std::size_t k,
                                        const RetrievalOptions& options) {
  check_inputs(graph, embeddings);
  if (ef0 == 0 || k == 0) throw ConfigError("baseline: ef_0 and K must be positive");
  if (k > ef0) throw ConfigError("baseline: K exceeds ef_0");
  QuerySession session(similarity, user, embeddings, options.audit);
  return run_baseline(session, graph, ef0, k, options.audit);
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::vector<RetrievalReport> search_batch(const Similarity& similarity, const HnswGraph& graph,
                                          const EmbeddingMatrix& embeddings,
                                          std::span<const UserContext> users,
                                          const RetrievalRequest& request, std::size_t threads,
                                          const RetrievalOptions& options) {
  check_inputs(graph, embeddings);
  if (request.method == RetrievalMethod::kBeam) {
    request.params.validate(graph.num_layers());
  } else if (request.params.k > request.params.ef.at(0)) {
    throw ConfigError("baseline: K exceeds ef_0");
  }
  std::vector<RetrievalReport> out(users.size());
  parallel_for(users.size(), threads, [&](std::size_t i) {
    QuerySession session(similarity, users[i], embeddings, options.audit);
    out[i] = request.method == RetrievalMethod::kBeam
                 ? run_beam(session, graph, request.params, options.audit)
                 : run_baseline(session, graph, request.params.ef[0], request.params.k,
                                options.audit);
  });
  return out;
}

}  // namespace nsearch
