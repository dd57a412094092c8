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

#include "nsearch/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <unordered_set>

#include "nsearch/rng.h"

namespace nsearch {

std::vector<ScoredItem> brute_force_topk(const Similarity& similarity,
                                         const EmbeddingMatrix& embs, const UserContext& user,
                                         std::size_t m) {
  if (m > embs.rows()) throw ContractViolation("brute_force_topk: M exceeds |V|");
  std::vector<double> logits(embs.rows());
  similarity.logits(user, embs.view(), logits);
  std::vector<ScoredItem> all(embs.rows());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = {static_cast<ItemId>(i), logits[i]};
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(m), all.end(),
                    ranks_before);
  all.resize(m);
  return all;
}

std::vector<ItemId> ids_of(std::span<const ScoredItem> items) {
  std::vector<ItemId> out(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) out[i] = items[i].id;
  return out;
}

namespace {

std::size_t intersection_size(std::span<const ItemId> a, std::span<const ItemId> b) {
  std::unordered_set<ItemId> sa(a.begin(), a.end());
  std::unordered_set<ItemId> sb(b.begin(), b.end());
  std::size_t n = 0;
  for (ItemId x : sb) n += sa.count(x);
  return n;
}

std::size_t distinct(std::span<const ItemId> a) {
  return std::unordered_set<ItemId>(a.begin(), a.end()).size();
}

}  // namespace

std::optional<double> recall_at_m(std::span<const ItemId> predicted,
                                  std::span<const ItemId> ground_truth) {
  const std::size_t g = distinct(ground_truth);
  if (g == 0) return std::nullopt;
  return static_cast<double>(intersection_size(predicted, ground_truth)) / static_cast<double>(g);
}

double coverage_at_m(std::span<const ItemId> retrieved, std::span<const ItemId> oracle) {
  const std::size_t b = distinct(oracle);
  if (b == 0) throw ContractViolation("coverage_at_m: empty oracle list");
  return static_cast<double>(intersection_size(retrieved, oracle)) / static_cast<double>(b);
}

PreparedQueries prepare_queries(const Scorer& scorer, const EmbeddingMatrix& embs,
                                std::span<const EvalQuery> queries, std::size_t m,
                                std::size_t threads) {
  if (queries.empty()) throw ContractViolation("evaluate: empty query set");
  PreparedQueries p;
  p.m = m;
  p.users.resize(queries.size());
  p.contexts.resize(queries.size());
  p.oracle.resize(queries.size());
  p.ground_truth.resize(queries.size());
  parallel_for(queries.size(), threads, [&](std::size_t i) {
    p.users[i] = queries[i].user_id;
    p.contexts[i] = scorer.user_context(queries[i].context);
    p.oracle[i] = ids_of(brute_force_topk(scorer, embs, p.contexts[i], m));
    p.ground_truth[i] = queries[i].ground_truth;
  });
  return p;
}

MetricsRow score_retrieved(const PreparedQueries& prepared,
                           std::span<const std::vector<ItemId>> retrieved,
                           std::span<const std::size_t> items_scored, std::size_t n_items) {
  if (retrieved.size() != prepared.size() || items_scored.size() != prepared.size()) {
    throw ShapeError("score_retrieved: one retrieved list per query required");
  }
  if (n_items == 0) throw ContractViolation("score_retrieved: empty corpus");
  MetricsRow row;
  row.m = prepared.m;
  double sum_all = 0.0, sum_ret = 0.0, sum_cov = 0.0, sum_scored = 0.0;
  for (std::size_t i = 0; i < prepared.size(); ++i) {
    const auto r_all = recall_at_m(prepared.oracle[i], prepared.ground_truth[i]);
    if (!r_all) {
      ++row.skipped_users;
      continue;
    }
    ++row.users;
    sum_all += *r_all;
    sum_ret += *recall_at_m(retrieved[i], prepared.ground_truth[i]);
    sum_cov += coverage_at_m(retrieved[i], prepared.oracle[i]);
    sum_scored += static_cast<double>(items_scored[i]);
  }
  if (row.users > 0) {
    const double n = static_cast<double>(row.users);
    row.recall_all = sum_all / n;
    row.recall_retrieval = sum_ret / n;
    row.coverage = sum_cov / n;
    row.mean_items_scored = sum_scored / n;
    row.traversed_ratio = row.mean_items_scored / static_cast<double>(n_items);
    row.recall_delta =
        row.recall_all > 0.0 ? (row.recall_all - row.recall_retrieval) / row.recall_all : 0.0;
  }
  return row;
}

MetricsRow evaluate(const Similarity& similarity, const HnswGraph& graph,
                    const EmbeddingMatrix& embs, const PreparedQueries& prepared,
                    const RetrievalRequest& request, std::size_t threads) {
  RetrievalRequest req = request;
  req.params.k = prepared.m;
  const auto reports = search_batch(similarity, graph, embs, prepared.contexts, req, threads);
  std::vector<std::vector<ItemId>> lists(reports.size());
  std::vector<std::size_t> scored(reports.size());
  double wall = 0.0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    lists[i] = reports[i].ids;
    scored[i] = reports[i].items_scored;
    wall += reports[i].wall_time_ms;
  }
  MetricsRow row = score_retrieved(prepared, lists, scored, embs.rows());
  const bool beam = req.method == RetrievalMethod::kBeam;
  row.method = beam ? "beam" : "hnsw";
  if (beam) {
    row.ef.assign(req.params.ef.begin(),
                  req.params.ef.begin() + static_cast<std::ptrdiff_t>(graph.num_layers()));
    row.steps.assign(req.params.steps.begin(),
                     req.params.steps.begin() + static_cast<std::ptrdiff_t>(graph.num_layers()));
  } else {
    row.ef.assign(graph.num_layers(), 1);
    row.ef[0] = req.params.ef[0];
  }
  row.mean_wall_time_ms = reports.empty() ? 0.0 : wall / static_cast<double>(reports.size());
  return row;
}

std::vector<SweepPoint> default_sweep_grid(std::size_t k, std::size_t max_ef0,
                                           std::size_t t0_start) {
  std::vector<SweepPoint> grid;
  std::size_t t = std::max<std::size_t>(1, t0_start);
  for (std::size_t ef = std::max<std::size_t>(1, k); ef <= max_ef0; ef *= 2, ++t) {
    grid.push_back({ef, t});
  }
  return grid;
}

std::vector<MetricsRow> sweep(const Similarity& similarity, const HnswGraph& graph,
                              const EmbeddingMatrix& embs, const PreparedQueries& prepared,
                              const RetrievalParams& base, std::span<const SweepPoint> grid,
                              bool include_baseline, std::size_t threads) {
  std::vector<MetricsRow> rows;
  std::set<std::size_t> baseline_done;
  for (const auto& point : grid) {
    RetrievalRequest req;
    req.params = base;
    req.params.ef.at(0) = point.ef0;
    req.params.steps.at(0) = point.t0;
    rows.push_back(evaluate(similarity, graph, embs, prepared, req, threads));
  }
  if (include_baseline) {
    for (const auto& point : grid) {
      if (!baseline_done.insert(point.ef0).second) continue;
      RetrievalRequest req;
      req.method = RetrievalMethod::kHnswBaseline;
      req.params = base;
      req.params.ef.at(0) = point.ef0;
      rows.push_back(evaluate(similarity, graph, embs, prepared, req, threads));
    }
  }
  return rows;
}

namespace {

std::string join_top_down(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = v.size(); i-- > 0;) {
    s += std::to_string(v[i]);
    if (i > 0) s += '/';
  }
  return s;
}

}  // namespace

std::string sweep_csv(std::span<const MetricsRow> rows) {
  std::string out =
      "method,ef,t,m,users,skipped_users,mean_items_scored,traversed_ratio,recall_all,"
      "recall_retrieval,recall_delta,coverage\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%zu,%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  r.method.c_str(), join_top_down(r.ef).c_str(), join_top_down(r.steps).c_str(),
                  r.m, r.users, r.skipped_users, r.mean_items_scored, r.traversed_ratio,
                  r.recall_all, r.recall_retrieval, r.recall_delta, r.coverage);
    out += buf;
  }
  return out;
}

std::optional<double> coverage_at_budget(std::span<const MetricsRow> curve, double items_scored) {
  if (curve.empty()) return std::nullopt;
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : curve) pts.emplace_back(r.mean_items_scored, r.coverage);
  std::sort(pts.begin(), pts.end());
  if (items_scored < pts.front().first || items_scored > pts.back().first) return std::nullopt;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const auto [x0, y0] = pts[i - 1];
    const auto [x1, y1] = pts[i];
    if (items_scored <= x1) {
      if (x1 == x0) return std::max(y0, y1);
      return y0 + (y1 - y0) * (items_scored - x0) / (x1 - x0);
    }
  }
  return pts.back().second;
}

Histogram make_histogram(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw ContractViolation("histogram: bins must be positive");
  Histogram h;
  h.counts.assign(bins, 0);
  h.samples = values.size();
  double sum = 0.0;
  for (double v : values) {
    if (!(v >= 0.0)) throw ContractViolation("histogram: values must be non-negative");
    h.max = std::max(h.max, v);
    sum += v;
  }
  h.mean = values.empty() ? 0.0 : sum / static_cast<double>(values.size());
  h.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) {
    h.edges[b] = h.max * static_cast<double>(b) / static_cast<double>(bins);
  }
  for (double v : values) {
    std::size_t b = 0;
    if (h.max > 0.0) {
      b = static_cast<std::size_t>(v / h.max * static_cast<double>(bins));
      b = std::min(b, bins - 1);
    }
    ++h.counts[b];
  }
  return h;
}

PerturbationResult perturbation_histogram(const Similarity& similarity,
                                          std::span<const UserContext> users,
                                          const EmbeddingMatrix& embs, std::size_t k,
                                          double epsilon, std::uint64_t seed, std::size_t bins) {
  if (k > embs.rows()) throw ContractViolation("perturbation_histogram: k exceeds |V|");
  if (!(epsilon >= 0.0)) throw ContractViolation("perturbation_histogram: epsilon must be >= 0");
  PerturbationResult result;
  result.values.reserve(users.size() * k);
  Rng rng(derive_seed(seed, "perturbation-histogram"));
  const std::size_t d = embs.cols();
  EmbeddingMatrix clean(k, d), shifted(k, d);
  std::vector<double> lc(k), lp(k);
  for (const auto& user : users) {
    const auto top = brute_force_topk(similarity, embs, user, k);
    for (std::size_t i = 0; i < top.size(); ++i) {
      const auto src = embs.row(top[i].id);
      auto c = clean.row(i);
      auto s = shifted.row(i);
      for (std::size_t j = 0; j < d; ++j) {
        c[j] = src[j];
        s[j] = src[j] + epsilon * rng.uniform(-1.0, 1.0);
      }
    }
    similarity.logits(user, clean.view(), lc);
    similarity.logits(user, shifted.view(), lp);
    for (std::size_t i = 0; i < top.size(); ++i) {
      result.values.push_back(std::abs(sigmoid(lp[i]) - sigmoid(lc[i])));
    }
  }
  result.histogram = make_histogram(result.values, bins);
  return result;
}

std::string histogram_csv(const Histogram& histogram) {
  std::string out = "bin_left,bin_right,count\n";
  char buf[128];
  for (std::size_t b = 0; b < histogram.counts.size(); ++b) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%zu\n", histogram.edges[b],
                  histogram.edges[b + 1], histogram.counts[b]);
    out += buf;
  }
  return out;
}

}  // namespace nsearch
