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

#include "nsearch/hnsw.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include "nsearch/binary_io.h"

namespace nsearch {
namespace {

constexpr std::string_view kGraphMagic = "NSGR";
constexpr std::uint32_t kGraphVersion = 1;
constexpr std::string_view kEmbeddingMagic = "NSEM";
constexpr std::uint32_t kEmbeddingVersion = 1;
constexpr std::string_view kIndexMagic = "NSIX";
constexpr std::uint32_t kIndexVersion = 1;
constexpr std::size_t kMaxLayers = 255;

// (squared distance, id); lexicographic order makes every tie deterministic.
using Candidate = std::pair<double, ItemId>;

class VisitTags {
 public:
  explicit VisitTags(std::size_t n) : tags_(n, 0) {}
  void next() {
    if (++tag_ == 0) {
      std::fill(tags_.begin(), tags_.end(), 0);
      tag_ = 1;
    }
  }
  bool visit(ItemId id) {
    if (tags_[id] == tag_) return false;
    tags_[id] = tag_;
    return true;
  }

 private:
  std::vector<std::uint32_t> tags_;
  std::uint32_t tag_ = 0;
};

// Best-first search of one layer. Returns up to `ef` candidates, closest first.
template <typename NeighborsFn>
std::vector<Candidate> l2_layer_search(const EmbeddingMatrix& x, std::span<const double> query,
                                       const std::vector<Candidate>& eps, std::size_t ef,
                                       NeighborsFn&& neighbors, VisitTags& visited) {
  visited.next();
  std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> frontier;
  std::priority_queue<Candidate> best;
  for (const auto& c : eps) {
    if (!visited.visit(c.second)) continue;
    frontier.push(c);
    best.push(c);
    if (best.size() > ef) best.pop();
  }
  while (!frontier.empty()) {
    const Candidate c = frontier.top();
    frontier.pop();
    if (best.size() >= ef && c > best.top()) break;
    for (ItemId e : neighbors(c.second)) {
      if (!visited.visit(e)) continue;
      const Candidate cand{squared_l2(x.row(e), query), e};
      if (best.size() < ef || cand < best.top()) {
        frontier.push(cand);
        best.push(cand);
        if (best.size() > ef) best.pop();
      }
    }
  }
  std::vector<Candidate> out(best.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = best.top();
    best.pop();
  }
  return out;
}

class Builder {
 public:
  Builder(const EmbeddingMatrix& x, const HnswParams& p) : x_(x), p_(p), visited_(x.rows()) {}

  HnswGraph::Layer compact(std::size_t level) const {
    HnswGraph::Layer layer;
    const std::size_t n = x_.rows();
    layer.offsets.assign(n + 1, 0);
    for (std::size_t v = 0; v < n; ++v) {
      const std::size_t deg = level < adj_.size() && v < adj_[level].size() ? adj_[level][v].size() : 0;
      layer.offsets[v + 1] = layer.offsets[v] + static_cast<std::uint32_t>(deg);
    }
    layer.neighbors.reserve(layer.offsets[n]);
    for (std::size_t v = 0; v < n; ++v) {
      if (level < adj_.size() && v < adj_[level].size()) {
        layer.neighbors.insert(layer.neighbors.end(), adj_[level][v].begin(), adj_[level][v].end());
      }
    }
    return layer;
  }

  void insert(ItemId q, std::size_t level) {
    while (adj_.size() <= level) adj_.emplace_back(x_.rows());
    if (!has_entry_) {
      entry_ = q;
      top_ = level;
      has_entry_ = true;
      return;
    }
    const auto query = x_.row(q);
    std::vector<Candidate> eps{{squared_l2(x_.row(entry_), query), entry_}};
    for (std::size_t l = top_; l > level; --l) {
      eps = search(query, eps, 1, l);
    }
    for (std::size_t l = std::min(level, top_) + 1; l-- > 0;) {
      std::vector<Candidate> found = search(query, eps, p_.ef_construction, l);
      const std::vector<Candidate> chosen = select(found, p_.M);
      auto& mine = adj_[l][q];
      for (const auto& c : chosen) mine.push_back(c.second);
      const std::size_t cap = l == 0 ? 2 * p_.M : p_.M;
      for (const auto& c : chosen) link(c.second, q, l, cap);
      eps = std::move(found);
    }
    if (level > top_) {
      top_ = level;
      entry_ = q;
    }
  }

  ItemId entry() const noexcept { return entry_; }
  std::size_t top() const noexcept { return top_; }

 private:
  std::vector<Candidate> search(std::span<const double> query, const std::vector<Candidate>& eps,
                                std::size_t ef, std::size_t level) {
    auto neighbors = [&](ItemId v) -> const std::vector<ItemId>& { return adj_[level][v]; };
    return l2_layer_search(x_, query, eps, ef, neighbors, visited_);
  }

  // `candidates` is sorted closest first.
  std::vector<Candidate> select(const std::vector<Candidate>& candidates, std::size_t m) const {
    if (!p_.heuristic || candidates.size() <= m) {
      return {candidates.begin(), candidates.begin() + std::min(m, candidates.size())};
    }
    std::vector<Candidate> kept;
    for (const auto& c : candidates) {
      if (kept.size() >= m) break;
      bool diverse = true;
      for (const auto& r : kept) {
        if (squared_l2(x_.row(c.second), x_.row(r.second)) < c.first) {
          diverse = false;
          break;
        }
      }
      if (diverse) kept.push_back(c);
    }
    return kept;
  }

  void link(ItemId from, ItemId to, std::size_t level, std::size_t cap) {
    auto& list = adj_[level][from];
    if (list.size() < cap) {
      list.push_back(to);
      return;
    }
    std::vector<Candidate> cands;
    cands.reserve(list.size() + 1);
    const auto base = x_.row(from);
    for (ItemId e : list) cands.push_back({squared_l2(x_.row(e), base), e});
    cands.push_back({squared_l2(x_.row(to), base), to});
    std::sort(cands.begin(), cands.end());
    const auto kept = select(cands, cap);
    list.clear();
    for (const auto& c : kept) list.push_back(c.second);
  }

  const EmbeddingMatrix& x_;
  const HnswParams& p_;
  VisitTags visited_;
  std::vector<std::vector<std::vector<ItemId>>> adj_;
  ItemId entry_ = 0;
  std::size_t top_ = 0;
  bool has_entry_ = false;
};

}  // namespace

std::size_t level_for_uniform(double r, double mL) {
  if (!(r > 0.0 && r <= 1.0)) throw ContractViolation("level_for_uniform: r must be in (0, 1]");
  if (!(mL > 0.0)) throw ContractViolation("level_for_uniform: mL must be > 0");
  const double level = std::floor(-std::log(r) * mL);
  return level <= 0.0 ? 0 : static_cast<std::size_t>(level);
}

std::size_t assign_level(Rng& rng, double mL) { return level_for_uniform(rng.uniform01_open_low(), mL); }

std::vector<ItemId> HnswGraph::nodes_at_level(std::size_t level) const {
  std::vector<ItemId> out;
  for (std::size_t v = 0; v < levels_.size(); ++v) {
    if (levels_[v] >= level) out.push_back(static_cast<ItemId>(v));
  }
  return out;
}

std::size_t HnswGraph::reachable_from_entry(std::size_t level) const {
  if (levels_.empty() || level >= layers_.size()) return 0;
  std::vector<bool> seen(levels_.size(), false);
  std::vector<ItemId> stack{entry_};
  seen[entry_] = true;
  std::size_t count = 0;
  while (!stack.empty()) {
    const ItemId v = stack.back();
    stack.pop_back();
    ++count;
    for (ItemId e : neighbors(v, level)) {
      if (!seen[e]) {
        seen[e] = true;
        stack.push_back(e);
      }
    }
  }
  return count;
}

bool HnswGraph::is_connected(std::size_t level) const {
  return reachable_from_entry(level) == nodes_at_level(level).size();
}

HnswGraph build_index(const EmbeddingMatrix& embeddings, const HnswParams& params) {
  if (embeddings.rows() == 0) throw ContractViolation("build_index: empty embedding matrix");
  if (embeddings.cols() == 0) throw ContractViolation("build_index: zero-dimensional embeddings");
  if (params.M < 2) throw ContractViolation("build_index: M must be >= 2");
  if (params.max_layers == 0 || params.max_layers > kMaxLayers) {
    throw ContractViolation("build_index: max_layers must be in [1, 255]");
  }
  if (!embeddings.all_finite()) throw ContractViolation("build_index: non-finite embedding entries");

  HnswGraph g;
  g.dim_ = embeddings.cols();
  g.M_ = params.M;
  g.ef_construction_ = std::max<std::size_t>(params.ef_construction, 1);
  g.max_layers_ = params.max_layers;
  g.heuristic_ = params.heuristic;
  g.mL_ = 1.0 / std::log(static_cast<double>(params.M));

  HnswParams effective = params;
  effective.ef_construction = g.ef_construction_;
  Rng rng(derive_seed(params.seed, "hnsw-levels"));
  Builder builder(embeddings, effective);
  g.levels_.resize(embeddings.rows());
  for (std::size_t v = 0; v < embeddings.rows(); ++v) {
    const std::size_t level = std::min(assign_level(rng, g.mL_), params.max_layers - 1);
    g.levels_[v] = static_cast<std::uint8_t>(level);
    builder.insert(static_cast<ItemId>(v), level);
  }
  g.entry_ = builder.entry();
  for (std::size_t l = 0; l <= builder.top(); ++l) g.layers_.push_back(builder.compact(l));
  return g;
}

std::vector<Neighbor> knn_l2_bruteforce(const EmbeddingMatrix& embeddings,
                                        std::span<const double> query, std::size_t k) {
  if (k > embeddings.rows()) throw ContractViolation("knn_l2_bruteforce: k exceeds |V|");
  if (query.size() != embeddings.cols()) throw ShapeError("knn_l2_bruteforce: query width");
  std::vector<Candidate> all(embeddings.rows());
  for (std::size_t v = 0; v < embeddings.rows(); ++v) {
    all[v] = {squared_l2(embeddings.row(v), query), static_cast<ItemId>(v)};
  }
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
  std::vector<Neighbor> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = {all[i].second, std::sqrt(all[i].first)};
  return out;
}

std::vector<Neighbor> search_l2(const HnswGraph& graph, const EmbeddingMatrix& embeddings,
                                std::span<const double> query, std::size_t k, std::size_t ef) {
  if (graph.size() != embeddings.rows()) throw ShapeError("search_l2: graph/embedding size mismatch");
  if (query.size() != embeddings.cols()) throw ShapeError("search_l2: query width");
  VisitTags visited(graph.size());
  const ItemId entry = graph.entry_point();
  std::vector<Candidate> eps{{squared_l2(embeddings.row(entry), query), entry}};
  for (std::size_t l = graph.top_level(); l > 0; --l) {
    auto neighbors = [&](ItemId v) { return graph.neighbors(v, l); };
    eps = l2_layer_search(embeddings, query, eps, 1, neighbors, visited);
  }
  auto neighbors = [&](ItemId v) { return graph.neighbors(v, 0); };
  const auto found = l2_layer_search(embeddings, query, eps, std::max(ef, k), neighbors, visited);
  std::vector<Neighbor> out;
  for (std::size_t i = 0; i < std::min(k, found.size()); ++i) {
    out.push_back({found[i].second, std::sqrt(found[i].first)});
  }
  return out;
}

std::vector<std::uint8_t> serialize_graph(const HnswGraph& g) {
  ByteWriter w;
  w.bytes(kGraphMagic);
  w.u32(kGraphVersion);
  w.u64(g.size());
  w.u32(static_cast<std::uint32_t>(g.dim()));
  w.u32(static_cast<std::uint32_t>(g.num_layers()));
  w.u32(static_cast<std::uint32_t>(g.M()));
  w.u32(static_cast<std::uint32_t>(g.ef_construction()));
  w.u32(static_cast<std::uint32_t>(g.max_layers()));
  w.u8(g.heuristic() ? 1 : 0);
  w.f64(g.mL());
  w.u32(g.entry_point());
  for (std::size_t v = 0; v < g.size(); ++v) w.u8(static_cast<std::uint8_t>(g.node_level(static_cast<ItemId>(v))));
  for (std::size_t l = 0; l < g.num_layers(); ++l) {
    const auto& layer = g.layer(l);
    for (auto o : layer.offsets) w.u32(o);
    for (auto id : layer.neighbors) w.u32(id);
  }
  return std::move(w).take();
}

HnswGraph deserialize_graph(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  expect_header(in, kGraphMagic, kGraphVersion, "graph");
  HnswGraph g;
  const std::uint64_t n = in.u64();
  g.dim_ = in.u32();
  const std::uint32_t n_layers = in.u32();
  g.M_ = in.u32();
  g.ef_construction_ = in.u32();
  g.max_layers_ = in.u32();
  const auto heuristic = in.u8();
  g.mL_ = in.f64();
  g.entry_ = in.u32();
  if (n == 0 || n > std::numeric_limits<ItemId>::max()) throw RangeError("graph: bad node count");
  if (n_layers == 0 || n_layers > kMaxLayers || n_layers > g.max_layers_) {
    throw RangeError("graph: bad layer count");
  }
  if (g.M_ < 2 || g.dim_ == 0 || heuristic > 1) throw RangeError("graph: bad build parameters");
  if (g.entry_ >= n) throw RangeError("graph: entry point out of range");
  g.heuristic_ = heuristic == 1;

  in.require(n);
  g.levels_.resize(n);
  std::size_t top = 0;
  for (auto& lv : g.levels_) {
    lv = in.u8();
    if (lv >= n_layers) throw RangeError("graph: node level exceeds layer count");
    top = std::max<std::size_t>(top, lv);
  }
  if (top + 1 != n_layers) throw RangeError("graph: layer count disagrees with node levels");
  if (g.levels_[g.entry_] != top) throw RangeError("graph: entry point is not on the top layer");

  g.layers_.resize(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    auto& layer = g.layers_[l];
    in.require((n + 1) * 4);
    layer.offsets.resize(n + 1);
    for (auto& o : layer.offsets) o = in.u32();
    if (layer.offsets[0] != 0) throw RangeError("graph: first offset must be 0");
    const std::size_t cap = g.max_degree(l);
    for (std::size_t v = 0; v < n; ++v) {
      if (layer.offsets[v + 1] < layer.offsets[v]) throw RangeError("graph: offsets not monotone");
      const std::size_t deg = layer.offsets[v + 1] - layer.offsets[v];
      if (deg > cap) throw RangeError("graph: degree exceeds cap");
      if (deg > 0 && g.levels_[v] < l) throw RangeError("graph: edges on a node absent from layer");
    }
    const std::uint64_t total = layer.offsets[n];
    if (total > in.remaining() / 4) throw LengthError("graph: neighbor count exceeds payload");
    layer.neighbors.resize(total);
    for (auto& id : layer.neighbors) id = in.u32();
    for (std::size_t v = 0; v < n; ++v) {
      for (std::uint32_t i = layer.offsets[v]; i < layer.offsets[v + 1]; ++i) {
        const ItemId e = layer.neighbors[i];
        if (e >= n) throw RangeError("graph: neighbor id out of range");
        if (e == v) throw RangeError("graph: self-loop");
        if (g.levels_[e] < l) throw RangeError("graph: neighbor absent from layer");
      }
      std::vector<ItemId> sorted(layer.neighbors.begin() + layer.offsets[v],
                                 layer.neighbors.begin() + layer.offsets[v + 1]);
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw RangeError("graph: duplicate neighbor");
      }
    }
  }
  if (!in.done()) throw FormatError("graph: trailing bytes");
  return g;
}

std::vector<std::uint8_t> serialize_embeddings(const EmbeddingMatrix& m) {
  ByteWriter w;
  w.bytes(kEmbeddingMagic);
  w.u32(kEmbeddingVersion);
  w.u64(m.rows());
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (double v : m.data()) w.f64(v);
  return std::move(w).take();
}

namespace {

EmbeddingMatrix read_embeddings(ByteReader& in) {
  expect_header(in, kEmbeddingMagic, kEmbeddingVersion, "embeddings");
  const std::uint64_t rows = in.u64();
  const std::uint32_t cols = in.u32();
  if (cols == 0 && rows != 0) throw RangeError("embeddings: zero width");
  if (cols != 0 && rows > in.remaining() / 8 / cols) throw LengthError("embeddings: truncated");
  std::vector<double> data(rows * cols);
  for (auto& v : data) v = in.f64();
  return EmbeddingMatrix(rows, cols, std::move(data));
}

}  // namespace

EmbeddingMatrix deserialize_embeddings(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  auto m = read_embeddings(in);
  if (!in.done()) throw FormatError("embeddings: trailing bytes");
  return m;
}

void save_embeddings(const EmbeddingMatrix& embeddings, const std::filesystem::path& path) {
  write_file(path, serialize_embeddings(embeddings));
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  return deserialize_embeddings(read_file(path));
}

std::vector<std::uint8_t> serialize_index(const IndexContainer& index) {
  if (index.graph.size() != index.embeddings.rows() || index.graph.dim() != index.embeddings.cols()) {
    throw ShapeError("serialize_index: graph and embeddings disagree");
  }
  const auto graph = serialize_graph(index.graph);
  const auto embs = serialize_embeddings(index.embeddings);
  ByteWriter w;
  w.bytes(kIndexMagic);
  w.u32(kIndexVersion);
  w.u64(graph.size());
  w.bytes({reinterpret_cast<const char*>(graph.data()), graph.size()});
  w.u64(embs.size());
  w.bytes({reinterpret_cast<const char*>(embs.data()), embs.size()});
  return std::move(w).take();
}

IndexContainer deserialize_index(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  expect_header(in, kIndexMagic, kIndexVersion, "index");
  IndexContainer index;
  const std::uint64_t graph_len = in.u64();
  in.require(graph_len);
  index.graph = deserialize_graph(bytes.subspan(in.position(), graph_len));
  in.bytes(graph_len);
  const std::uint64_t emb_len = in.u64();
  in.require(emb_len);
  index.embeddings = deserialize_embeddings(bytes.subspan(in.position(), emb_len));
  in.bytes(emb_len);
  if (!in.done()) throw FormatError("index: trailing bytes");
  if (index.graph.size() != index.embeddings.rows() || index.graph.dim() != index.embeddings.cols()) {
    throw RangeError("index: graph and embeddings disagree");
  }
  return index;
}

void save_index(const IndexContainer& index, const std::filesystem::path& path) {
  write_file(path, serialize_index(index));
}

IndexContainer load_index(const std::filesystem::path& path) {
  return deserialize_index(read_file(path));
}

}  // namespace nsearch
