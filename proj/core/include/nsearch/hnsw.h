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
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "nsearch/common.h"
#include "nsearch/matrix.h"
#include "nsearch/rng.h"

namespace nsearch {

struct HnswParams {
  std::size_t M = 32;
  std::size_t ef_construction = 40;
  // Assigned levels are clamped to max_layers - 1.
  std::size_t max_layers = 3;
  // Distance-diverse neighbor selection; plain closest-M when false.
  bool heuristic = true;
  std::uint64_t seed = 0;
};

// floor(-ln(r) * mL) for r in (0, 1].
std::size_t level_for_uniform(double r, double mL);
std::size_t assign_level(Rng& rng, double mL);

// Immutable multi-layer proximity graph. Each layer is stored as a ragged
// array: offsets[|V| + 1] into a flat neighbor list. Nodes absent from a
// layer have an empty range.
class HnswGraph {
 public:
  struct Layer {
    std::vector<std::uint32_t> offsets;
    std::vector<ItemId> neighbors;
    bool operator==(const Layer&) const = default;
  };

  std::size_t size() const noexcept { return levels_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t M() const noexcept { return M_; }
  std::size_t ef_construction() const noexcept { return ef_construction_; }
  std::size_t max_layers() const noexcept { return max_layers_; }
  bool heuristic() const noexcept { return heuristic_; }
  double mL() const noexcept { return mL_; }
  ItemId entry_point() const noexcept { return entry_; }
  std::size_t num_layers() const noexcept { return layers_.size(); }
  std::size_t top_level() const noexcept { return layers_.size() - 1; }
  std::size_t node_level(ItemId node) const { return levels_.at(node); }
  std::size_t max_degree(std::size_t level) const noexcept { return level == 0 ? 2 * M_ : M_; }

  std::span<const ItemId> neighbors(ItemId node, std::size_t level) const {
    const Layer& layer = layers_[level];
    return std::span<const ItemId>(layer.neighbors)
        .subspan(layer.offsets[node], layer.offsets[node + 1] - layer.offsets[node]);
  }
  // Nodes whose level is >= `level`, ascending.
  std::vector<ItemId> nodes_at_level(std::size_t level) const;
  const Layer& layer(std::size_t level) const { return layers_.at(level); }

  // Number of nodes at `level` reachable from the entry point along directed
  // edges of that level.
  std::size_t reachable_from_entry(std::size_t level) const;
  bool is_connected(std::size_t level) const;

  bool operator==(const HnswGraph&) const = default;

 private:
  friend HnswGraph build_index(const EmbeddingMatrix&, const HnswParams&);
  friend HnswGraph deserialize_graph(std::span<const std::uint8_t>);
  friend class HnswGraphTestAccess;

  std::size_t dim_ = 0;
  std::size_t M_ = 0;
  std::size_t ef_construction_ = 0;
  std::size_t max_layers_ = 0;
  bool heuristic_ = true;
  double mL_ = 0.0;
  ItemId entry_ = 0;
  std::vector<std::uint8_t> levels_;
  std::vector<Layer> layers_;
};

// Incremental insertion in ascending id order. Rejects non-finite input.
HnswGraph build_index(const EmbeddingMatrix& embeddings, const HnswParams& params);

struct Neighbor {
  ItemId id = 0;
  double distance = 0.0;  // true l2

  bool operator==(const Neighbor&) const = default;
};

// Exact k nearest rows by l2; ties go to the smaller id.
std::vector<Neighbor> knn_l2_bruteforce(const EmbeddingMatrix& embeddings,
                                        std::span<const double> query, std::size_t k);

// Standard layer-wise l2 search: greedy descent on upper layers, then a
// best-first search with a dynamic list of size max(ef, k) on layer 0.
std::vector<Neighbor> search_l2(const HnswGraph& graph, const EmbeddingMatrix& embeddings,
                                std::span<const double> query, std::size_t k, std::size_t ef);

std::vector<std::uint8_t> serialize_graph(const HnswGraph& graph);
HnswGraph deserialize_graph(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> serialize_embeddings(const EmbeddingMatrix& embeddings);
EmbeddingMatrix deserialize_embeddings(std::span<const std::uint8_t> bytes);
void save_embeddings(const EmbeddingMatrix& embeddings, const std::filesystem::path& path);
EmbeddingMatrix load_embeddings(const std::filesystem::path& path);

// Graph plus the embeddings it was built on, loaded as one artifact.
struct IndexContainer {
  HnswGraph graph;
  EmbeddingMatrix embeddings;
};

std::vector<std::uint8_t> serialize_index(const IndexContainer& index);
IndexContainer deserialize_index(std::span<const std::uint8_t> bytes);
void save_index(const IndexContainer& index, const std::filesystem::path& path);
IndexContainer load_index(const std::filesystem::path& path);

}  // namespace nsearch
