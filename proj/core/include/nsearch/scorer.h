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
#include <string_view>
#include <vector>

#include "nsearch/common.h"
#include "nsearch/matrix.h"
#include "nsearch/nn.h"

namespace nsearch {

enum class Architecture : std::uint8_t { kTwoSided = 0, kMlpNoAttention = 1, kMlpAttention = 2 };

std::string_view architecture_name(Architecture a);
Architecture parse_architecture(std::string_view name);

// What input gradients (and therefore FGSM directions) are taken of.
enum class GradientTarget : std::uint8_t { kProbability = 0, kLogit = 1 };

struct ScorerConfig {
  Architecture architecture = Architecture::kMlpAttention;
  // Category of every item; its length is the vocabulary size |V|.
  std::vector<CategoryId> item_categories;
  std::size_t n_categories = 1;
  // Width of the id/category embedding tables and of behavior vectors.
  std::size_t feature_dim = 16;
  std::vector<std::size_t> item_layers{32, 32, 16};
  std::vector<std::size_t> score_layers{64, 32, 16, 1};
  std::size_t profile_dim = 0;
  std::size_t max_seq_len = 50;
  Activation activation = Activation::kTanh;
  GradientTarget gradient_target = GradientTarget::kProbability;
  // Only affects Scorer::create; embedding tables always start in U(-1, 1).
  InitScheme init = InitScheme::kXavier;

  std::size_t n_items() const noexcept { return item_categories.size(); }
  // Dimension d of the item embedding e_v.
  std::size_t embedding_dim() const;
  void validate() const;
};

// Frozen per-query user representation. `behaviors` holds one feature_dim
// vector per history event (most recent last).
struct UserContext {
  std::vector<double> profile;
  EmbeddingMatrix behaviors;
};

struct ScoreBatch {
  std::vector<double> logits;
  std::vector<double> probabilities;

  std::size_t size() const noexcept { return logits.size(); }
};

// Per-user similarity s_u(e_v) evaluated on batches of item embeddings. The
// retrieval code only sees this interface.
class Similarity {
 public:
  virtual ~Similarity() = default;
  virtual std::size_t dim() const = 0;
  // Writes one logit per row of `embs`. Higher is more similar.
  virtual void logits(const UserContext& user, MatrixView embs, std::span<double> out) const = 0;

  ScoreBatch score_batch(const UserContext& user, MatrixView embs) const;
};

// Negative Euclidean distance to `user.profile`, the query point. Turns any
// traversal over the scorer interface into a plain l2 search.
class NegativeL2Similarity final : public Similarity {
 public:
  explicit NegativeL2Similarity(std::size_t dim) : dim_(dim) {}
  std::size_t dim() const override { return dim_; }
  void logits(const UserContext& user, MatrixView embs, std::span<double> out) const override;

 private:
  std::size_t dim_;
};

// Softmax(<b_i, target> / sqrt(d)) weighted sum of the behavior rows. An
// empty sequence yields the zero vector. `weights` receives the softmax when
// non-null.
std::vector<double> attention_pool(const EmbeddingMatrix& behaviors,
                                   std::span<const double> target,
                                   std::vector<double>* weights = nullptr);

struct ItemTrace {
  ItemId item = 0;
  MlpTrace item_net;               // unused for two-sided
  std::vector<double> embedding;   // e_v + delta, the head input
  std::vector<double> attention_weights;
  std::vector<double> attention;
  MlpTrace head;                   // unused for two-sided
};

// Forward state recorded for one user and a list of label items; consumed by
// the gradient routines. Tied to the parameter version it was recorded at.
struct ForwardTape {
  std::uint64_t param_version = 0;
  std::vector<ItemId> history;
  std::vector<double> profile;
  EmbeddingMatrix behaviors;
  std::vector<double> pooled;
  std::vector<ItemTrace> items;
  std::vector<double> logits;
};

class Scorer final : public Similarity {
 public:
  static Scorer create(const ScorerConfig& config, std::uint64_t seed);

  const ScorerConfig& config() const noexcept { return config_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  std::size_t dim() const override { return config_.embedding_dim(); }
  std::size_t num_params() const noexcept { return params_.size(); }

  std::span<const double> params() const noexcept { return params_; }
  // Any mutable access invalidates outstanding tapes.
  std::span<double> mutable_params() noexcept {
    ++version_;
    return params_;
  }
  std::span<double> mutable_segment(std::string_view name);
  std::span<const double> segment(std::string_view name) const;
  std::uint64_t version() const noexcept { return version_; }
  // Rounds every parameter to the nearest float so that checkpoints (which
  // store f32) reload to an identical model.
  void round_to_float();

  std::vector<double> item_embedding(ItemId item) const;
  EmbeddingMatrix item_embeddings() const;

  // History beyond max_seq_len keeps only the most recent events.
  UserContext user_context(std::span<const ItemId> history,
                           std::span<const double> profile = {}) const;

  void logits(const UserContext& user, MatrixView embs, std::span<double> out) const override;
  // One row per input: gradient of the configured target w.r.t. e_v.
  EmbeddingMatrix input_grad_batch(const UserContext& user, MatrixView embs) const;

  // Training forward pass: e_v is recomputed by the live item network and
  // shifted by `deltas` (row per item) when given.
  ForwardTape forward(std::span<const ItemId> history, std::span<const ItemId> items,
                      const EmbeddingMatrix* deltas = nullptr,
                      std::span<const double> profile = {}) const;
  // Gradient of the configured target w.r.t. each taped head input.
  EmbeddingMatrix input_grads(const ForwardTape& tape) const;
  // Accumulates d(loss)/d(params) into `grad` given d(loss)/d(logit_i).
  void accumulate_param_grads(const ForwardTape& tape, std::span<const double> dloss_dlogit,
                              std::span<double> grad) const;
  std::vector<double> param_grads(const ForwardTape& tape,
                                  std::span<const double> dloss_dlogit) const;

  // Mutates parameters. Used by checkpoint loading and tests.
  void set_params(std::span<const double> values);

 private:
  Scorer() = default;
  struct UserState;
  UserState prepare_user(const UserContext& user) const;
  void behavior_row(ItemId item, std::span<double> out) const;
  void item_net_forward(ItemId item, MlpTrace& trace, std::span<double> out) const;
  double head_forward(const UserState& user, std::span<const double> e, ItemTrace& trace) const;
  // Returns d(logit)/d(e) into `de`; accumulates user-side and parameter
  // gradients when the corresponding outputs are non-empty.
  void head_backward(const UserState& user, const ItemTrace& trace, double dlogit,
                     std::span<double> de, std::span<double> dpooled,
                     EmbeddingMatrix* dbehaviors, std::span<double> grad) const;
  void check_tape(const ForwardTape& tape) const;
  void check_batch(MatrixView embs) const;

  ScorerConfig config_;
  ParamLayout layout_;
  std::vector<double> params_;
  std::uint64_t version_ = 1;
  std::size_t item_table_ = 0;
  std::size_t category_table_ = 0;
  Mlp item_net_;
  Mlp head_;
};

// Versioned checkpoint ("NSCK"): architecture header followed by named
// parameter segments as little-endian f32.
std::vector<std::uint8_t> serialize_checkpoint(const Scorer& scorer);
Scorer deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Scorer& scorer, const std::filesystem::path& path);
Scorer load_checkpoint(const std::filesystem::path& path);

}  // namespace nsearch
