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
#include <span>
#include <string>
#include <vector>

#include "nsearch/config.h"
#include "nsearch/corpus.h"
#include "nsearch/rng.h"
#include "nsearch/scorer.h"

namespace nsearch {

struct Label {
  ItemId item = 0;
  bool positive = false;
};

// One user's training example: the history the scorer conditions on, and the
// positive/noise labels Y_u scored against it.
struct NceBatch {
  UserId user_id = 0;
  std::vector<ItemId> history;
  std::vector<Label> labels;

  std::vector<ItemId> label_items() const;
  std::vector<double> flags() const;
};

enum class NoiseDistribution { kUnigram, kUniform };
enum class AuxForm { kSingleTerm, kBinaryKl };

// Noise distribution q(v) over the vocabulary, sampled by inverse CDF.
class NoiseSampler {
 public:
  // Unigram over item frequency in the training users' events; falls back to
  // uniform when there are no training events.
  static NoiseSampler from_dataset(const Dataset& dataset, NoiseDistribution kind);
  static NoiseSampler uniform(std::size_t n_items);

  ItemId sample(Rng& rng) const;
  double probability(ItemId item) const;
  std::size_t n_items() const noexcept { return cdf_.size(); }

 private:
  std::vector<double> cdf_;
};

// Draws a split point s uniformly in [1, l-1]: events before s are the
// history, each event from s on is a positive with `k_neg` noise labels.
// A single-event user gets an empty history and one positive.
NceBatch sample_nce_batch(const Dataset& dataset, UserId user, std::size_t k_neg,
                          const NoiseSampler& noise, Rng& rng);

// Mean binary cross-entropy computed from logits.
double nce_loss(std::span<const double> logits, std::span<const double> flags);
// dL/dlogit for nce_loss, accumulated with `scale` into `out`.
void nce_loss_grad(std::span<const double> logits, std::span<const double> flags, double scale,
                   std::span<double> out);

// delta = epsilon * sign(grad) elementwise, sign(0) = 0.
EmbeddingMatrix fgsm_perturb(const EmbeddingMatrix& grads, double epsilon);
std::vector<double> fgsm_perturb(std::span<const double> grad, double epsilon);

inline constexpr double kProbabilityFloor = 1e-7;

struct AuxLossResult {
  double value = 0.0;
  std::size_t clamped = 0;
};

// sum_i p_i log(p_i / q_i), or the two-term binary KL. Probabilities outside
// [1e-7, 1 - 1e-7] are clamped and counted.
AuxLossResult aux_loss(std::span<const double> p_clean, std::span<const double> p_pert,
                       AuxForm form = AuxForm::kSingleTerm);

// Scorer configuration whose vocabulary and categories match `dataset`.
ScorerConfig make_scorer_config(const Dataset& dataset,
                                Architecture architecture = Architecture::kMlpAttention);

struct TrainConfig {
  double learning_rate = 3e-3;
  double epsilon = 1e-2;
  std::size_t k_neg = 19;
  std::size_t epochs = 5;
  std::size_t batch_users = 16;
  std::uint64_t seed = 0;
  bool aux_enabled = true;
  double aux_weight = 1.0;
  AuxForm aux_form = AuxForm::kSingleTerm;
  NoiseDistribution noise = NoiseDistribution::kUnigram;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  static TrainConfig from_config(const KeyValueConfig& kv);
  static TrainConfig from_config(const KeyValueConfig& kv, TrainConfig defaults);
  KeyValueConfig to_config() const;
};

// Adam over a flat parameter vector.
class Adam {
 public:
  Adam(std::size_t n, double lr, double beta1, double beta2, double eps);
  void step(std::span<double> params, std::span<const double> grad);
  std::size_t steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

struct ObjectiveTerms {
  double l_nce = 0.0;
  double l_aux = 0.0;
  double l_all = 0.0;
  std::size_t n_labels = 0;
  std::size_t clamped = 0;
};

// FGSM perturbations, one matrix per batch.
using Perturbations = std::vector<EmbeddingMatrix>;

struct ObjectiveOptions {
  double epsilon = 0.0;
  bool aux_enabled = false;
  double aux_weight = 1.0;
  AuxForm aux_form = AuxForm::kSingleTerm;
};

// L_all = L_NCE + w * L_AUX over a minibatch of users, both as means over all
// labels in the minibatch. When `grad` is non-empty it receives dL_all/dθ
// (overwritten). Perturbations are derived by FGSM from the current
// parameters unless `frozen` is given; `used` receives the ones applied.
// The Δ are constants for differentiation.
ObjectiveTerms objective(const Scorer& scorer, std::span<const NceBatch> batches,
                         const ObjectiveOptions& options, std::span<double> grad,
                         const Perturbations* frozen = nullptr, Perturbations* used = nullptr);

struct LossTraceRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double l_nce = 0.0;
  double l_aux = 0.0;
  double l_all = 0.0;
};

struct TrainResult {
  Scorer scorer;
  std::vector<LossTraceRow> trace;
  std::size_t clamped = 0;
  // Largest ||delta||_inf applied during training.
  double max_perturbation = 0.0;
};

// Mini-batch training over dataset.splits.train. Single-threaded and
// deterministic for a fixed seed. Parameters are rounded to f32 at the end so
// the checkpoint reproduces the returned scorer exactly.
TrainResult train(const Dataset& dataset, Scorer initial, const TrainConfig& config);

std::string loss_trace_csv(std::span<const LossTraceRow> trace);

}  // namespace nsearch
