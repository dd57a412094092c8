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

#include "nsearch/trainer.h"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace nsearch {
namespace {

double clamp_probability(double p, std::size_t& clamped, bool& was_clamped) {
  was_clamped = false;
  if (p < kProbabilityFloor) {
    ++clamped;
    was_clamped = true;
    return kProbabilityFloor;
  }
  if (p > 1.0 - kProbabilityFloor) {
    ++clamped;
    was_clamped = true;
    return 1.0 - kProbabilityFloor;
  }
  return p;
}

double aux_term(double p, double q, AuxForm form) {
  double t = p * std::log(p / q);
  if (form == AuxForm::kBinaryKl) t += (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
  return t;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<ItemId> NceBatch::label_items() const {
  std::vector<ItemId> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back(l.item);
  return out;
}

std::vector<double> NceBatch::flags() const {
  std::vector<double> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back(l.positive ? 1.0 : 0.0);
  return out;
}

ScorerConfig make_scorer_config(const Dataset& dataset, Architecture architecture) {
  ScorerConfig config;
  config.architecture = architecture;
  config.item_categories.reserve(dataset.n_items());
  for (const auto& item : dataset.items) config.item_categories.push_back(item.category);
  config.n_categories = std::max<std::size_t>(1, dataset.n_categories);
  return config;
}

NoiseSampler NoiseSampler::uniform(std::size_t n_items) {
  if (n_items == 0) throw EmptyDatasetError("noise distribution over an empty corpus");
  NoiseSampler s;
  s.cdf_.resize(n_items);
  for (std::size_t i = 0; i < n_items; ++i) {
    s.cdf_[i] = static_cast<double>(i + 1) / static_cast<double>(n_items);
  }
  return s;
}

NoiseSampler NoiseSampler::from_dataset(const Dataset& dataset, NoiseDistribution kind) {
  const std::size_t n = dataset.n_items();
  if (n == 0) throw EmptyDatasetError("noise distribution over an empty corpus");
  if (kind == NoiseDistribution::kUniform) return uniform(n);
  std::vector<double> counts(n, 0.0);
  double total = 0.0;
  for (UserId uid : dataset.splits.train) {
    auto it = dataset.users.find(uid);
    if (it == dataset.users.end()) continue;
    for (const auto& e : it->second) {
      counts[e.item_id] += 1.0;
      total += 1.0;
    }
  }
  if (total == 0.0) return uniform(n);
  NoiseSampler s;
  s.cdf_.resize(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += counts[i];
    s.cdf_[i] = acc / total;
  }
  s.cdf_.back() = 1.0;
  return s;
}

ItemId NoiseSampler::sample(Rng& rng) const {
  const double r = rng.uniform01();
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), r);
  if (it == cdf_.end()) --it;
  return static_cast<ItemId>(it - cdf_.begin());
}

double NoiseSampler::probability(ItemId item) const {
  return item == 0 ? cdf_[0] : cdf_[item] - cdf_[item - 1];
}

NceBatch sample_nce_batch(const Dataset& dataset, UserId user, std::size_t k_neg,
                          const NoiseSampler& noise, Rng& rng) {
  if (dataset.n_items() == 0) throw EmptyDatasetError("sample_nce_batch: empty corpus");
  const auto& events = dataset.events_of(user);
  if (events.empty()) throw ContractViolation("sample_nce_batch: user has no training events");
  const std::size_t split = events.size() == 1 ? 0 : 1 + rng.below(events.size() - 1);
  NceBatch batch;
  batch.user_id = user;
  for (std::size_t i = 0; i < split; ++i) batch.history.push_back(events[i].item_id);
  batch.labels.reserve((events.size() - split) * (k_neg + 1));
  for (std::size_t i = split; i < events.size(); ++i) {
    batch.labels.push_back(Label{events[i].item_id, true});
    for (std::size_t k = 0; k < k_neg; ++k) batch.labels.push_back(Label{noise.sample(rng), false});
  }
  return batch;
}

double nce_loss(std::span<const double> logits, std::span<const double> flags) {
  if (logits.size() != flags.size()) throw ShapeError("nce_loss: length mismatch");
  if (logits.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    // -log sigmoid(z) for positives, -log(1 - sigmoid(z)) for negatives.
    sum += flags[i] > 0.5 ? softplus(-logits[i]) : softplus(logits[i]);
  }
  return sum / static_cast<double>(logits.size());
}

void nce_loss_grad(std::span<const double> logits, std::span<const double> flags, double scale,
                   std::span<double> out) {
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] += scale * (sigmoid(logits[i]) - (flags[i] > 0.5 ? 1.0 : 0.0));
  }
}

std::vector<double> fgsm_perturb(std::span<const double> grad, double epsilon) {
  std::vector<double> out(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) {
    out[i] = grad[i] > 0 ? epsilon : (grad[i] < 0 ? -epsilon : 0.0);
  }
  return out;
}

EmbeddingMatrix fgsm_perturb(const EmbeddingMatrix& grads, double epsilon) {
  EmbeddingMatrix out(grads.rows(), grads.cols());
  const auto in = grads.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    dst[i] = in[i] > 0 ? epsilon : (in[i] < 0 ? -epsilon : 0.0);
  }
  return out;
}

AuxLossResult aux_loss(std::span<const double> p_clean, std::span<const double> p_pert,
                       AuxForm form) {
  if (p_clean.size() != p_pert.size()) throw ShapeError("aux_loss: length mismatch");
  AuxLossResult r;
  bool unused = false;
  for (std::size_t i = 0; i < p_clean.size(); ++i) {
    const double p = clamp_probability(p_clean[i], r.clamped, unused);
    const double q = clamp_probability(p_pert[i], r.clamped, unused);
    r.value += aux_term(p, q, form);
  }
  return r;
}

void TrainConfig::validate() const {
  if (!(epsilon >= 0.0)) throw ConfigError("train: epsilon must be >= 0");
  if (!aux_enabled && epsilon > 0.0) {
    throw ConfigError("train: epsilon > 0 with the auxiliary loss disabled is inconsistent");
  }
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (batch_users == 0) throw ConfigError("train: batch_users must be >= 1");
  if (!(aux_weight >= 0.0)) throw ConfigError("train: aux_weight must be >= 0");
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& kv) { return from_config(kv, TrainConfig{}); }

TrainConfig TrainConfig::from_config(const KeyValueConfig& kv, TrainConfig d) {
  d.learning_rate = kv.get_double("learning_rate", d.learning_rate);
  d.epsilon = kv.get_double("epsilon", d.epsilon);
  d.k_neg = static_cast<std::size_t>(kv.get_int("k_neg", static_cast<long long>(d.k_neg)));
  d.epochs = static_cast<std::size_t>(kv.get_int("epochs", static_cast<long long>(d.epochs)));
  d.batch_users =
      static_cast<std::size_t>(kv.get_int("batch_users", static_cast<long long>(d.batch_users)));
  d.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(d.seed)));
  d.aux_enabled = kv.get_bool("aux_enabled", d.aux_enabled);
  d.aux_weight = kv.get_double("aux_weight", d.aux_weight);
  const auto form = kv.get_string("aux_form", d.aux_form == AuxForm::kBinaryKl ? "binary-kl" : "single");
  if (form == "single") {
    d.aux_form = AuxForm::kSingleTerm;
  } else if (form == "binary-kl") {
    d.aux_form = AuxForm::kBinaryKl;
  } else {
    throw ConfigError("aux_form must be 'single' or 'binary-kl'");
  }
  const auto noise = kv.get_string("noise", d.noise == NoiseDistribution::kUniform ? "uniform" : "unigram");
  if (noise == "unigram") {
    d.noise = NoiseDistribution::kUnigram;
  } else if (noise == "uniform") {
    d.noise = NoiseDistribution::kUniform;
  } else {
    throw ConfigError("noise must be 'unigram' or 'uniform'");
  }
  d.adam_beta1 = kv.get_double("adam_beta1", d.adam_beta1);
  d.adam_beta2 = kv.get_double("adam_beta2", d.adam_beta2);
  d.adam_eps = kv.get_double("adam_eps", d.adam_eps);
  return d;
}

KeyValueConfig TrainConfig::to_config() const {
  KeyValueConfig kv;
  kv.set("learning_rate", format_double(learning_rate));
  kv.set("epsilon", format_double(epsilon));
  kv.set("k_neg", std::to_string(k_neg));
  kv.set("epochs", std::to_string(epochs));
  kv.set("batch_users", std::to_string(batch_users));
  kv.set("seed", std::to_string(seed));
  kv.set("aux_enabled", aux_enabled ? "true" : "false");
  kv.set("aux_weight", format_double(aux_weight));
  kv.set("aux_form", aux_form == AuxForm::kBinaryKl ? "binary-kl" : "single");
  kv.set("noise", noise == NoiseDistribution::kUniform ? "uniform" : "unigram");
  kv.set("adam_beta1", format_double(adam_beta1));
  kv.set("adam_beta2", format_double(adam_beta2));
  kv.set("adam_eps", format_double(adam_eps));
  return kv;
}

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    params[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
  }
}

ObjectiveTerms objective(const Scorer& scorer, std::span<const NceBatch> batches,
                         const ObjectiveOptions& options, std::span<double> grad,
                         const Perturbations* frozen, Perturbations* used) {
  ObjectiveTerms terms;
  for (const auto& b : batches) terms.n_labels += b.labels.size();
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
  if (used) used->clear();
  if (terms.n_labels == 0) return terms;
  if (frozen && frozen->size() != batches.size()) {
    throw ShapeError("objective: frozen perturbation count mismatch");
  }

  // With epsilon == 0 the perturbed branch equals the clean one and the
  // auxiliary term is identically zero, so it is skipped outright.
  const bool aux = options.aux_enabled && options.epsilon > 0.0;
  const double inv_n = 1.0 / static_cast<double>(terms.n_labels);
  double nce_sum = 0.0;
  double aux_sum = 0.0;

  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    const NceBatch& b = batches[bi];
    if (b.labels.empty()) {
      if (used) used->emplace_back(0, scorer.dim());
      continue;
    }
    const auto items = b.label_items();
    const auto flags = b.flags();
    const ForwardTape clean = scorer.forward(b.history, items);
    for (std::size_t i = 0; i < items.size(); ++i) {
      nce_sum += flags[i] > 0.5 ? softplus(-clean.logits[i]) : softplus(clean.logits[i]);
    }
    std::vector<double> d_clean(items.size(), 0.0);
    if (!grad.empty()) nce_loss_grad(clean.logits, flags, inv_n, d_clean);

    if (aux) {
      EmbeddingMatrix deltas = frozen ? (*frozen)[bi]
                                      : fgsm_perturb(scorer.input_grads(clean), options.epsilon);
      const ForwardTape pert = scorer.forward(b.history, items, &deltas);
      std::vector<double> d_pert(items.size(), 0.0);
      const double w = options.aux_weight * inv_n;
      for (std::size_t i = 0; i < items.size(); ++i) {
        bool p_clamped = false;
        bool q_clamped = false;
        const double p = clamp_probability(sigmoid(clean.logits[i]), terms.clamped, p_clamped);
        const double q = clamp_probability(sigmoid(pert.logits[i]), terms.clamped, q_clamped);
        aux_sum += aux_term(p, q, options.aux_form);
        if (grad.empty()) continue;
        double dp = std::log(p / q) + 1.0;
        double dq = -p / q;
        if (options.aux_form == AuxForm::kBinaryKl) {
          dp = std::log(p / q) - std::log((1.0 - p) / (1.0 - q));
          dq = -p / q + (1.0 - p) / (1.0 - q);
        }
        if (!p_clamped) d_clean[i] += w * dp * p * (1.0 - p);
        if (!q_clamped) d_pert[i] = w * dq * q * (1.0 - q);
      }
      if (!grad.empty()) scorer.accumulate_param_grads(pert, d_pert, grad);
      if (used) used->push_back(std::move(deltas));
    } else if (used) {
      used->emplace_back(items.size(), scorer.dim());
    }
    if (!grad.empty()) scorer.accumulate_param_grads(clean, d_clean, grad);
  }
  terms.l_nce = nce_sum * inv_n;
  terms.l_aux = aux ? options.aux_weight * aux_sum * inv_n : 0.0;
  terms.l_all = terms.l_nce + terms.l_aux;
  return terms;
}

TrainResult train(const Dataset& dataset, Scorer initial, const TrainConfig& config) {
  config.validate();
  std::vector<UserId> users;
  for (UserId uid : dataset.splits.train) {
    auto it = dataset.users.find(uid);
    if (it != dataset.users.end() && !it->second.empty()) users.push_back(uid);
  }
  if (users.empty()) throw EmptyDatasetError("train: dataset has no training users");
  if (initial.config().n_items() != dataset.n_items()) {
    throw ShapeError("train: scorer vocabulary does not match dataset");
  }

  const NoiseSampler noise = NoiseSampler::from_dataset(dataset, config.noise);
  Rng rng(derive_seed(config.seed, "train"));
  TrainResult result{std::move(initial), {}, 0, 0.0};
  Scorer& scorer = result.scorer;
  Adam adam(scorer.num_params(), config.learning_rate, config.adam_beta1, config.adam_beta2,
            config.adam_eps);
  const ObjectiveOptions options{config.epsilon, config.aux_enabled, config.aux_weight,
                                 config.aux_form};
  std::vector<double> grad(scorer.num_params());
  std::vector<NceBatch> batches;
  Perturbations used;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = users.size(); i > 1; --i) std::swap(users[i - 1], users[rng.below(i)]);
    for (std::size_t start = 0; start < users.size(); start += config.batch_users) {
      const std::size_t end = std::min(users.size(), start + config.batch_users);
      batches.clear();
      for (std::size_t u = start; u < end; ++u) {
        batches.push_back(sample_nce_batch(dataset, users[u], config.k_neg, noise, rng));
      }
      const ObjectiveTerms terms = objective(scorer, batches, options, grad, nullptr, &used);
      if (!std::isfinite(terms.l_all)) throw DivergenceError("train: loss is not finite", step);
      for (const auto& d : used) {
        for (double v : d.data()) result.max_perturbation = std::max(result.max_perturbation, std::abs(v));
      }
      result.clamped += terms.clamped;
      adam.step(scorer.mutable_params(), grad);
      result.trace.push_back(LossTraceRow{epoch, step, terms.l_nce, terms.l_aux, terms.l_all});
      ++step;
    }
  }
  scorer.round_to_float();
  return result;
}

std::string loss_trace_csv(std::span<const LossTraceRow> trace) {
  std::string out = "epoch,step,l_nce,l_aux,l_all\n";
  for (const auto& r : trace) {
    out += std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + format_double(r.l_nce) +
           "," + format_double(r.l_aux) + "," + format_double(r.l_all) + "\n";
  }
  return out;
}

}  // namespace nsearch
