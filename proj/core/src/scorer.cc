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

#include "nsearch/scorer.h"

#include <algorithm>
#include <cmath>

#include "nsearch/binary_io.h"
#include "nsearch/rng.h"

namespace nsearch {
namespace {

constexpr std::string_view kCheckpointMagic = "NSCK";
constexpr std::uint32_t kCheckpointVersion = 1;

double target_slope(GradientTarget target, double logit) {
  if (target == GradientTarget::kLogit) return 1.0;
  const double p = sigmoid(logit);
  return p * (1.0 - p);
}

}  // namespace

std::string_view architecture_name(Architecture a) {
  switch (a) {
    case Architecture::kTwoSided: return "two-sided";
    case Architecture::kMlpNoAttention: return "mlp-no-attention";
    case Architecture::kMlpAttention: return "mlp-attention";
  }
  return "?";
}

Architecture parse_architecture(std::string_view name) {
  if (name == "two-sided") return Architecture::kTwoSided;
  if (name == "mlp-no-attention") return Architecture::kMlpNoAttention;
  if (name == "mlp-attention") return Architecture::kMlpAttention;
  throw ConfigError("unknown architecture '" + std::string(name) + "'");
}

std::size_t ScorerConfig::embedding_dim() const {
  if (architecture == Architecture::kTwoSided) return feature_dim;
  return item_layers.empty() ? 0 : item_layers.back();
}

void ScorerConfig::validate() const {
  if (item_categories.empty()) throw ConfigError("scorer: empty item vocabulary");
  if (feature_dim == 0) throw ConfigError("scorer: feature_dim must be >= 1");
  for (auto c : item_categories) {
    if (c >= n_categories) throw ConfigError("scorer: item category out of range");
  }
  if (architecture == Architecture::kTwoSided) {
    if (profile_dim != 0 && profile_dim != feature_dim) {
      throw ConfigError("scorer: two-sided profile_dim must be 0 or feature_dim");
    }
    return;
  }
  if (item_layers.empty() || score_layers.empty()) {
    throw ConfigError("scorer: mlp architectures need item and score layers");
  }
  if (score_layers.back() != 1) throw ConfigError("scorer: last score layer must have width 1");
  for (auto w : item_layers) {
    if (w == 0) throw ConfigError("scorer: zero-width layer");
  }
  for (auto w : score_layers) {
    if (w == 0) throw ConfigError("scorer: zero-width layer");
  }
  if (architecture == Architecture::kMlpAttention && embedding_dim() != feature_dim) {
    throw ConfigError("scorer: attention needs item_layers.back() == feature_dim");
  }
}

ScoreBatch Similarity::score_batch(const UserContext& user, MatrixView embs) const {
  ScoreBatch out;
  out.logits.resize(embs.rows);
  logits(user, embs, out.logits);
  out.probabilities.resize(embs.rows);
  for (std::size_t i = 0; i < embs.rows; ++i) out.probabilities[i] = sigmoid(out.logits[i]);
  return out;
}

void NegativeL2Similarity::logits(const UserContext& user, MatrixView embs,
                                  std::span<double> out) const {
  if (embs.cols != dim_ || user.profile.size() != dim_) {
    throw ShapeError("NegativeL2Similarity: dimension mismatch");
  }
  for (std::size_t i = 0; i < embs.rows; ++i) {
    out[i] = -std::sqrt(squared_l2(embs.row(i), user.profile));
  }
}

std::vector<double> attention_pool(const EmbeddingMatrix& behaviors,
                                   std::span<const double> target, std::vector<double>* weights) {
  const std::size_t n = behaviors.rows();
  std::vector<double> out(target.size(), 0.0);
  if (weights) weights->assign(n, 0.0);
  if (n == 0) return out;
  if (behaviors.cols() != target.size()) throw ShapeError("attention_pool: dimension mismatch");
  const double scale = 1.0 / std::sqrt(static_cast<double>(target.size()));
  std::vector<double> w(n);
  double max_s = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = dot(behaviors.row(i), target) * scale;
    max_s = std::max(max_s, w[i]);
  }
  double z = 0.0;
  for (auto& x : w) {
    x = std::exp(x - max_s);
    z += x;
  }
  for (std::size_t i = 0; i < n; ++i) {
    w[i] /= z;
    const auto b = behaviors.row(i);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += w[i] * b[j];
  }
  if (weights) *weights = std::move(w);
  return out;
}

struct Scorer::UserState {
  const EmbeddingMatrix* behaviors = nullptr;
  std::span<const double> profile;
  std::vector<double> pooled;
  std::vector<double> user_vec;  // two-sided e_u
};

Scorer Scorer::create(const ScorerConfig& config, std::uint64_t seed) {
  config.validate();
  Scorer s;
  s.config_ = config;
  const std::size_t f = config.feature_dim;
  // A table is a dense layer over a one-hot input, so fan-in is 1.
  const double table_bound = 1.0;
  s.item_table_ = s.layout_.add("item_table", config.n_items() * f, table_bound);
  if (config.architecture != Architecture::kTwoSided) {
    s.category_table_ = s.layout_.add("category_table", config.n_categories * f, table_bound);
    s.item_net_ = Mlp::create(s.layout_, "item_fc", 2 * f, config.item_layers, config.activation,
                              config.init);
    const std::size_t d = config.embedding_dim();
    const std::size_t head_in =
        f + d + config.profile_dim + (config.architecture == Architecture::kMlpAttention ? d : 0);
    s.head_ = Mlp::create(s.layout_, "score_fc", head_in, config.score_layers, config.activation,
                          config.init);
  }
  s.params_.assign(s.layout_.total(), 0.0);
  Rng rng(derive_seed(seed, "scorer-init"));
  s.layout_.initialize(s.params_, rng);
  s.round_to_float();
  return s;
}

std::span<double> Scorer::mutable_segment(std::string_view name) {
  const auto& seg = layout_.find(name);
  ++version_;
  return std::span<double>(params_).subspan(seg.offset, seg.size);
}

std::span<const double> Scorer::segment(std::string_view name) const {
  const auto& seg = layout_.find(name);
  return std::span<const double>(params_).subspan(seg.offset, seg.size);
}

void Scorer::round_to_float() {
  for (auto& p : params_) p = static_cast<double>(static_cast<float>(p));
  ++version_;
}

void Scorer::set_params(std::span<const double> values) {
  if (values.size() != params_.size()) throw ShapeError("set_params: size mismatch");
  std::copy(values.begin(), values.end(), params_.begin());
  ++version_;
}

void Scorer::behavior_row(ItemId item, std::span<double> out) const {
  if (item >= config_.n_items()) {
    throw OutOfVocabularyError("item id " + std::to_string(item) + " not in vocabulary");
  }
  const std::size_t f = config_.feature_dim;
  const double* t = params_.data() + item_table_ + item * f;
  std::copy(t, t + f, out.begin());
  if (config_.architecture != Architecture::kTwoSided) {
    const double* c = params_.data() + category_table_ + config_.item_categories[item] * f;
    for (std::size_t j = 0; j < f; ++j) out[j] += c[j];
  }
}

void Scorer::item_net_forward(ItemId item, MlpTrace& trace, std::span<double> out) const {
  if (item >= config_.n_items()) {
    throw OutOfVocabularyError("item id " + std::to_string(item) + " not in vocabulary");
  }
  const std::size_t f = config_.feature_dim;
  const double* t = params_.data() + item_table_ + item * f;
  if (config_.architecture == Architecture::kTwoSided) {
    std::copy(t, t + f, out.begin());
    return;
  }
  std::vector<double> x(2 * f);
  std::copy(t, t + f, x.begin());
  const double* c = params_.data() + category_table_ + config_.item_categories[item] * f;
  std::copy(c, c + f, x.begin() + f);
  item_net_.forward(params_, x, trace);
  std::copy(trace.output.begin(), trace.output.end(), out.begin());
}

std::vector<double> Scorer::item_embedding(ItemId item) const {
  std::vector<double> e(dim());
  MlpTrace trace;
  item_net_forward(item, trace, e);
  return e;
}

EmbeddingMatrix Scorer::item_embeddings() const {
  EmbeddingMatrix m(config_.n_items(), dim());
  MlpTrace trace;
  for (std::size_t v = 0; v < config_.n_items(); ++v) {
    item_net_forward(static_cast<ItemId>(v), trace, m.row(v));
  }
  return m;
}

UserContext Scorer::user_context(std::span<const ItemId> history,
                                 std::span<const double> profile) const {
  if (history.size() > config_.max_seq_len) history = history.last(config_.max_seq_len);
  UserContext u;
  u.profile.assign(profile.begin(), profile.end());
  u.behaviors = EmbeddingMatrix(history.size(), config_.feature_dim);
  for (std::size_t i = 0; i < history.size(); ++i) behavior_row(history[i], u.behaviors.row(i));
  return u;
}

Scorer::UserState Scorer::prepare_user(const UserContext& user) const {
  const std::size_t f = config_.feature_dim;
  if (!user.behaviors.empty() && user.behaviors.cols() != f) {
    throw ShapeError("user context: behavior width " + std::to_string(user.behaviors.cols()) +
                     " != " + std::to_string(f));
  }
  const bool two_sided = config_.architecture == Architecture::kTwoSided;
  if (user.profile.size() != config_.profile_dim && !(two_sided && user.profile.empty())) {
    throw ShapeError("user context: profile size mismatch");
  }
  UserState s;
  s.behaviors = &user.behaviors;
  s.profile = user.profile;
  s.pooled.assign(f, 0.0);
  for (std::size_t i = 0; i < user.behaviors.rows(); ++i) {
    const auto b = user.behaviors.row(i);
    for (std::size_t j = 0; j < f; ++j) s.pooled[j] += b[j];
  }
  if (two_sided) {
    s.user_vec = s.pooled;
    for (std::size_t j = 0; j < user.profile.size(); ++j) s.user_vec[j] += user.profile[j];
  }
  return s;
}

double Scorer::head_forward(const UserState& user, std::span<const double> e,
                            ItemTrace& trace) const {
  trace.embedding.assign(e.begin(), e.end());
  if (config_.architecture == Architecture::kTwoSided) return dot(user.user_vec, e);

  const std::size_t f = config_.feature_dim;
  const std::size_t d = e.size();
  const bool attn = config_.architecture == Architecture::kMlpAttention;
  std::vector<double> x;
  x.reserve(head_.in_dim());
  x.insert(x.end(), user.pooled.begin(), user.pooled.begin() + f);
  if (attn) {
    trace.attention = attention_pool(*user.behaviors, e, &trace.attention_weights);
    if (trace.attention.size() != d) trace.attention.assign(d, 0.0);
    x.insert(x.end(), trace.attention.begin(), trace.attention.end());
  }
  x.insert(x.end(), e.begin(), e.end());
  x.insert(x.end(), user.profile.begin(), user.profile.end());
  head_.forward(params_, x, trace.head);
  return trace.head.output[0];
}

void Scorer::head_backward(const UserState& user, const ItemTrace& trace, double dlogit,
                           std::span<double> de, std::span<double> dpooled,
                           EmbeddingMatrix* dbehaviors, std::span<double> grad) const {
  const std::size_t d = trace.embedding.size();
  if (config_.architecture == Architecture::kTwoSided) {
    for (std::size_t j = 0; j < d; ++j) de[j] = dlogit * user.user_vec[j];
    if (!dpooled.empty()) {
      for (std::size_t j = 0; j < d; ++j) dpooled[j] += dlogit * trace.embedding[j];
    }
    return;
  }
  const std::size_t f = config_.feature_dim;
  const bool attn = config_.architecture == Architecture::kMlpAttention;
  std::vector<double> dx(head_.in_dim());
  const double dout[1] = {dlogit};
  head_.backward(params_, trace.head, dout, dx, grad);

  if (!dpooled.empty()) {
    for (std::size_t j = 0; j < f; ++j) dpooled[j] += dx[j];
  }
  const std::size_t e_off = f + (attn ? d : 0);
  for (std::size_t j = 0; j < d; ++j) de[j] = dx[e_off + j];
  if (!attn) return;

  const EmbeddingMatrix& beh = *user.behaviors;
  const std::size_t n = beh.rows();
  if (n == 0) return;
  const double* dattn = dx.data() + f;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const auto& w = trace.attention_weights;
  std::vector<double> dw(n);
  double mean_dw = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dw[i] = dot(beh.row(i), {dattn, d});
    mean_dw += w[i] * dw[i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double ds = w[i] * (dw[i] - mean_dw) * scale;
    const auto b = beh.row(i);
    for (std::size_t j = 0; j < d; ++j) de[j] += ds * b[j];
    if (dbehaviors) {
      auto db = dbehaviors->row(i);
      for (std::size_t j = 0; j < d; ++j) db[j] += w[i] * dattn[j] + ds * trace.embedding[j];
    }
  }
}

void Scorer::check_batch(MatrixView embs) const {
  if (embs.rows > 0 && embs.cols != dim()) {
    throw ShapeError("embedding width " + std::to_string(embs.cols) + " != scorer dim " +
                     std::to_string(dim()));
  }
}

void Scorer::logits(const UserContext& user, MatrixView embs, std::span<double> out) const {
  check_batch(embs);
  const UserState state = prepare_user(user);
  ItemTrace trace;
  for (std::size_t i = 0; i < embs.rows; ++i) out[i] = head_forward(state, embs.row(i), trace);
}

EmbeddingMatrix Scorer::input_grad_batch(const UserContext& user, MatrixView embs) const {
  check_batch(embs);
  const UserState state = prepare_user(user);
  EmbeddingMatrix grads(embs.rows, dim());
  ItemTrace trace;
  for (std::size_t i = 0; i < embs.rows; ++i) {
    const double z = head_forward(state, embs.row(i), trace);
    head_backward(state, trace, target_slope(config_.gradient_target, z), grads.row(i), {},
                  nullptr, {});
  }
  return grads;
}

ForwardTape Scorer::forward(std::span<const ItemId> history, std::span<const ItemId> items,
                            const EmbeddingMatrix* deltas, std::span<const double> profile) const {
  const std::size_t d = dim();
  if (deltas && (deltas->rows() != items.size() || (deltas->rows() > 0 && deltas->cols() != d))) {
    throw ShapeError("forward: perturbation shape mismatch");
  }
  if (history.size() > config_.max_seq_len) history = history.last(config_.max_seq_len);
  ForwardTape tape;
  tape.param_version = version_;
  tape.history.assign(history.begin(), history.end());
  tape.profile.assign(profile.begin(), profile.end());
  UserContext ctx = user_context(history, profile);
  tape.behaviors = std::move(ctx.behaviors);
  ctx.behaviors = EmbeddingMatrix();

  UserContext view;
  view.profile = tape.profile;
  view.behaviors = tape.behaviors;
  const UserState state = prepare_user(view);
  tape.pooled = state.pooled;

  tape.items.resize(items.size());
  tape.logits.resize(items.size());
  std::vector<double> e(d);
  for (std::size_t i = 0; i < items.size(); ++i) {
    ItemTrace& t = tape.items[i];
    t.item = items[i];
    item_net_forward(items[i], t.item_net, e);
    if (deltas) {
      const auto delta = deltas->row(i);
      for (std::size_t j = 0; j < d; ++j) e[j] += delta[j];
    }
    tape.logits[i] = head_forward(state, e, t);
  }
  return tape;
}

void Scorer::check_tape(const ForwardTape& tape) const {
  if (tape.param_version != version_) {
    throw ContractViolation("stale forward tape: parameters changed since it was recorded");
  }
}

EmbeddingMatrix Scorer::input_grads(const ForwardTape& tape) const {
  check_tape(tape);
  UserContext view;
  view.profile = tape.profile;
  view.behaviors = tape.behaviors;
  const UserState state = prepare_user(view);
  EmbeddingMatrix grads(tape.items.size(), dim());
  for (std::size_t i = 0; i < tape.items.size(); ++i) {
    head_backward(state, tape.items[i], target_slope(config_.gradient_target, tape.logits[i]),
                  grads.row(i), {}, nullptr, {});
  }
  return grads;
}

void Scorer::accumulate_param_grads(const ForwardTape& tape, std::span<const double> dloss_dlogit,
                                    std::span<double> grad) const {
  check_tape(tape);
  if (dloss_dlogit.size() != tape.items.size()) throw ShapeError("param_grads: size mismatch");
  if (grad.size() != params_.size()) throw ShapeError("param_grads: gradient buffer size");
  const std::size_t f = config_.feature_dim;
  const std::size_t d = dim();
  const bool two_sided = config_.architecture == Architecture::kTwoSided;

  UserContext view;
  view.profile = tape.profile;
  view.behaviors = tape.behaviors;
  const UserState state = prepare_user(view);

  std::vector<double> dpooled(f, 0.0);
  EmbeddingMatrix dbehaviors(tape.behaviors.rows(), f);
  std::vector<double> de(d);
  std::vector<double> dx(2 * f);
  for (std::size_t i = 0; i < tape.items.size(); ++i) {
    const double g = dloss_dlogit[i];
    if (g == 0.0) continue;
    const ItemTrace& t = tape.items[i];
    head_backward(state, t, g, de, dpooled, &dbehaviors, grad);
    double* item_row = grad.data() + item_table_ + t.item * f;
    if (two_sided) {
      for (std::size_t j = 0; j < f; ++j) item_row[j] += de[j];
      continue;
    }
    item_net_.backward(params_, t.item_net, de, dx, grad);
    double* cat_row = grad.data() + category_table_ + config_.item_categories[t.item] * f;
    for (std::size_t j = 0; j < f; ++j) {
      item_row[j] += dx[j];
      cat_row[j] += dx[f + j];
    }
  }
  for (std::size_t r = 0; r < tape.history.size(); ++r) {
    const ItemId b = tape.history[r];
    const auto db = dbehaviors.row(r);
    double* item_row = grad.data() + item_table_ + b * f;
    for (std::size_t j = 0; j < f; ++j) item_row[j] += dpooled[j] + db[j];
    if (!two_sided) {
      double* cat_row = grad.data() + category_table_ + config_.item_categories[b] * f;
      for (std::size_t j = 0; j < f; ++j) cat_row[j] += dpooled[j] + db[j];
    }
  }
}

std::vector<double> Scorer::param_grads(const ForwardTape& tape,
                                        std::span<const double> dloss_dlogit) const {
  std::vector<double> grad(params_.size(), 0.0);
  accumulate_param_grads(tape, dloss_dlogit, grad);
  return grad;
}

std::vector<std::uint8_t> serialize_checkpoint(const Scorer& scorer) {
  const ScorerConfig& c = scorer.config();
  ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(c.architecture));
  w.u8(static_cast<std::uint8_t>(c.activation));
  w.u8(static_cast<std::uint8_t>(c.gradient_target));
  w.u32(static_cast<std::uint32_t>(c.feature_dim));
  w.u32(static_cast<std::uint32_t>(c.profile_dim));
  w.u32(static_cast<std::uint32_t>(c.max_seq_len));
  w.u32(static_cast<std::uint32_t>(c.n_categories));
  for (const auto* widths : {&c.item_layers, &c.score_layers}) {
    w.u32(static_cast<std::uint32_t>(widths->size()));
    for (auto v : *widths) w.u32(static_cast<std::uint32_t>(v));
  }
  w.u64(c.item_categories.size());
  for (auto cat : c.item_categories) w.u32(cat);
  const auto& segments = scorer.layout().segments();
  w.u32(static_cast<std::uint32_t>(segments.size()));
  const auto params = scorer.params();
  for (const auto& s : segments) {
    w.str(s.name);
    w.u64(s.size);
    for (std::size_t i = 0; i < s.size; ++i) w.f32(static_cast<float>(params[s.offset + i]));
  }
  return std::move(w).take();
}

Scorer deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  expect_header(in, kCheckpointMagic, kCheckpointVersion, "checkpoint");
  ScorerConfig c;
  const auto arch = in.u8();
  const auto act = in.u8();
  const auto target = in.u8();
  if (arch > 2 || act > 2 || target > 1) throw RangeError("checkpoint: bad architecture tag");
  c.architecture = static_cast<Architecture>(arch);
  c.activation = static_cast<Activation>(act);
  c.gradient_target = static_cast<GradientTarget>(target);
  c.feature_dim = in.u32();
  c.profile_dim = in.u32();
  c.max_seq_len = in.u32();
  c.n_categories = in.u32();
  for (auto* widths : {&c.item_layers, &c.score_layers}) {
    const auto n = in.u32();
    in.require(std::size_t{n} * 4);
    widths->resize(n);
    for (auto& v : *widths) v = in.u32();
  }
  const auto n_items = in.u64();
  in.require(n_items * 4);
  c.item_categories.resize(n_items);
  for (auto& cat : c.item_categories) cat = in.u32();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw RangeError(std::string("checkpoint: ") + e.what());
  }

  Scorer scorer = Scorer::create(c, 0);
  std::vector<double> params(scorer.num_params(), 0.0);
  const auto& segments = scorer.layout().segments();
  const auto n_segments = in.u32();
  if (n_segments != segments.size()) throw FormatError("checkpoint: segment count mismatch");
  for (const auto& s : segments) {
    const std::string name = in.str();
    const auto size = in.u64();
    if (name != s.name || size != s.size) {
      throw FormatError("checkpoint: unexpected segment '" + name + "'");
    }
    in.require(size * 4);
    for (std::size_t i = 0; i < size; ++i) params[s.offset + i] = in.f32();
  }
  if (!in.done()) throw FormatError("checkpoint: trailing bytes");
  scorer.set_params(params);
  return scorer;
}

void save_checkpoint(const Scorer& scorer, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(scorer));
}

Scorer load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace nsearch
