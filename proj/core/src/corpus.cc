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

#include "nsearch/corpus.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_map>

#include "nsearch/binary_io.h"
#include "nsearch/rng.h"

namespace nsearch {
namespace {

constexpr std::string_view kDatasetMagic = "NSDS";
constexpr std::uint32_t kDatasetVersion = 1;

struct RawRecord {
  std::int64_t user;
  std::int64_t item;
  std::int64_t category;
  BehaviorType behavior;
  std::int64_t timestamp;
};

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',' || line[i] == '\t') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

std::int64_t parse_int(std::string_view tok, std::size_t line, const char* field) {
  while (!tok.empty() && (tok.front() == ' ')) tok.remove_prefix(1);
  while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\r')) tok.remove_suffix(1);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError(std::string("bad ") + field + " '" + std::string(tok) + "'", line);
  }
  return v;
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    start = end + 1;
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    fn(line, line_no);
  }
}

void sort_events(std::vector<Event>& events) {
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    return a.timestamp != b.timestamp ? a.timestamp < b.timestamp : a.item_id < b.item_id;
  });
}

std::string slurp(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

}  // namespace

std::optional<BehaviorType> parse_behavior(std::string_view text) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  if (text == "pv" || text == "0") return BehaviorType::kPageView;
  if (text == "buy" || text == "1") return BehaviorType::kBuy;
  if (text == "cart" || text == "2") return BehaviorType::kCart;
  if (text == "fav" || text == "3") return BehaviorType::kFavorite;
  return std::nullopt;
}

std::string_view behavior_name(BehaviorType b) {
  switch (b) {
    case BehaviorType::kPageView: return "pv";
    case BehaviorType::kBuy: return "buy";
    case BehaviorType::kCart: return "cart";
    case BehaviorType::kFavorite: return "fav";
  }
  return "?";
}

std::size_t Dataset::n_events() const noexcept {
  std::size_t n = 0;
  for (const auto& [_, ev] : users) n += ev.size();
  return n;
}

const std::vector<Event>& Dataset::events_of(UserId user) const {
  auto it = users.find(user);
  if (it == users.end()) throw Error("unknown user " + std::to_string(user));
  return it->second;
}

CategoryId Dataset::category_of(ItemId item) const {
  if (item >= items.size()) throw OutOfVocabularyError("item " + std::to_string(item));
  return items[item].category;
}

Dataset parse_events(std::string_view text, std::size_t min_user_events,
                     std::string_view item_features) {
  std::vector<RawRecord> records;
  for_each_line(text, [&](std::string_view line, std::size_t line_no) {
    const auto fields = split_fields(line);
    if (fields.size() != 5) {
      throw ParseError("expected 5 fields, got " + std::to_string(fields.size()), line_no);
    }
    RawRecord r{};
    r.user = parse_int(fields[0], line_no, "user id");
    r.item = parse_int(fields[1], line_no, "item id");
    r.category = parse_int(fields[2], line_no, "category id");
    auto b = parse_behavior(fields[3]);
    if (!b) throw ParseError("bad behavior '" + std::string(fields[3]) + "'", line_no);
    r.behavior = *b;
    r.timestamp = parse_int(fields[4], line_no, "timestamp");
    records.push_back(r);
  });

  std::unordered_map<std::int64_t, std::int64_t> sidecar;
  for_each_line(item_features, [&](std::string_view line, std::size_t line_no) {
    const auto fields = split_fields(line);
    if (fields.size() != 2) {
      throw ParseError("item features: expected 2 fields, got " + std::to_string(fields.size()),
                       line_no);
    }
    sidecar[parse_int(fields[0], line_no, "item id")] =
        parse_int(fields[1], line_no, "category id");
  });

  std::unordered_map<std::int64_t, std::size_t> per_user;
  for (const auto& r : records) ++per_user[r.user];

  Dataset ds;
  std::unordered_map<std::int64_t, ItemId> item_index;
  std::vector<std::int64_t> item_raw_category;
  for (const auto& r : records) {
    if (per_user[r.user] < min_user_events) continue;
    auto [it, inserted] = item_index.try_emplace(r.item, static_cast<ItemId>(item_index.size()));
    if (inserted) {
      ds.original_item_ids.push_back(r.item);
      auto sc = sidecar.find(r.item);
      item_raw_category.push_back(sc != sidecar.end() ? sc->second : r.category);
    }
    ds.users[r.user].push_back(Event{r.user, it->second, r.timestamp, r.behavior});
  }
  if (ds.users.empty()) {
    throw EmptyDatasetError("no users with at least " + std::to_string(min_user_events) +
                            " events");
  }

  std::unordered_map<std::int64_t, CategoryId> cat_index;
  ds.items.resize(ds.original_item_ids.size());
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    auto [it, inserted] =
        cat_index.try_emplace(item_raw_category[i], static_cast<CategoryId>(cat_index.size()));
    if (inserted) ds.original_category_ids.push_back(item_raw_category[i]);
    ds.items[i] = Item{static_cast<ItemId>(i), it->second};
  }
  ds.n_categories = cat_index.size();
  for (auto& [_, events] : ds.users) sort_events(events);
  for (const auto& [uid, _] : ds.users) ds.splits.train.push_back(uid);
  return ds;
}

Dataset load_events(const std::filesystem::path& path, std::size_t min_user_events,
                    const std::optional<std::filesystem::path>& item_features) {
  const std::string text = slurp(path);
  const std::string sidecar = item_features ? slurp(*item_features) : std::string();
  return parse_events(text, min_user_events, sidecar);
}

SyntheticCorpus generate_synthetic_corpus(std::size_t n_users, std::size_t n_items,
                                          std::size_t dim, std::size_t seq_len,
                                          std::uint64_t seed, const SyntheticOptions& options) {
  if (n_users == 0 || n_items == 0 || dim == 0 || seq_len == 0) {
    throw ConfigError("generate_synthetic: all counts must be >= 1");
  }
  SyntheticCorpus out;
  out.n_clusters = options.n_clusters != 0 ? std::min(options.n_clusters, n_items)
                                           : std::max<std::size_t>(1, n_items / 100);
  const std::size_t k = out.n_clusters;

  Rng rng(derive_seed(seed, "synthetic"));
  std::vector<double> centers(k * dim);
  for (auto& c : centers) c = rng.normal();

  Dataset& ds = out.dataset;
  ds.n_categories = k;
  ds.items.resize(n_items);
  out.item_latent.resize(n_items * dim);
  for (std::size_t v = 0; v < n_items; ++v) {
    // The first k items seed every cluster so that none is empty.
    const auto c = static_cast<CategoryId>(v < k ? v : rng.below(k));
    ds.items[v] = Item{static_cast<ItemId>(v), c};
    ds.original_item_ids.push_back(static_cast<std::int64_t>(v));
    for (std::size_t j = 0; j < dim; ++j) {
      out.item_latent[v * dim + j] = centers[c * dim + j] + options.item_noise * rng.normal();
    }
  }
  for (std::size_t c = 0; c < k; ++c) ds.original_category_ids.push_back(static_cast<std::int64_t>(c));

  const std::size_t n_interests = std::clamp<std::size_t>(options.interests_per_user, 1, k);
  out.user_cluster.resize(n_users);
  out.user_latent.resize(n_users * dim);
  std::vector<double> weights(n_items);
  std::vector<std::vector<double>> cdfs(n_interests, std::vector<double>(n_items));
  std::vector<double> latent(dim);
  for (std::size_t u = 0; u < n_users; ++u) {
    // Distinct interest clusters; the first one is reported as the user's.
    std::vector<std::uint32_t> clusters;
    while (clusters.size() < n_interests) {
      const auto c = static_cast<std::uint32_t>(rng.below(k));
      if (std::find(clusters.begin(), clusters.end(), c) == clusters.end()) clusters.push_back(c);
    }
    out.user_cluster[u] = clusters.front();
    for (std::size_t m = 0; m < n_interests; ++m) {
      const std::size_t c = clusters[m];
      for (std::size_t j = 0; j < dim; ++j) {
        latent[j] = centers[c * dim + j] + options.user_noise * rng.normal();
      }
      if (m == 0) std::copy(latent.begin(), latent.end(), out.user_latent.begin() + u * dim);
      double max_logit = -INFINITY;
      for (std::size_t v = 0; v < n_items; ++v) {
        double dot = 0.0;
        for (std::size_t j = 0; j < dim; ++j) dot += latent[j] * out.item_latent[v * dim + j];
        weights[v] = options.affinity_temperature * dot;
        max_logit = std::max(max_logit, weights[v]);
      }
      for (auto& w : weights) w = std::exp(w - max_logit);
      std::partial_sum(weights.begin(), weights.end(), cdfs[m].begin());
    }

    auto& events = ds.users[static_cast<UserId>(u)];
    for (std::size_t t = 0; t < seq_len; ++t) {
      const auto& cdf = n_interests == 1 ? cdfs[0] : cdfs[rng.below(n_interests)];
      const double r = rng.uniform01() * cdf.back();
      auto pos = std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin();
      const auto item = static_cast<ItemId>(std::min<std::ptrdiff_t>(pos, n_items - 1));
      events.push_back(Event{static_cast<UserId>(u), item, static_cast<std::int64_t>(t),
                             BehaviorType::kPageView});
    }
    ds.splits.train.push_back(static_cast<UserId>(u));
  }
  return out;
}

Dataset generate_synthetic(std::size_t n_users, std::size_t n_items, std::size_t dim,
                           std::size_t seq_len, std::uint64_t seed,
                           const SyntheticOptions& options) {
  return generate_synthetic_corpus(n_users, n_items, dim, seq_len, seed, options).dataset;
}

Dataset split_leave_middle(const Dataset& dataset, std::size_t n_eval_users, std::uint64_t seed,
                           std::size_t n_valid_users) {
  if (n_eval_users + n_valid_users > dataset.users.size()) {
    throw ConfigError("split_leave_middle: asked for " +
                      std::to_string(n_eval_users + n_valid_users) + " evaluation users, have " +
                      std::to_string(dataset.users.size()));
  }
  std::vector<UserId> order;
  order.reserve(dataset.users.size());
  for (const auto& [uid, _] : dataset.users) order.push_back(uid);
  Rng rng(derive_seed(seed, "split"));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }

  Dataset out = dataset;
  out.splits = {};
  out.skipped_eval_users = 0;
  std::size_t taken = 0;
  for (UserId uid : order) {
    const bool selected = taken < n_eval_users + n_valid_users;
    if (selected && dataset.users.at(uid).size() < 2) {
      ++out.skipped_eval_users;
      out.splits.train.push_back(uid);
      ++taken;
      continue;
    }
    if (taken < n_eval_users) {
      out.splits.test.push_back(uid);
    } else if (taken < n_eval_users + n_valid_users) {
      out.splits.valid.push_back(uid);
    } else {
      out.splits.train.push_back(uid);
    }
    ++taken;
  }
  std::sort(out.splits.train.begin(), out.splits.train.end());
  std::sort(out.splits.valid.begin(), out.splits.valid.end());
  std::sort(out.splits.test.begin(), out.splits.test.end());
  return out;
}

std::vector<EvalQuery> make_eval_queries(const Dataset& dataset, std::span<const UserId> users,
                                         GroundTruthMode mode) {
  std::vector<EvalQuery> out;
  out.reserve(users.size());
  for (UserId uid : users) {
    const auto& events = dataset.events_of(uid);
    if (events.size() < 2) continue;
    const std::size_t label_pos = leave_middle_label_index(events.size()) - 1;
    EvalQuery q;
    q.user_id = uid;
    for (std::size_t i = 0; i < label_pos; ++i) q.context.push_back(events[i].item_id);
    q.label = events[label_pos].item_id;
    if (mode == GroundTruthMode::kHeldOutEvent) {
      q.ground_truth = {q.label};
    } else {
      for (std::size_t i = label_pos; i < events.size(); ++i) q.ground_truth.push_back(events[i].item_id);
      std::sort(q.ground_truth.begin(), q.ground_truth.end());
      q.ground_truth.erase(std::unique(q.ground_truth.begin(), q.ground_truth.end()),
                           q.ground_truth.end());
    }
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<std::uint8_t> serialize_dataset(const Dataset& ds) {
  ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u64(ds.items.size());
  w.u64(ds.n_categories);
  for (const auto& item : ds.items) w.u32(item.category);
  for (auto id : ds.original_item_ids) w.i64(id);
  w.u64(ds.original_category_ids.size());
  for (auto id : ds.original_category_ids) w.i64(id);
  w.u64(ds.users.size());
  for (const auto& [uid, events] : ds.users) {
    w.i64(uid);
    w.u64(events.size());
    for (const auto& e : events) {
      w.u32(e.item_id);
      w.i64(e.timestamp);
      w.u8(static_cast<std::uint8_t>(e.behavior));
    }
  }
  for (const auto* part : {&ds.splits.train, &ds.splits.valid, &ds.splits.test}) {
    w.u64(part->size());
    for (auto uid : *part) w.i64(uid);
  }
  w.u64(ds.skipped_eval_users);
  return std::move(w).take();
}

Dataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  expect_header(in, kDatasetMagic, kDatasetVersion, "dataset");
  Dataset ds;
  const auto n_items = in.u64();
  ds.n_categories = in.u64();
  in.require(n_items * 12);
  ds.items.resize(n_items);
  for (std::size_t i = 0; i < n_items; ++i) {
    const auto c = in.u32();
    if (c >= ds.n_categories) throw RangeError("dataset: category id out of range");
    ds.items[i] = Item{static_cast<ItemId>(i), c};
  }
  ds.original_item_ids.resize(n_items);
  for (auto& id : ds.original_item_ids) id = in.i64();
  const auto n_cat_ids = in.u64();
  in.require(n_cat_ids * 8);
  ds.original_category_ids.resize(n_cat_ids);
  for (auto& id : ds.original_category_ids) id = in.i64();
  const auto n_users = in.u64();
  for (std::uint64_t u = 0; u < n_users; ++u) {
    const UserId uid = in.i64();
    const auto n = in.u64();
    in.require(n * 13);
    auto& events = ds.users[uid];
    events.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      Event e;
      e.user_id = uid;
      e.item_id = in.u32();
      if (e.item_id >= n_items) throw RangeError("dataset: event references unknown item");
      e.timestamp = in.i64();
      const auto b = in.u8();
      if (b > 3) throw RangeError("dataset: bad behavior tag");
      e.behavior = static_cast<BehaviorType>(b);
      events.push_back(e);
    }
  }
  for (auto* part : {&ds.splits.train, &ds.splits.valid, &ds.splits.test}) {
    const auto n = in.u64();
    in.require(n * 8);
    part->resize(n);
    for (auto& uid : *part) uid = in.i64();
  }
  ds.skipped_eval_users = in.u64();
  if (!in.done()) throw FormatError("dataset: trailing bytes");
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_file(path, serialize_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) {
  return deserialize_dataset(read_file(path));
}

}  // namespace nsearch
