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
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "nsearch/common.h"

namespace nsearch {

enum class BehaviorType : std::uint8_t { kPageView = 0, kBuy = 1, kCart = 2, kFavorite = 3 };

// Accepts "pv"/"buy"/"cart"/"fav" or the numeric tag 0-3.
std::optional<BehaviorType> parse_behavior(std::string_view text);
std::string_view behavior_name(BehaviorType b);

struct Item {
  ItemId id = 0;
  CategoryId category = 0;
};

struct Event {
  UserId user_id = 0;
  ItemId item_id = 0;
  std::int64_t timestamp = 0;
  BehaviorType behavior = BehaviorType::kPageView;

  bool operator==(const Event&) const = default;
};

struct DatasetSplits {
  std::vector<UserId> train;
  std::vector<UserId> valid;
  std::vector<UserId> test;
};

// Items are numbered densely [0, |V|); each user's events are sorted by
// (timestamp, item_id). Treated as immutable once built.
struct Dataset {
  std::vector<Item> items;
  std::size_t n_categories = 0;
  std::map<UserId, std::vector<Event>> users;
  DatasetSplits splits;
  // original_item_ids[new_id] is the id from the source log.
  std::vector<std::int64_t> original_item_ids;
  std::vector<std::int64_t> original_category_ids;
  // Users selected for evaluation but skipped because they had < 2 events.
  std::size_t skipped_eval_users = 0;

  std::size_t n_items() const noexcept { return items.size(); }
  std::size_t n_events() const noexcept;
  const std::vector<Event>& events_of(UserId user) const;
  CategoryId category_of(ItemId item) const;
};

// Reads `user,item,category,behavior,timestamp` records (comma or tab
// separated, one per line). Users with fewer than `min_user_events` events
// are dropped before items are renumbered in first-seen order. An optional
// `item_id,category_id` sidecar overrides the categories from the log.
Dataset load_events(const std::filesystem::path& path, std::size_t min_user_events,
                    const std::optional<std::filesystem::path>& item_features = std::nullopt);
Dataset parse_events(std::string_view text, std::size_t min_user_events,
                     std::string_view item_features = {});

struct SyntheticOptions {
  // 0 picks max(1, n_items / 100).
  std::size_t n_clusters = 0;
  // Sharpness of the softmax over user-item affinity used to draw events.
  double affinity_temperature = 2.0;
  double item_noise = 0.5;
  double user_noise = 0.5;
  // Clusters each user draws events from, uniformly per event.
  std::size_t interests_per_user = 1;
};

// Planted-cluster corpus together with the latent structure it was drawn from.
struct SyntheticCorpus {
  Dataset dataset;
  std::size_t n_clusters = 0;
  std::vector<std::uint32_t> user_cluster;  // first interest, indexed by user id
  std::vector<double> item_latent;          // n_items x dim, row-major
  std::vector<double> user_latent;          // n_users x dim, row-major
};

SyntheticCorpus generate_synthetic_corpus(std::size_t n_users, std::size_t n_items,
                                          std::size_t dim, std::size_t seq_len,
                                          std::uint64_t seed,
                                          const SyntheticOptions& options = {});
Dataset generate_synthetic(std::size_t n_users, std::size_t n_items, std::size_t dim,
                           std::size_t seq_len, std::uint64_t seed,
                           const SyntheticOptions& options = {});

// 1-based index of the held-out event for a sequence of length l: ceil(l/2).
constexpr std::size_t leave_middle_label_index(std::size_t length) {
  return (length + 1) / 2;
}

// Samples evaluation users with a seeded shuffle: the first `n_eval_users`
// eligible users go to test, the next `n_valid_users` to valid, everyone else
// (including skipped users with < 2 events) to train.
Dataset split_leave_middle(const Dataset& dataset, std::size_t n_eval_users,
                           std::uint64_t seed, std::size_t n_valid_users = 0);

enum class GroundTruthMode { kHeldOutEvent, kAllFutureEvents };

// Query context plus ground truth for one evaluation user.
struct EvalQuery {
  UserId user_id = 0;
  std::vector<ItemId> context;  // events strictly before the held-out one
  ItemId label = 0;
  std::vector<ItemId> ground_truth;
};

std::vector<EvalQuery> make_eval_queries(const Dataset& dataset, std::span<const UserId> users,
                                         GroundTruthMode mode = GroundTruthMode::kHeldOutEvent);

// Versioned little-endian snapshot ("NSDS").
std::vector<std::uint8_t> serialize_dataset(const Dataset& dataset);
Dataset deserialize_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace nsearch
