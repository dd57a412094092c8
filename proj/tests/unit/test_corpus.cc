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

#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <string>

#include "nsearch/binary_io.h"
#include "nsearch/corpus.h"
#include "test_util.h"

namespace nsearch {
namespace {

std::string events_for_user(UserId user, int n, int first_item = 100) {
  std::string out;
  for (int i = 0; i < n; ++i) {
    out += std::to_string(user) + "," + std::to_string(first_item + i) + ",1,pv," +
           std::to_string(i) + "\n";
  }
  return out;
}

TEST(LoadEvents, IdentityCase) {
  const Dataset ds = parse_events("1,10,3,pv,100\n1,11,3,buy,101\n1,12,4,cart,102\n", 1);
  ASSERT_EQ(ds.users.size(), 1u);
  EXPECT_EQ(ds.events_of(1).size(), 3u);
  EXPECT_EQ(ds.n_items(), 3u);
  EXPECT_EQ(ds.n_categories, 2u);
  EXPECT_EQ(ds.events_of(1)[1].behavior, BehaviorType::kBuy);
}

TEST(LoadEvents, FilterBoundaryYieldsEmptyDatasetError) {
  EXPECT_THROW(parse_events(events_for_user(1, 9), 10), EmptyDatasetError);
  EXPECT_EQ(parse_events(events_for_user(1, 10), 10).users.size(), 1u);
}

TEST(LoadEvents, FilterDropsOnlyShortUsers) {
  const Dataset ds = parse_events(events_for_user(1, 9) + events_for_user(2, 10, 500), 10);
  ASSERT_EQ(ds.users.size(), 1u);
  EXPECT_TRUE(ds.users.count(2));
  // Items seen only by dropped users are not in the vocabulary.
  EXPECT_EQ(ds.n_items(), 10u);
}

TEST(LoadEvents, DenseRenumberingInFirstSeenOrder) {
  const Dataset ds = parse_events("1,5,0,pv,1\n1,900,0,pv,2\n1,7,0,pv,3\n1,900,0,pv,4\n", 1);
  ASSERT_EQ(ds.n_items(), 3u);
  EXPECT_EQ(ds.original_item_ids, (std::vector<std::int64_t>{5, 900, 7}));
  std::vector<ItemId> ids;
  for (const auto& e : ds.events_of(1)) ids.push_back(e.item_id);
  EXPECT_EQ(ids, (std::vector<ItemId>{0, 1, 2, 1}));
}

TEST(LoadEvents, RenumberingIsABijection) {
  std::string text;
  for (int u = 0; u < 20; ++u) {
    for (int i = 0; i < 5; ++i) {
      text += std::to_string(u) + "," + std::to_string((u * 37 + i * 101) % 53 * 11) + ",0,pv," +
              std::to_string(i) + "\n";
    }
  }
  const Dataset ds = parse_events(text, 1);
  std::set<std::int64_t> originals(ds.original_item_ids.begin(), ds.original_item_ids.end());
  EXPECT_EQ(originals.size(), ds.n_items());
  for (const auto& [_, events] : ds.users) {
    for (const auto& e : events) EXPECT_LT(e.item_id, ds.n_items());
  }
}

TEST(LoadEvents, EventsSortedByTimestampThenItem) {
  const Dataset ds = parse_events("1,10,0,pv,5\n1,11,0,pv,1\n1,12,0,pv,5\n", 1);
  const auto& ev = ds.events_of(1);
  EXPECT_EQ(ev[0].timestamp, 1);
  EXPECT_EQ(ds.original_item_ids[ev[1].item_id], 10);
  EXPECT_EQ(ds.original_item_ids[ev[2].item_id], 12);
}

TEST(LoadEvents, TabSeparatedAndNumericBehaviors) {
  const Dataset ds = parse_events("1\t10\t0\t3\t5\n1\t11\t0\t2\t6\n", 1);
  EXPECT_EQ(ds.events_of(1)[0].behavior, BehaviorType::kFavorite);
  EXPECT_EQ(ds.events_of(1)[1].behavior, BehaviorType::kCart);
}

TEST(LoadEvents, MalformedRecordReportsLine) {
  try {
    parse_events("1,10,0,pv,5\n1,xx,0,pv,6\n", 1);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(parse_events("1,10,0,pv\n", 1), ParseError);
  EXPECT_THROW(parse_events("1,10,0,click,5\n", 1), ParseError);
}

TEST(LoadEvents, SidecarOverridesCategories) {
  const Dataset ds = parse_events("1,10,0,pv,1\n1,11,0,pv,2\n", 1, "11,42\n");
  EXPECT_EQ(ds.n_categories, 2u);
  EXPECT_EQ(ds.original_category_ids[ds.category_of(1)], 42);
  EXPECT_THROW(ds.category_of(2), OutOfVocabularyError);
}

TEST(LoadEvents, ReadsFromDisk) {
  testing::TempDir dir;
  write_text_file(dir / "events.csv", "7,1,1,pv,1\n7,2,1,pv,2\n");
  const Dataset ds = load_events(dir / "events.csv", 2);
  EXPECT_EQ(ds.events_of(7).size(), 2u);
  EXPECT_THROW(load_events(dir / "nope.csv", 1), Error);
}

TEST(Synthetic, DeterministicBytes) {
  const auto a = serialize_dataset(generate_synthetic(2, 10, 4, 5, 7));
  const auto b = serialize_dataset(generate_synthetic(2, 10, 4, 5, 7));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, serialize_dataset(generate_synthetic(2, 10, 4, 5, 8)));
}

TEST(Synthetic, SingleItemCorpus) {
  const Dataset ds = generate_synthetic(1, 1, 3, 6, 1);
  ASSERT_EQ(ds.events_of(0).size(), 6u);
  for (const auto& e : ds.events_of(0)) EXPECT_EQ(e.item_id, 0u);
}

TEST(Synthetic, RejectsZeroCounts) {
  EXPECT_THROW(generate_synthetic(0, 10, 4, 5, 1), ConfigError);
}

TEST(Synthetic, WithinClusterFractionBeatsUniform) {
  const SyntheticCorpus c = generate_synthetic_corpus(200, 1000, 8, 20, 11);
  std::size_t hits = 0, total = 0;
  for (const auto& [uid, events] : c.dataset.users) {
    for (const auto& e : events) {
      hits += c.dataset.category_of(e.item_id) == c.user_cluster[uid];
      ++total;
    }
  }
  const double frac = static_cast<double>(hits) / static_cast<double>(total);
  EXPECT_GT(frac, 1.0 / static_cast<double>(c.n_clusters));
}

TEST(Synthetic, MultipleInterestsSpreadEvents) {
  SyntheticOptions opts;
  opts.interests_per_user = 3;
  const SyntheticCorpus one = generate_synthetic_corpus(100, 1000, 8, 30, 5);
  const SyntheticCorpus three = generate_synthetic_corpus(100, 1000, 8, 30, 5, opts);
  auto mean_categories = [](const SyntheticCorpus& c) {
    double s = 0;
    for (const auto& [_, events] : c.dataset.users) {
      std::set<CategoryId> cats;
      for (const auto& e : events) cats.insert(c.dataset.category_of(e.item_id));
      s += static_cast<double>(cats.size());
    }
    return s / static_cast<double>(c.dataset.users.size());
  };
  EXPECT_GT(mean_categories(three), mean_categories(one));
}

TEST(Split, LabelIndexFormula) {
  EXPECT_EQ(leave_middle_label_index(2), 1u);
  EXPECT_EQ(leave_middle_label_index(4), 2u);
  EXPECT_EQ(leave_middle_label_index(5), 3u);
}

Dataset fixed_lengths(std::initializer_list<int> lengths) {
  std::string text;
  UserId u = 0;
  for (int l : lengths) {
    text += events_for_user(u, l, 1000 * static_cast<int>(u + 1));
    ++u;
  }
  return parse_events(text, 1);
}

TEST(Split, ContextIsEventsBeforeLabel) {
  const Dataset ds = split_leave_middle(fixed_lengths({4, 5}), 2, 1);
  ASSERT_EQ(ds.splits.test.size(), 2u);
  const auto queries = make_eval_queries(ds, ds.splits.test);
  ASSERT_EQ(queries.size(), 2u);
  for (const auto& q : queries) {
    const auto& ev = ds.events_of(q.user_id);
    if (ev.size() == 4) {
      EXPECT_EQ(q.context, (std::vector<ItemId>{ev[0].item_id}));
      EXPECT_EQ(q.label, ev[1].item_id);
    } else {
      EXPECT_EQ(q.context, (std::vector<ItemId>{ev[0].item_id, ev[1].item_id}));
      EXPECT_EQ(q.label, ev[2].item_id);
    }
    EXPECT_EQ(q.ground_truth, (std::vector<ItemId>{q.label}));
  }
}

TEST(Split, AllFutureGroundTruth) {
  const Dataset ds = split_leave_middle(fixed_lengths({5}), 1, 1);
  const auto q = make_eval_queries(ds, ds.splits.test, GroundTruthMode::kAllFutureEvents);
  ASSERT_EQ(q.size(), 1u);
  EXPECT_EQ(q[0].ground_truth.size(), 3u);
}

TEST(Split, DeterministicAndDisjoint) {
  const Dataset base = generate_synthetic(50, 100, 4, 6, 3);
  const Dataset a = split_leave_middle(base, 10, 9, 5);
  const Dataset b = split_leave_middle(base, 10, 9, 5);
  EXPECT_EQ(a.splits.test, b.splits.test);
  EXPECT_EQ(a.splits.valid, b.splits.valid);
  EXPECT_EQ(a.splits.test.size(), 10u);
  EXPECT_EQ(a.splits.valid.size(), 5u);
  std::set<UserId> all;
  for (const auto* part : {&a.splits.train, &a.splits.valid, &a.splits.test}) {
    for (auto u : *part) EXPECT_TRUE(all.insert(u).second) << "user " << u << " in two splits";
  }
  EXPECT_EQ(all.size(), 50u);
  EXPECT_NE(split_leave_middle(base, 10, 10).splits.test, a.splits.test);
}

TEST(Split, ShortUsersSkippedWithCounter) {
  const Dataset ds = split_leave_middle(fixed_lengths({1, 1, 1}), 3, 0);
  EXPECT_EQ(ds.skipped_eval_users, 3u);
  EXPECT_TRUE(ds.splits.test.empty());
  EXPECT_EQ(ds.splits.train.size(), 3u);
}

TEST(Split, TooManyEvalUsersRejected) {
  EXPECT_THROW(split_leave_middle(fixed_lengths({3, 3}), 3, 0), ConfigError);
}

TEST(DatasetSnapshot, RoundTripAndCorruption) {
  const Dataset ds = split_leave_middle(generate_synthetic(20, 50, 4, 5, 2), 5, 2, 2);
  const auto bytes = serialize_dataset(ds);
  const Dataset back = deserialize_dataset(bytes);
  EXPECT_EQ(serialize_dataset(back), bytes);
  EXPECT_EQ(back.splits.test, ds.splits.test);
  EXPECT_EQ(back.users, ds.users);

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_dataset(bad), FormatError);
  const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + bytes.size() / 2);
  EXPECT_THROW(deserialize_dataset(truncated), FormatError);
}

}  // namespace
}  // namespace nsearch
