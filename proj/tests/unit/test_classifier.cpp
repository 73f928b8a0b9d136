#include <gtest/gtest.h>

#include <random>
#include <set>

#include "strata/classifier.hpp"
#include "support/oracles.hpp"

using namespace strata;

namespace {

std::vector<Location> pages(std::size_t n, std::uint64_t first = 0) {
  std::vector<Location> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(Location{"app", (first + i) * 4096, granularity::page});
  return out;
}

std::vector<EventId> events(std::initializer_list<const char*> names) {
  std::vector<EventId> out;
  for (auto n : names) out.push_back(EventId{n});
  return out;
}

// Brute force: every (event, location) score, from the definition.
double oracle_score(const HitRatioMatrix& h, std::size_t e, std::size_t l) {
  double s = h.ratio(e, l);
  for (std::size_t o = 0; o < h.events().size(); ++o) {
    if (o != e) s -= h.ratio(o, l);
  }
  return s;
}

const TemplateEntry* entry_for(const ClassifiedTemplate& t, const EventId& e) {
  for (const auto& entry : t.entries) {
    if (std::find(entry.group.begin(), entry.group.end(), e) != entry.group.end()) return &entry;
  }
  return nullptr;
}

}  // namespace

TEST(Classifier, SingleEventSingleLocation) {
  HitRatioMatrix h(events({"E", "IDLE"}), pages(1), 10);
  h.set(0, 0, 10, 10);
  h.set(1, 0, 0, 10);
  const auto t = classify(h, {});
  ASSERT_EQ(t.entries.size(), 1u);
  EXPECT_EQ(t.entries[0].group, events({"E"}));
  EXPECT_DOUBLE_EQ(t.entries[0].score, 1.0);
}

TEST(Classifier, ClearWinnerMatchesExhaustiveScoring) {
  HitRatioMatrix h(events({"A", "B", "IDLE"}), pages(4), 20);
  h.set(0, 2, 19, 20);  // 0.95
  h.set(0, 0, 1, 20);
  h.set(1, 2, 1, 20);
  h.set(1, 3, 1, 20);
  h.set(2, 1, 1, 20);
  std::size_t best = 0;
  for (std::size_t l = 0; l < 4; ++l) {
    if (oracle_score(h, 0, l) > oracle_score(h, 0, best)) best = l;
  }
  EXPECT_EQ(best, 2u);
  const auto t = classify(h, {});
  const auto* a = entry_for(t, EventId{"A"});
  ASSERT_NE(a, nullptr);
  EXPECT_EQ(a->location, h.locations()[best]);
  EXPECT_DOUBLE_EQ(a->score, oracle_score(h, 0, best));
  EXPECT_GE(a->score, 0.85);
  // B never reaches 0.5 and cannot be rescued by merging with A's page.
  EXPECT_EQ(t.unclassifiable, events({"B"}));
  EXPECT_EQ(t.warnings.size(), 1u);
}

TEST(Classifier, SharedPageMergesIntoGroup) {
  HitRatioMatrix h(events({"E1", "E2", "IDLE"}), pages(3), 10);
  h.set(0, 1, 9, 10);
  h.set(1, 1, 9, 10);
  EXPECT_DOUBLE_EQ(row_minus_noise(h, EventId{"E1"})[1], 0.0);
  const auto t = classify(h, {});
  ASSERT_EQ(t.entries.size(), 1u);
  EXPECT_EQ(t.entries[0].group, events({"E1", "E2"}));
  EXPECT_EQ(t.entries[0].location, h.locations()[1]);
  EXPECT_NEAR(t.entries[0].score, 0.9, 1e-12);
  EXPECT_TRUE(t.unclassifiable.empty());
  t.validate();

  ClassifierConfig single;
  single.max_group_size = 1;
  const auto strict = classify(h, single);
  EXPECT_TRUE(strict.entries.empty());
  EXPECT_EQ(strict.unclassifiable, events({"E1", "E2"}));
}

TEST(Classifier, IdleFloorRejectsNoisyCandidate) {
  HitRatioMatrix h(events({"A", "IDLE"}), pages(2), 10);
  h.set(0, 0, 10, 10);
  h.set(1, 0, 4, 10);  // score 0.6 clears max(0.5, 0.4 + 0.1)
  EXPECT_EQ(classify(h, {}).entries.size(), 1u);
  ClassifierConfig wide;
  wide.noise_margin = 0.25;  // needs 0.65
  EXPECT_TRUE(classify(h, wide).entries.empty());
}

TEST(Classifier, TiesGoToLowestOffset) {
  HitRatioMatrix h(events({"A", "IDLE"}), pages(4), 10);
  h.set(0, 3, 10, 10);
  h.set(0, 1, 10, 10);
  const auto t = classify(h, {});
  ASSERT_EQ(t.entries.size(), 1u);
  EXPECT_EQ(t.entries[0].location.offset, 4096u);
}

TEST(Classifier, Errors) {
  HitRatioMatrix no_idle(events({"A"}), pages(1), 1);
  EXPECT_THROW(classify(no_idle, {}), Error);
  ClassifierConfig lax;
  lax.require_idle = false;
  no_idle.set(0, 0, 1, 1);
  EXPECT_EQ(classify(no_idle, lax).entries.size(), 1u);
  HitRatioMatrix only_idle(events({"IDLE"}), pages(1), 1);
  EXPECT_THROW(classify(only_idle, {}), Error);
  ClassifierConfig bad;
  bad.min_score = 0.0;
  EXPECT_THROW(classify(only_idle, bad), Error);
}

TEST(Classifier, SuppressListsFollowTheWindow) {
  HitRatioMatrix h(events({"A", "IDLE"}), pages(200), 10);
  h.set(0, 100, 10, 10);
  const auto t = classify(h, {});
  ASSERT_EQ(t.entries.size(), 1u);
  std::set<std::uint64_t> got;
  for (const auto& p : t.entries[0].prefetch_suppress) got.insert(p.offset / 4096);
  std::set<std::uint64_t> want;
  for (std::uint64_t p = 84; p <= 115; ++p) {
    if (p != 100) want.insert(p);
  }
  EXPECT_EQ(got, want);
  ClassifierConfig off;
  off.readaround = ReadaroundModel::disabled();
  EXPECT_TRUE(classify(h, off).entries[0].prefetch_suppress.empty());
}

TEST(Classifier, ArgmaxIsScaleInvariant) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto names = events({"A", "B", "C", "IDLE"});
    HitRatioMatrix h(names, pages(12), 50), scaled(names, pages(12), 150);
    for (std::size_t e = 0; e < names.size(); ++e) {
      for (std::size_t l = 0; l < 12; ++l) {
        const auto hits = static_cast<std::uint32_t>(rng() % 51);
        h.set(e, l, hits, 50);
        scaled.set(e, l, hits, 150);  // every ratio divided by 3
      }
    }
    for (const auto& e : names) {
      EXPECT_EQ(detail::argmax_location(h, row_minus_noise(h, e)),
                detail::argmax_location(scaled, row_minus_noise(scaled, e)));
    }
  }
}

TEST(Classifier, RecoversPlantedMappings) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    test_support::Planting p;
    const auto keys = 2 + rng() % 12;
    const auto h = test_support::planted_one_to_one(rng, keys, keys + rng() % 20, 20, p);
    const auto t = classify(h, {});
    ASSERT_TRUE(t.unclassifiable.empty()) << "trial " << trial;
    ASSERT_EQ(t.entries.size(), keys);
    for (const auto& entry : t.entries) {
      ASSERT_EQ(entry.group.size(), 1u);
      EXPECT_EQ(entry.location, p.locations[p.truth.at(entry.group[0])]) << "trial " << trial;
    }
    t.validate();
  }
}

TEST(Classifier, GroupScoreIsMinimumOfMemberScores) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 40; ++trial) {
    const auto names = events({"A", "B", "C", "D", "IDLE"});
    HitRatioMatrix h(names, pages(6), 20);
    // Two or three keys share one hot page; the rest is light noise.
    const auto hot = rng() % 6;
    const auto sharing = 2 + rng() % 2;
    for (std::size_t e = 0; e < names.size(); ++e) {
      for (std::size_t l = 0; l < 6; ++l) h.set(e, l, static_cast<std::uint32_t>(rng() % 2), 20);
      if (e < sharing) h.set(e, hot, 18 + static_cast<std::uint32_t>(rng() % 3), 20);
    }
    const auto t = classify(h, {});
    t.validate();
    for (const auto& entry : t.entries) {
      const auto l = static_cast<std::size_t>(
          std::find(h.locations().begin(), h.locations().end(), entry.location) - h.locations().begin());
      double outside = 0.0;
      for (std::size_t e = 0; e < names.size(); ++e) {
        if (std::find(entry.group.begin(), entry.group.end(), names[e]) == entry.group.end()) {
          outside += h.ratio(e, l);
        }
      }
      double min_member = 1e9;
      for (const auto& m : entry.group) min_member = std::min(min_member, h.ratio(*h.event_index(m), l) - outside);
      EXPECT_DOUBLE_EQ(entry.score, min_member);
    }
    const auto* a = entry_for(t, EventId{"A"});
    ASSERT_NE(a, nullptr) << "trial " << trial;
    EXPECT_EQ(a->group.size(), sharing);
    EXPECT_EQ(a->location.offset, hot * 4096);
  }
}

// ---- read-around filter --------------------------------------------------------------

namespace {

ClassifiedTemplate two_entries(std::uint64_t pa, std::uint64_t pb) {
  ClassifiedTemplate t;
  t.entries.push_back(TemplateEntry{events({"A"}), Location{"app", pa * 4096, granularity::page}, 0.9, {}, {}});
  t.entries.push_back(TemplateEntry{events({"B"}), Location{"app", pb * 4096, granularity::page}, 0.8, {}, {}});
  return t;
}

std::vector<std::uint64_t> page_numbers(const std::vector<Location>& v) {
  std::vector<std::uint64_t> out;
  for (const auto& l : v) out.push_back(l.offset / 4096);
  return out;
}

}  // namespace

TEST(ReadaroundFilter, OverlapKeepsBothWithBoundaries) {
  const HitRatioMatrix h(events({"A", "B", "IDLE"}), pages(300), 1);
  const auto t = filter_readaround(two_entries(100, 110), h, ReadaroundModel{});
  ASSERT_EQ(t.entries.size(), 2u);
  EXPECT_EQ(page_numbers(t.entries[0].distinguishers), (std::vector<std::uint64_t>{84, 115}));
  EXPECT_EQ(page_numbers(t.entries[1].distinguishers), (std::vector<std::uint64_t>{94, 125}));
  EXPECT_TRUE(t.warnings.empty());
}

TEST(ReadaroundFilter, DisjointWindowsUntouched) {
  const HitRatioMatrix h(events({"A", "B", "IDLE"}), pages(300), 1);
  const auto in = two_entries(100, 200);
  EXPECT_EQ(filter_readaround(in, h, ReadaroundModel{}), in);
}

TEST(ReadaroundFilter, SamePageCollapsesWithWarning) {
  const HitRatioMatrix h(events({"A", "B", "IDLE"}), pages(300), 1);
  const auto t = filter_readaround(two_entries(100, 100), h, ReadaroundModel{});
  ASSERT_EQ(t.entries.size(), 1u);
  EXPECT_EQ(t.entries[0].group, events({"A", "B"}));
  EXPECT_DOUBLE_EQ(t.entries[0].score, 0.8);
  EXPECT_EQ(t.warnings.size(), 1u);
  t.validate();
}

TEST(ReadaroundFilter, DisabledModelIsIdentity) {
  const HitRatioMatrix h(events({"A", "B", "IDLE"}), pages(300), 1);
  const auto in = two_entries(100, 100);
  EXPECT_EQ(filter_readaround(in, h, ReadaroundModel::disabled()), in);
}
