#include <gtest/gtest.h>

#include <random>

#include "strata/core.hpp"

using namespace strata;

TEST(Granularity, RejectsNonPowersAndSubLine) {
  EXPECT_THROW(Granularity(32), Error);
  EXPECT_THROW(Granularity(96), Error);
  EXPECT_NO_THROW(Granularity(64));
  EXPECT_EQ(Granularity(4096).label(), "4KB");
  EXPECT_EQ(granularity::huge_page.label(), "2MB");
  EXPECT_EQ(granularity::cache_line.label(), "64B");
}

TEST(Ladder, MustStrictlyDecrease) {
  EXPECT_NO_THROW(validate_ladder(full_ladder()));
  EXPECT_THROW(validate_ladder({granularity::cache_line, granularity::page}), Error);
  EXPECT_THROW(validate_ladder({granularity::page, granularity::page}), Error);
  EXPECT_THROW(validate_ladder({}), Error);
}

TEST(MemoryRegion, OverflowRejected) {
  EXPECT_THROW(MemoryRegion::make("x", UINT64_MAX - 10, 11), Error);
  EXPECT_NO_THROW(MemoryRegion::make("x", UINT64_MAX - 10, 10));
}

TEST(EnclosingLocation, Examples) {
  EXPECT_EQ(enclosing_location("a", 4100, granularity::page).offset, 4096u);
  EXPECT_EQ(enclosing_location("a", 0, granularity::cache_line).offset, 0u);
  EXPECT_EQ(enclosing_location("a", 0x1050, granularity::cache_line).offset, 0x1040u);
}

TEST(Children, PageIntoLines) {
  const Location page{"a", 0, granularity::page};
  const auto kids = children(page, granularity::cache_line);
  ASSERT_EQ(kids.size(), 64u);
  for (std::size_t i = 0; i < kids.size(); ++i) EXPECT_EQ(kids[i].offset, i * 64);
}

TEST(Children, HugePageIntoPages) {
  EXPECT_EQ(children(Location{"a", 0, granularity::huge_page}, granularity::page).size(), 512u);
}

TEST(Children, ClippedAtRegionEnd) {
  // Region of 4224 bytes: its second page holds 128 bytes, i.e. two lines.
  const auto region = MemoryRegion::make("a", 0, 4224);
  const Location tail{"a", 4096, granularity::page};
  const auto kids = children(tail, granularity::cache_line, Extent{region.offset, region.end()});
  ASSERT_EQ(kids.size(), 2u);
  EXPECT_EQ(kids[0].offset, 4096u);
  EXPECT_EQ(kids[1].offset, 4160u);
}

TEST(Children, RejectsCoarserOrEqual) {
  const Location line{"a", 0, granularity::cache_line};
  EXPECT_THROW(children(line, granularity::page), Error);
  EXPECT_THROW(children(line, granularity::cache_line), Error);
}

TEST(Children, DualityAndAlignmentClosure) {
  std::mt19937_64 rng(11);
  const auto ladder = full_ladder();
  for (int trial = 0; trial < 200; ++trial) {
    const auto off = std::uniform_int_distribution<std::uint64_t>(0, (1ULL << 40))(rng);
    for (std::size_t i = 0; i + 1 < ladder.size(); ++i) {
      const auto coarse = enclosing_location("s", off, ladder[i]);
      const auto fine = enclosing_location("s", off, ladder[i + 1]);
      EXPECT_TRUE(coarse.contains(fine.offset) && coarse.contains(fine.end() - 1));
    }
    const auto page = enclosing_location("s", off, granularity::page);
    for (const auto& c : children(page, granularity::cache_line)) {
      EXPECT_EQ(enclosing_location(c, granularity::page), page);
    }
  }
}

TEST(CoveringLocations, UnalignedRegionKeepsPartialEnds) {
  const auto r = MemoryRegion::make("a", 100, 8000);  // bytes 100..8099
  const auto pages = covering_locations(r, granularity::page);
  ASSERT_EQ(pages.size(), 2u);
  EXPECT_EQ(pages[0].offset, 0u);
  EXPECT_EQ(pages[1].offset, 4096u);
}

namespace {

HitRatioMatrix make_matrix(const std::vector<std::vector<std::uint32_t>>& hits, std::uint32_t n,
                           std::vector<std::string> names) {
  std::vector<EventId> events;
  for (auto& s : names) events.push_back(EventId{s});
  std::vector<Location> locs;
  for (std::size_t l = 0; l < hits.front().size(); ++l) locs.push_back(Location{"a", l * 4096, granularity::page});
  HitRatioMatrix h(events, locs, n);
  for (std::size_t e = 0; e < hits.size(); ++e) {
    for (std::size_t l = 0; l < hits[e].size(); ++l) h.set(e, l, hits[e][l], n);
  }
  return h;
}

}  // namespace

TEST(RowMinusNoise, SingleEventWithSilentIdle) {
  const auto h = make_matrix({{10, 0}, {0, 0}}, 10, {"e", "IDLE"});
  const auto s = row_minus_noise(h, EventId{"e"});
  EXPECT_DOUBLE_EQ(s[0], 1.0);
  EXPECT_DOUBLE_EQ(s[1], 0.0);
}

TEST(RowMinusNoise, HandArithmetic) {
  // e = 0.9 at loc0, others 0.1 and 0.2 -> 0.6
  const auto h = make_matrix({{9, 0}, {1, 0}, {2, 0}}, 10, {"e", "f", "IDLE"});
  EXPECT_NEAR(row_minus_noise(h, EventId{"e"})[0], 0.6, 1e-12);
}

TEST(RowMinusNoise, SilentEventNeverPositive) {
  const auto h = make_matrix({{0, 0, 0}, {3, 7, 1}, {2, 0, 5}}, 10, {"e", "f", "IDLE"});
  for (double v : row_minus_noise(h, EventId{"e"})) EXPECT_LE(v, 0.0);
}

TEST(RowMinusNoise, UnknownEventRejected) {
  const auto h = make_matrix({{1}}, 1, {"e"});
  EXPECT_THROW(row_minus_noise(h, EventId{"nope"}), Error);
}

TEST(RowMinusNoise, LinearInOwnRowAndOrderInvariant) {
  const auto a = make_matrix({{4, 8, 2}, {1, 1, 3}, {0, 2, 1}}, 10, {"e", "f", "IDLE"});
  const auto b = make_matrix({{6, 8, 2}, {1, 1, 3}, {0, 2, 1}}, 10, {"e", "f", "IDLE"});
  const auto sa = row_minus_noise(a, EventId{"e"});
  const auto sb = row_minus_noise(b, EventId{"e"});
  EXPECT_NEAR(sb[0] - sa[0], 0.2, 1e-12);
  EXPECT_NEAR(sb[1], sa[1], 1e-12);

  // Reversed location order gives the reversed score vector.
  const auto r = make_matrix({{2, 8, 4}, {3, 1, 1}, {1, 2, 0}}, 10, {"e", "f", "IDLE"});
  const auto sr = row_minus_noise(r, EventId{"e"});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(sr[i], sa[2 - i], 1e-12);
}

TEST(HitRatioMatrix, RatiosAreExactFractions) {
  HitRatioMatrix h({EventId{"e"}}, {Location{"a", 0, granularity::page}}, 20);
  for (int i = 0; i < 20; ++i) h.record(0, 0, i % 4 == 0);
  EXPECT_EQ(h.hits(0, 0), 5u);
  EXPECT_EQ(h.samples(0, 0), 20u);
  EXPECT_DOUBLE_EQ(h.ratio(0, 0), 0.25);
  EXPECT_THROW(h.set(0, 0, 21, 20), Error);
  EXPECT_THROW(HitRatioMatrix({EventId{"e"}, EventId{"e"}}, {}, 1), Error);
}

TEST(ClassifiedTemplate, RejectsOverlappingOrIdleGroups) {
  ClassifiedTemplate t;
  t.entries.push_back(TemplateEntry{{EventId{"a"}}, Location{"s", 0, granularity::page}, 1.0, {}, {}});
  t.entries.push_back(TemplateEntry{{EventId{"a"}, EventId{"b"}}, Location{"s", 4096, granularity::page}, 1.0, {}, {}});
  EXPECT_THROW(t.validate(), Error);
  t.entries.pop_back();
  t.entries.push_back(TemplateEntry{{EventId::idle()}, Location{"s", 4096, granularity::page}, 1.0, {}, {}});
  EXPECT_THROW(t.validate(), Error);
  t.entries.pop_back();
  t.entries.push_back(TemplateEntry{{}, Location{"s", 4096, granularity::page}, 1.0, {}, {}});
  EXPECT_THROW(t.validate(), Error);
  t.entries.pop_back();
  EXPECT_NO_THROW(t.validate());
}
