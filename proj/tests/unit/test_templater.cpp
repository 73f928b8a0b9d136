#include <gtest/gtest.h>

#include <random>
#include <set>

#include "strata/templater.hpp"
#include "support/oracles.hpp"
#include "support/sim_campaign.hpp"

using namespace strata;
using strata::test_support::config_for;
using strata::test_support::simulate_campaign;

namespace {

// Keys A and B on pages 5 and 9 of a 1 MiB file, C on page 5 too.
AccessTrace two_page_trace() {
  AccessTrace t;
  t.regions.push_back(MemoryRegion::make("lib.so", 0, 1 << 20));
  t.events.push_back(EventTrace{EventId{"A"}, {{"lib.so", {5 * 4096 + 0x40}}}, std::nullopt});
  t.events.push_back(EventTrace{EventId{"B"}, {{"lib.so", {9 * 4096 + 0x400}}}, std::nullopt});
  t.events.push_back(EventTrace{EventId{"C"}, {{"lib.so", {5 * 4096 + 0x800}}}, std::nullopt});
  return t;
}

std::set<Location> as_set(const std::vector<Location>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST(Templater, ProbeCountsPerLayer) {
  const auto t = two_page_trace();
  auto cfg = config_for(t, {granularity::page, granularity::cache_line}, 7);
  cfg.include_idle = false;
  const auto r = simulate_campaign(t, cfg);
  ASSERT_TRUE(r.complete());
  ASSERT_EQ(r.layers.size(), 2u);
  const std::uint64_t k = 3, n = 7;
  EXPECT_EQ(r.layers[0].probes, 256 * k * n);
  EXPECT_EQ(r.layers[0].survivors.size(), 2u);
  EXPECT_EQ(r.layers[1].probes, 2 * 64 * k * n);
  EXPECT_EQ(r.layers[1].matrix.locations().size(), 128u);
  EXPECT_EQ(as_set(r.final_survivors()), strata::test_support::expected_line_survivors(t));
}

TEST(Templater, IdleAddsOneEventPerRepetition) {
  const auto t = two_page_trace();
  const auto r = simulate_campaign(t, config_for(t, {granularity::page}, 4));
  EXPECT_EQ(r.layers[0].probes, 256u * 4 * 4);
  EXPECT_EQ(r.layers[0].matrix.events().back(), EventId::idle());
}

TEST(Templater, SkipsLayersLargerThanTheRegions) {
  const auto t = two_page_trace();
  const auto r = simulate_campaign(t, config_for(t, {granularity::huge_page, granularity::page, granularity::cache_line}));
  EXPECT_EQ(r.skipped, (std::vector<Granularity>{granularity::huge_page}));
  EXPECT_EQ(r.layers.size(), 2u);

  std::vector<Granularity> skipped;
  const auto tiny = effective_ladder({granularity::page, granularity::cache_line}, 10, &skipped);
  EXPECT_EQ(tiny, (Ladder{granularity::cache_line}));
  EXPECT_EQ(effective_ladder({granularity::page}, 10), (Ladder{granularity::page}));
}

TEST(Templater, NoActivityMeansNoSurvivors) {
  AccessTrace t;
  t.regions.push_back(MemoryRegion::make("lib.so", 0, 64 * 4096));
  t.events.push_back(EventTrace{EventId{"A"}, {}, std::nullopt});
  const auto r = simulate_campaign(t, config_for(t, {granularity::page, granularity::cache_line}));
  ASSERT_TRUE(r.complete());
  EXPECT_TRUE(r.layers[0].survivors.empty());
  EXPECT_TRUE(r.final_survivors().empty());
  EXPECT_EQ(r.layers[1].probes, 0u);
}

TEST(Templater, IdleOnlyActivityIsNotASurvivor) {
  AccessTrace t;
  t.regions.push_back(MemoryRegion::make("lib.so", 0, 64 * 4096));
  t.events.push_back(EventTrace{EventId{"A"}, {}, std::nullopt});
  t.background.push_back(BackgroundAccess{"lib.so", 4096, 1.0});
  const auto r = simulate_campaign(t, config_for(t, {granularity::page}));
  // Background shows up under A as well as IDLE; A's row decides.
  ASSERT_EQ(r.final_survivors().size(), 1u);
  auto cfg = config_for(t, {granularity::page});
  cfg.keys.clear();
  EXPECT_THROW(simulate_campaign(t, cfg), Error);
}

TEST(Templater, AbortReportsResumePoint) {
  const auto t = two_page_trace();
  auto cfg = config_for(t, {granularity::page, granularity::cache_line}, 2);
  SimOptions opts;
  // Four events (A, B, C, IDLE) x 256 pages per sample; the fifth sample fails.
  opts.fail_after_checks = 4 * 256;
  const auto r = simulate_campaign(t, cfg, 1, opts);
  EXPECT_FALSE(r.complete());
  ASSERT_TRUE(r.aborted_at);
  EXPECT_EQ(*r.aborted_at, (ResumeToken{0, 0, 1}));
  ASSERT_EQ(r.layers.size(), 1u);
  EXPECT_FALSE(r.layers[0].complete);
  EXPECT_EQ(r.layers[0].probes, 4u * 256);
  EXPECT_FALSE(r.error.empty());
  // Partial results are kept: one full repetition recorded.
  EXPECT_EQ(r.layers[0].matrix.samples(0, 5), 1u);
}

TEST(Templater, UnknownResultsShrinkTheDenominator) {
  const auto t = two_page_trace();
  SimOptions opts;
  opts.unknown_probability = 0.3;
  const auto r = simulate_campaign(t, config_for(t, {granularity::page}, 20), 1, opts);
  const auto& m = r.layers[0].matrix;
  std::uint64_t total = 0, full = 0;
  for (std::size_t e = 0; e < m.events().size(); ++e) {
    for (std::size_t l = 0; l < m.locations().size(); ++l) {
      EXPECT_LE(m.samples(e, l), 20u);
      EXPECT_LE(m.hits(e, l), m.samples(e, l));
      total += m.samples(e, l);
      full += 20;
    }
  }
  EXPECT_NEAR(static_cast<double>(total) / full, 0.7, 0.02);
  // Page 5 is still found: every recorded A sample there is a hit.
  const auto a = *m.event_index(EventId{"A"});
  EXPECT_EQ(m.hits(a, 5), m.samples(a, 5));
}

TEST(Templater, SameSeedSameResult) {
  auto t = two_page_trace();
  t.jitter = 0.2;
  const auto cfg = config_for(t, {granularity::page, granularity::cache_line}, 10, 99);
  const auto a = simulate_campaign(t, cfg, 5);
  const auto b = simulate_campaign(t, cfg, 5);
  ASSERT_EQ(a.layers.size(), b.layers.size());
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    EXPECT_EQ(a.layers[i].matrix, b.layers[i].matrix);
    EXPECT_EQ(a.layers[i].survivors, b.layers[i].survivors);
  }
}

TEST(Templater, FinerSurvivorsNestInCoarserOnes) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    auto t = strata::test_support::random_trace(rng);
    t.jitter = 0.1;
    const auto r = simulate_campaign(t, config_for(t, {granularity::page, granularity::cache_line}, 6, trial), trial);
    ASSERT_EQ(r.layers.size(), 2u);
    const auto coarse = as_set(r.layers[0].survivors);
    for (const auto& s : r.layers[1].survivors) {
      EXPECT_TRUE(coarse.count(enclosing_location(s, granularity::page))) << s.source_id << "+" << s.offset;
    }
  }
}

TEST(Templater, ThresholdPerLayer) {
  auto t = two_page_trace();
  t.background.push_back(BackgroundAccess{"lib.so", 100 * 4096, 0.5});
  auto cfg = config_for(t, {granularity::page}, 20, 3);
  cfg.pass_threshold = {1.0};
  const auto strict = simulate_campaign(t, cfg, 3);
  EXPECT_EQ(strict.final_survivors().size(), 2u);
  cfg.pass_threshold = {0.5, 0.5};
  EXPECT_THROW(cfg.validate(), Error);
  cfg.pass_threshold = {0.0};
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Templater, SurvivorSelectionIsExactAtTheThreshold) {
  HitRatioMatrix h({EventId{"A"}, EventId::idle()},
                   {Location{"s", 0, granularity::page}, Location{"s", 4096, granularity::page},
                    Location{"s", 8192, granularity::page}},
                   20);
  h.set(0, 0, 10, 20);  // exactly 0.5
  h.set(0, 1, 9, 20);
  h.set(1, 2, 20, 20);  // IDLE alone never qualifies
  const auto s = select_survivors(h, 0.5);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].offset, 0u);
}

// ---- cost model --------------------------------------------------------------------

TEST(CostModel, ChromeReference) {
  const auto est = estimate_campaign(chrome_reference_costs());
  // Independent arithmetic: 817.652 s/MiB x 209.81 MiB x 57 keys.
  const double flat = 817.652 * 209.81 * 57;
  EXPECT_DOUBLE_EQ(est.flat_seconds, flat);
  EXPECT_NEAR(est.flat_seconds / 86400.0, 113.17, 113.17 * 0.005);
  ASSERT_EQ(est.layers.size(), 2u);
  EXPECT_EQ(est.layers[0].locations, 105u);  // ceil(209.81 / 2)
  EXPECT_NEAR(est.layers[1].seconds, 1.47 * 3600, 1e-6);
  ASSERT_TRUE(est.speedup);
  EXPECT_NEAR(*est.speedup, 1848.0, 1848.0 * 0.01);
}

TEST(CostModel, ScalesLinearlyInKeysAndSamples) {
  CostModel m;
  m.flat_seconds_per_mb = 2.0;
  m.region_mb = 4.0;
  m.keys = 3;
  m.samples = 10;
  m.layers.push_back(LayerCost{granularity::page, 1e-3, 0.5, std::nullopt});
  const auto a = estimate_campaign(m);
  EXPECT_DOUBLE_EQ(a.flat_seconds, 24.0);
  EXPECT_EQ(a.layers[0].locations, 1024u);
  EXPECT_DOUBLE_EQ(a.layers[0].seconds, 1024 * 30 * 1e-3 + 30 * 0.5);
  m.keys = 6;
  EXPECT_DOUBLE_EQ(estimate_campaign(m).layered_seconds, 2 * a.layered_seconds);
  m.layers.clear();
  EXPECT_FALSE(estimate_campaign(m).speedup);
  m.region_mb = -1;
  EXPECT_THROW(estimate_campaign(m), Error);
}
