#pragma once

// Reference computations and random generators for the property tests.
// Oracles here deliberately avoid the library's search code: they work from
// the trace or the planted ground truth directly.

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "strata/core.hpp"
#include "strata/trace.hpp"

namespace strata::test_support {

// Lines a deterministic trace (no jitter, no read-around, background
// probabilities 0 or 1) makes present for some key. With every access
// deterministic each such line has hit ratio 1 for its event, so these are
// exactly the 64 B survivors at any threshold in (0, 1].
inline std::set<Location> expected_line_survivors(const AccessTrace& t) {
  std::set<Location> out;
  auto add = [&](const std::string& src, std::uint64_t off) {
    out.insert(Location{src, off / 64 * 64, granularity::cache_line});
  };
  for (const auto& e : t.events) {
    for (const auto& sa : e.accesses) {
      for (auto off : sa.offsets) add(sa.source_id, off);
    }
  }
  if (!t.events.empty()) {
    for (const auto& b : t.background) {
      if (b.probability >= 1.0) add(b.source_id, b.offset);
    }
  }
  return out;
}

struct RandomTraceShape {
  std::uint64_t max_region_bytes = 1 << 20;
  std::size_t max_sources = 3;
  std::size_t max_events = 8;
  std::size_t max_accesses = 6;
  bool background = true;
};

// Random deterministic trace: 1..max_sources regions of random (not
// necessarily page-aligned) length and offset, events touching a few random
// bytes each, optional always-on background lines.
inline AccessTrace random_trace(std::mt19937_64& rng, const RandomTraceShape& shape = {}) {
  auto pick = [&](std::uint64_t lo, std::uint64_t hi) {
    return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng);
  };
  AccessTrace t;
  const auto sources = pick(1, shape.max_sources);
  const std::uint64_t budget = shape.max_region_bytes / sources;
  for (std::uint64_t s = 0; s < sources; ++s) {
    const auto length = pick(64, budget);
    const auto offset = pick(0, 3) * 4096 + pick(0, 1) * pick(0, 4095);
    t.regions.push_back(MemoryRegion::make("lib" + std::to_string(s) + ".so", offset, length));
  }
  auto random_byte = [&] {
    const auto& r = t.regions[pick(0, t.regions.size() - 1)];
    return std::pair{r.source_id, r.offset + pick(0, r.length - 1)};
  };
  const auto events = pick(1, shape.max_events);
  for (std::uint64_t e = 0; e < events; ++e) {
    EventTrace et;
    et.event = EventId{"Key" + std::string(1, static_cast<char>('A' + e))};
    const auto n = pick(0, shape.max_accesses);
    std::map<std::string, std::vector<std::uint64_t>> by_source;
    for (std::uint64_t i = 0; i < n; ++i) {
      auto [src, off] = random_byte();
      by_source[src].push_back(off);
    }
    for (auto& [src, offs] : by_source) et.accesses.push_back(SourceAccesses{src, offs});
    t.events.push_back(std::move(et));
  }
  if (shape.background && pick(0, 1)) {
    auto [src, off] = random_byte();
    t.background.push_back(BackgroundAccess{src, off, 1.0});
  }
  return t;
}

// Planted event -> location assignment behind a synthetic hit-ratio matrix.
struct Planting {
  std::vector<EventId> events;        // keys, IDLE last in the matrix
  std::vector<Location> locations;
  std::map<EventId, std::size_t> truth;  // key -> location index
};

// One distinct page per key. Each key scores `on` >= 0.9 hits out of N on
// its page; a budget of at most 0.1 (in hits/N units) of off-target activity
// is spread over the other keys and IDLE at every location.
inline HitRatioMatrix planted_one_to_one(std::mt19937_64& rng, std::size_t keys, std::size_t pages,
                                         std::uint32_t n, Planting& p) {
  auto pick = [&](std::uint64_t lo, std::uint64_t hi) {
    return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng);
  };
  p = {};
  for (std::size_t k = 0; k < keys; ++k) p.events.push_back(EventId{"E" + std::to_string(k)});
  p.events.push_back(EventId::idle());
  for (std::size_t l = 0; l < pages; ++l) {
    p.locations.push_back(Location{"app", l * 4096, granularity::page});
  }
  std::vector<std::size_t> perm(pages);
  for (std::size_t i = 0; i < pages; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);

  HitRatioMatrix h(p.events, p.locations, n);
  const auto on_min = static_cast<std::uint32_t>((9 * n + 9) / 10);  // ceil(0.9 N)
  const auto off_budget = n / 10;                                  // floor(0.1 N)
  for (std::size_t l = 0; l < pages; ++l) {
    std::optional<std::size_t> owner;
    for (std::size_t k = 0; k < keys; ++k) {
      if (perm[k] == l) owner = k;
    }
    // Off-target hits at this location, summed over non-owners, <= 0.1 N.
    auto remaining = pick(0, off_budget);
    for (std::size_t e = 0; e < p.events.size(); ++e) {
      std::uint32_t hits = 0;
      if (owner && e == *owner) {
        hits = static_cast<std::uint32_t>(pick(on_min, n));
      } else if (remaining > 0) {
        hits = static_cast<std::uint32_t>(pick(0, remaining));
        remaining -= hits;
      }
      h.set(e, l, hits, n);
    }
  }
  for (std::size_t k = 0; k < keys; ++k) p.truth[p.events[k]] = perm[k];
  return h;
}

}  // namespace strata::test_support
