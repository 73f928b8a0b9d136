#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "strata/core.hpp"
#include "strata/probes.hpp"

namespace strata {

struct CampaignConfig {
  std::vector<EventId> keys;
  std::uint32_t samples_per_key = 20;
  Ladder ladder = {granularity::page, granularity::cache_line};
  // One value per layer, or a single value for every layer.
  std::vector<double> pass_threshold = {0.5};
  bool warmup = true;
  bool include_idle = true;
  std::uint64_t rng_seed = 0;

  double threshold_for(std::size_t layer) const {
    if (pass_threshold.size() == 1) return pass_threshold.front();
    return pass_threshold.at(layer);
  }

  void validate() const {
    if (keys.empty()) fail(ErrorKind::config, "campaign needs at least one key");
    std::set<EventId> unique;
    for (const auto& k : keys) {
      if (k.is_idle()) fail(ErrorKind::config, "IDLE is added by the campaign, not a key");
      if (!unique.insert(k).second) fail(ErrorKind::config, "duplicate key " + k.name);
    }
    if (samples_per_key < 1) fail(ErrorKind::config, "samples per key must be >= 1");
    validate_ladder(ladder);
    if (pass_threshold.empty() ||
        (pass_threshold.size() != 1 && pass_threshold.size() != ladder.size())) {
      fail(ErrorKind::config, "need one pass threshold, or one per ladder layer");
    }
    for (double t : pass_threshold) {
      if (!(t > 0.0 && t <= 1.0)) fail(ErrorKind::config, "pass threshold must be in (0, 1]");
    }
  }
};

struct LayerResult {
  Granularity granularity;
  HitRatioMatrix matrix;
  std::vector<Location> survivors;
  std::uint64_t probes = 0;
  bool complete = true;
};

// Where a campaign stopped: the layer, the position within the shuffled
// event order, and the repetition.
struct ResumeToken {
  std::size_t layer = 0;
  std::size_t event = 0;
  std::size_t repetition = 0;

  friend bool operator==(const ResumeToken&, const ResumeToken&) = default;
};

struct CampaignResult {
  std::vector<LayerResult> layers;
  std::vector<Granularity> skipped;
  std::optional<ResumeToken> aborted_at;
  std::string error;

  bool complete() const noexcept { return !aborted_at; }

  const std::vector<Location>& final_survivors() const {
    static const std::vector<Location> none;
    return layers.empty() ? none : layers.back().survivors;
  }
};

struct CampaignHooks {
  // Runs once before warmup, e.g. to drop the OS page cache.
  std::function<void()> before_warmup;
};

using BackendMap = std::map<Granularity, ProbeBackend*>;

// Layers coarser than the whole search space are skipped; the finest is always kept.
inline Ladder effective_ladder(const Ladder& ladder, std::uint64_t total, std::vector<Granularity>* skipped = nullptr) {
  Ladder out;
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    const bool finest = i + 1 == ladder.size();
    if (ladder[i].bytes() > total && !finest) {
      if (skipped) skipped->push_back(ladder[i]);
      continue;
    }
    out.push_back(ladder[i]);
  }
  return out;
}

// Survivor test: some non-IDLE event reaches `threshold` at the location.
inline std::vector<Location> select_survivors(const HitRatioMatrix& h, double threshold) {
  std::vector<Location> out;
  for (std::size_t l = 0; l < h.locations().size(); ++l) {
    for (std::size_t e = 0; e < h.events().size(); ++e) {
      if (h.events()[e].is_idle() || h.samples(e, l) == 0) continue;
      // hits/samples >= threshold without rounding the ratio
      if (static_cast<double>(h.hits(e, l)) + 1e-9 >= threshold * h.samples(e, l)) {
        out.push_back(h.locations()[l]);
        break;
      }
    }
  }
  return out;
}

namespace detail {

inline bool overlaps_any(const Location& loc, const std::vector<MemoryRegion>& regions) {
  for (const auto& r : regions) {
    if (r.source_id == loc.source_id && loc.offset < r.end() && r.offset < loc.end()) return true;
  }
  return false;
}

inline std::vector<Location> next_layer_locations(const std::vector<Location>& survivors,
                                                  Granularity finer,
                                                  const std::vector<MemoryRegion>& regions) {
  std::set<Location> out;
  for (const auto& s : survivors) {
    for (auto& c : children(s, finer)) {
      if (overlaps_any(c, regions)) out.insert(std::move(c));
    }
  }
  return {out.begin(), out.end()};
}

}  // namespace detail

// Coarse-to-fine templating: every layer samples reset/trigger/check for each
// event N times in freshly shuffled order, then only the children of
// locations passing the threshold are searched at the next layer.
inline CampaignResult run_campaign(const CampaignConfig& cfg, const BackendMap& backends,
                                   const std::vector<MemoryRegion>& regions,
                                   const CampaignHooks& hooks = {}) {
  cfg.validate();
  if (regions.empty() || total_bytes(regions) == 0) {
    fail(ErrorKind::invalid_argument, "campaign has no memory regions to scan");
  }
  CampaignResult result;
  const Ladder ladder = effective_ladder(cfg.ladder, total_bytes(regions), &result.skipped);
  for (const auto& g : ladder) {
    auto it = backends.find(g);
    if (it == backends.end() || it->second == nullptr) {
      fail(ErrorKind::invalid_argument, "no probe backend for the " + g.label() + " layer");
    }
  }

  std::vector<EventId> events = cfg.keys;
  if (cfg.include_idle) events.push_back(EventId::idle());

  std::mt19937_64 rng(cfg.rng_seed);
  if (hooks.before_warmup) hooks.before_warmup();

  std::vector<Location> locations;
  {
    std::set<Location> layer0;
    for (const auto& r : regions) {
      for (auto& loc : covering_locations(r, ladder.front())) layer0.insert(std::move(loc));
    }
    locations.assign(layer0.begin(), layer0.end());
  }

  for (std::size_t layer = 0; layer < ladder.size(); ++layer) {
    const auto g = ladder[layer];
    // Threshold index follows the configured ladder, not the trimmed one.
    const auto cfg_index = static_cast<std::size_t>(
        std::find(cfg.ladder.begin(), cfg.ladder.end(), g) - cfg.ladder.begin());
    ProbeBackend& backend = *backends.at(g);
    LayerResult lr{g, HitRatioMatrix(events, locations, cfg.samples_per_key), {}, 0, true};
    const auto probes_before = backend.probe_count();

    std::vector<std::size_t> order(events.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t rep = 0;
    std::size_t pos = 0;
    try {
      if (!locations.empty()) {
        if (cfg.warmup) {
          for (const auto& k : cfg.keys) backend.trigger(k);
        }
        for (rep = 0; rep < cfg.samples_per_key; ++rep) {
          std::shuffle(order.begin(), order.end(), rng);
          for (pos = 0; pos < order.size(); ++pos) {
            const auto e = order[pos];
            backend.reset(locations);
            backend.trigger(events[e]);
            const auto presence = backend.check(locations);
            for (std::size_t l = 0; l < locations.size(); ++l) {
              if (presence[l] == Presence::unknown) continue;
              lr.matrix.record(e, l, presence[l] == Presence::present);
            }
          }
        }
      }
    } catch (const Error& err) {
      lr.complete = false;
      lr.probes = backend.probe_count() - probes_before;
      result.aborted_at = ResumeToken{layer, pos, rep};
      result.error = err.what();
      result.layers.push_back(std::move(lr));
      return result;
    }

    lr.probes = backend.probe_count() - probes_before;
    lr.survivors = select_survivors(lr.matrix, cfg.threshold_for(cfg_index));
    if (layer + 1 < ladder.size()) {
      locations = detail::next_layer_locations(lr.survivors, ladder[layer + 1], regions);
    }
    result.layers.push_back(std::move(lr));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Cost model

struct LayerCost {
  Granularity granularity;
  // Cost of one reset+check of one location.
  double seconds_per_probe = 0.0;
  // Fixed cost of one (event, repetition) sample: input injection, waiting.
  double seconds_per_sample = 0.0;
  // Locations scanned at this layer; defaults to covering the whole region.
  std::optional<std::uint64_t> locations;
};

struct CostModel {
  // Measured flat cache-line templating cost per MiB for a single key.
  double flat_seconds_per_mb = 0.0;
  double region_mb = 0.0;
  std::uint32_t keys = 0;
  std::uint32_t samples = 20;
  std::vector<LayerCost> layers;
};

struct LayerEstimate {
  Granularity granularity;
  std::uint64_t locations = 0;
  double seconds = 0.0;
};

struct CampaignEstimate {
  double flat_seconds = 0.0;
  std::vector<LayerEstimate> layers;
  double layered_seconds = 0.0;
  std::optional<double> speedup;
};

inline CampaignEstimate estimate_campaign(const CostModel& model) {
  if (model.flat_seconds_per_mb < 0.0 || model.region_mb < 0.0) {
    fail(ErrorKind::invalid_argument, "costs and sizes must be non-negative");
  }
  CampaignEstimate est;
  est.flat_seconds = model.flat_seconds_per_mb * model.region_mb * model.keys;
  const double region_bytes = model.region_mb * 1048576.0;
  const double samples = static_cast<double>(model.keys) * model.samples;
  for (const auto& lc : model.layers) {
    if (lc.seconds_per_probe < 0.0 || lc.seconds_per_sample < 0.0) {
      fail(ErrorKind::invalid_argument, "layer costs must be non-negative");
    }
    LayerEstimate le;
    le.granularity = lc.granularity;
    le.locations = lc.locations.value_or(
        static_cast<std::uint64_t>(std::ceil(region_bytes / lc.granularity.bytes())));
    le.seconds = static_cast<double>(le.locations) * samples * lc.seconds_per_probe +
                 samples * lc.seconds_per_sample;
    est.layered_seconds += le.seconds;
    est.layers.push_back(le);
  }
  if (est.layered_seconds > 0.0) est.speedup = est.flat_seconds / est.layered_seconds;
  return est;
}

// Chrome-scale reference figures: 817.652 s per MiB for flat cache-line
// templating, 209.81 MiB of mappings, 57 keys x 20 samples. The 2 MB layer
// costs 661.965 ns per referenced-bit check; the 4 KB idle-bit layer is
// costed per sample so that all 57 keys take the measured 1.47 h.
inline CostModel chrome_reference_costs() {
  CostModel m;
  m.flat_seconds_per_mb = 817.652;
  m.region_mb = 209.81;
  m.keys = 57;
  m.samples = 20;
  m.layers.push_back(LayerCost{granularity::huge_page, 661.965e-9, 0.0, std::nullopt});
  m.layers.push_back(LayerCost{granularity::page, 0.0, 1.47 * 3600.0 / (57.0 * 20.0), std::nullopt});
  return m;
}

}  // namespace strata
