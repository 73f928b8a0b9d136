#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "strata/core.hpp"

namespace strata {

// Unified polarity: `present` means activity since the last reset, whatever
// the backend's underlying bit means. `unknown` is a failed probe.
enum class Presence : std::uint8_t { idle, present, unknown };

struct Capabilities {
  bool destructive_read = false;
  bool needs_privilege = false;
  bool cross_platform = false;
};

// Kernel prefetching of neighbouring file pages around a faulting page.
struct ReadaroundModel {
  bool enabled = true;
  std::uint32_t pages_before = 16;
  std::uint32_t pages_after = 15;
  std::uint64_t readahead_bytes = 131072;

  static ReadaroundModel disabled() {
    ReadaroundModel m;
    m.enabled = false;
    return m;
  }

  friend bool operator==(const ReadaroundModel&, const ReadaroundModel&) = default;
};

// Inclusive page-index window pulled in by a fault on `page`, clipped to
// [0, page_limit).
struct PageWindow {
  std::uint64_t first = 0;
  std::uint64_t last = 0;
};

inline PageWindow readaround_window(std::uint64_t page, const ReadaroundModel& model,
                                    std::uint64_t page_limit = UINT64_MAX) {
  if (!model.enabled) return {page, page};
  PageWindow w;
  w.first = page >= model.pages_before ? page - model.pages_before : 0;
  w.last = page + model.pages_after;
  if (page_limit != UINT64_MAX && w.last >= page_limit) w.last = page_limit ? page_limit - 1 : 0;
  return w;
}

// The read-around window of `target` minus `target` itself, clipped to the
// source extent. With an asymmetric window the page at target + pages_before
// can still reach target; widen pages_after to cover it.
inline std::vector<Location> suppression_pages(const Location& target, const ReadaroundModel& model,
                                               std::uint64_t source_end = UINT64_MAX) {
  std::vector<Location> out;
  if (!model.enabled) return out;
  const auto g = granularity::page;
  const std::uint64_t page = target.offset / g.bytes();
  const std::uint64_t limit =
      source_end == UINT64_MAX ? UINT64_MAX : (source_end + g.bytes() - 1) / g.bytes();
  const auto w = readaround_window(page, model, limit);
  for (std::uint64_t p = w.first; p <= w.last; ++p) {
    if (p == page) continue;
    out.push_back(Location{target.source_id, p * g.bytes(), g});
  }
  return out;
}

// Pluggable reset/trigger/check side channel. Instances are exclusive-use.
class ProbeBackend {
 public:
  virtual ~ProbeBackend() = default;

  virtual Granularity granularity() const = 0;
  virtual Capabilities capabilities() const = 0;
  virtual std::string identity() const = 0;

  virtual void reset(std::span<const Location> locs) = 0;
  virtual void trigger(const EventId& event) = 0;
  virtual std::vector<Presence> check(std::span<const Location> locs) = 0;

  // Access pages without recording them as victim activity.
  virtual void touch(std::span<const Location> /*locs*/) {}

  // Lets one probing round of wall-clock (or simulated) time pass.
  virtual void advance() {}

  // Timebase shared with ground-truth logs.
  virtual std::uint64_t clock() const { return 0; }

  std::uint64_t probe_count() const noexcept { return probes_; }
  void reset_probe_count() noexcept { probes_ = 0; }

 protected:
  void count_probes(std::size_t n) noexcept { probes_ += n; }

  void require_granularity(std::span<const Location> locs) const {
    for (const auto& loc : locs) {
      if (loc.granularity != granularity()) {
        fail(ErrorKind::invalid_argument, identity() + " probes at " + granularity().label() +
                                              ", got a " + loc.granularity.label() + " location");
      }
    }
  }

 private:
  std::uint64_t probes_ = 0;
};

// Touches the read-around neighbours of `around` so a later fault on one of
// them cannot prefetch it. Returns the touched pages.
inline std::vector<Location> suppress(ProbeBackend& backend, const Location& around,
                                      const ReadaroundModel& model,
                                      std::uint64_t source_end = UINT64_MAX) {
  if (backend.granularity() != granularity::page || around.granularity != granularity::page) {
    fail(ErrorKind::invalid_argument, "read-around suppression needs a page-granularity backend");
  }
  auto pages = suppression_pages(around, model, source_end);
  backend.touch(pages);
  return pages;
}

}  // namespace strata
