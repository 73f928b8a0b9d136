#pragma once

#include <algorithm>
#include <bit>
#include <compare>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "strata/error.hpp"

namespace strata {

// A power-of-two probe granularity of at least one cache line.
class Granularity {
 public:
  static constexpr std::uint64_t min_bytes = 64;

  constexpr Granularity() = default;

  explicit Granularity(std::uint64_t bytes) : bytes_(bytes) {
    if (bytes < min_bytes || !std::has_single_bit(bytes)) {
      fail(ErrorKind::invalid_argument,
           "granularity must be a power of two >= 64, got " + std::to_string(bytes));
    }
  }

  constexpr std::uint64_t bytes() const noexcept { return bytes_; }

  constexpr std::uint64_t align_down(std::uint64_t offset) const noexcept {
    return offset & ~(bytes_ - 1);
  }

  constexpr bool divides(std::uint64_t offset) const noexcept {
    return (offset & (bytes_ - 1)) == 0;
  }

  // "64B", "4KB", "2MB", ... for reports and labels.
  std::string label() const {
    static constexpr std::pair<std::uint64_t, const char*> units[] = {
        {1ULL << 40, "TB"}, {1ULL << 30, "GB"}, {1ULL << 20, "MB"}, {1ULL << 10, "KB"}};
    for (auto [scale, suffix] : units) {
      if (bytes_ >= scale && bytes_ % scale == 0) {
        return std::to_string(bytes_ / scale) + suffix;
      }
    }
    return std::to_string(bytes_) + "B";
  }

  friend constexpr auto operator<=>(Granularity, Granularity) = default;

 private:
  std::uint64_t bytes_ = min_bytes;
};

namespace granularity {
inline const Granularity cache_line{64};
inline const Granularity page{4096};
inline const Granularity huge_page{1ULL << 21};
inline const Granularity gigantic_page{1ULL << 30};
inline const Granularity pml4_entry{1ULL << 39};
inline const Granularity pml5_entry{1ULL << 48};
}  // namespace granularity

using Ladder = std::vector<Granularity>;

// Every layer found by page-table walking plus the cache line, coarse to fine.
inline Ladder full_ladder() {
  using namespace granularity;
  return {pml5_entry, pml4_entry, gigantic_page, huge_page, page, cache_line};
}

// Coarse-to-fine, strictly decreasing, each layer a multiple of the next.
inline void validate_ladder(const Ladder& ladder) {
  if (ladder.empty()) fail(ErrorKind::invalid_argument, "empty granularity ladder");
  for (std::size_t i = 1; i < ladder.size(); ++i) {
    if (!(ladder[i] < ladder[i - 1])) {
      fail(ErrorKind::invalid_argument, "ladder must be strictly decreasing: " +
                                            ladder[i - 1].label() + " before " + ladder[i].label());
    }
  }
}

// A contiguous byte range of one backing file or mapping.
struct MemoryRegion {
  std::string source_id;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
  // Virtual start of the mapping when known from a live process; informational.
  std::uint64_t base_address = 0;

  std::uint64_t end() const noexcept { return offset + length; }

  static MemoryRegion make(std::string source, std::uint64_t offset, std::uint64_t length,
                           std::uint64_t base = 0) {
    if (length > std::numeric_limits<std::uint64_t>::max() - offset) {
      fail(ErrorKind::invalid_argument, "region " + source + " overflows the offset space");
    }
    return MemoryRegion{std::move(source), offset, length, base};
  }

  friend bool operator==(const MemoryRegion&, const MemoryRegion&) = default;
};

inline std::uint64_t total_bytes(const std::vector<MemoryRegion>& regions) {
  std::uint64_t sum = 0;
  for (const auto& r : regions) sum += r.length;
  return sum;
}

// A granularity-aligned unit inside a source. Offsets are source (file) offsets.
struct Location {
  std::string source_id;
  std::uint64_t offset = 0;
  Granularity granularity;

  std::uint64_t end() const noexcept { return offset + granularity.bytes(); }
  bool contains(std::uint64_t off) const noexcept { return off >= offset && off < end(); }

  friend auto operator<=>(const Location&, const Location&) = default;
  friend bool operator==(const Location&, const Location&) = default;
};

inline Location enclosing_location(std::string source_id, std::uint64_t offset, Granularity g) {
  return Location{std::move(source_id), g.align_down(offset), g};
}

inline Location enclosing_location(const Location& loc, Granularity g) {
  return enclosing_location(loc.source_id, loc.offset, g);
}

// Half-open byte range used to clip children at region edges.
struct Extent {
  std::uint64_t begin = 0;
  std::uint64_t end = std::numeric_limits<std::uint64_t>::max();
};

// The finer-grained locations covering `loc`, dropping those fully outside `clip`.
// A child straddling the clip edge is kept.
inline std::vector<Location> children(const Location& loc, Granularity finer, Extent clip = {}) {
  if (!(finer < loc.granularity)) {
    fail(ErrorKind::invalid_argument,
         finer.label() + " is not finer than " + loc.granularity.label());
  }
  if (loc.granularity.bytes() % finer.bytes() != 0) {
    fail(ErrorKind::invalid_argument,
         finer.label() + " does not divide " + loc.granularity.label());
  }
  std::vector<Location> out;
  out.reserve(loc.granularity.bytes() / finer.bytes());
  for (std::uint64_t off = loc.offset; off < loc.end(); off += finer.bytes()) {
    if (off >= clip.end || off + finer.bytes() <= clip.begin) continue;
    out.push_back(Location{loc.source_id, off, finer});
  }
  return out;
}

// All g-aligned locations overlapping a region, in offset order.
inline std::vector<Location> covering_locations(const MemoryRegion& region, Granularity g) {
  std::vector<Location> out;
  if (region.length == 0) return out;
  for (std::uint64_t off = g.align_down(region.offset); off < region.end(); off += g.bytes()) {
    out.push_back(Location{region.source_id, off, g});
    if (off > std::numeric_limits<std::uint64_t>::max() - g.bytes()) break;
  }
  return out;
}

struct EventId {
  std::string name;

  bool is_idle() const noexcept { return name == idle_name; }

  static constexpr std::string_view idle_name = "IDLE";
  static EventId idle() { return EventId{std::string(idle_name)}; }

  friend auto operator<=>(const EventId&, const EventId&) = default;
  friend bool operator==(const EventId&, const EventId&) = default;
};

// Events x locations table of hit counts. A ratio is hits/samples; samples can
// fall short of the nominal N when a probe reported "unknown".
class HitRatioMatrix {
 public:
  HitRatioMatrix() = default;

  HitRatioMatrix(std::vector<EventId> events, std::vector<Location> locations,
                 std::uint32_t samples_per_event)
      : events_(std::move(events)),
        locations_(std::move(locations)),
        samples_per_event_(samples_per_event),
        hits_(events_.size() * locations_.size(), 0),
        samples_(events_.size() * locations_.size(), 0) {
    for (std::size_t i = 0; i < events_.size(); ++i) {
      for (std::size_t j = i + 1; j < events_.size(); ++j) {
        if (events_[i] == events_[j]) {
          fail(ErrorKind::invalid_argument, "duplicate event " + events_[i].name);
        }
      }
    }
  }

  const std::vector<EventId>& events() const noexcept { return events_; }
  const std::vector<Location>& locations() const noexcept { return locations_; }
  std::uint32_t samples_per_event() const noexcept { return samples_per_event_; }

  std::optional<std::size_t> event_index(const EventId& e) const {
    auto it = std::find(events_.begin(), events_.end(), e);
    if (it == events_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - events_.begin());
  }

  std::optional<std::size_t> idle_index() const { return event_index(EventId::idle()); }

  std::uint32_t hits(std::size_t e, std::size_t l) const { return hits_[at(e, l)]; }
  std::uint32_t samples(std::size_t e, std::size_t l) const { return samples_[at(e, l)]; }

  double ratio(std::size_t e, std::size_t l) const {
    auto n = samples_[at(e, l)];
    return n == 0 ? 0.0 : static_cast<double>(hits_[at(e, l)]) / n;
  }

  void record(std::size_t e, std::size_t l, bool hit) {
    auto i = at(e, l);
    ++samples_[i];
    if (hit) ++hits_[i];
  }

  void set(std::size_t e, std::size_t l, std::uint32_t hits, std::uint32_t samples) {
    if (hits > samples) fail(ErrorKind::invalid_argument, "hits exceed samples");
    hits_[at(e, l)] = hits;
    samples_[at(e, l)] = samples;
  }

  std::vector<double> row(std::size_t e) const {
    std::vector<double> r(locations_.size());
    for (std::size_t l = 0; l < r.size(); ++l) r[l] = ratio(e, l);
    return r;
  }

  friend bool operator==(const HitRatioMatrix&, const HitRatioMatrix&) = default;

 private:
  std::size_t at(std::size_t e, std::size_t l) const {
    if (e >= events_.size() || l >= locations_.size()) {
      fail(ErrorKind::invalid_argument, "matrix index out of range");
    }
    return e * locations_.size() + l;
  }

  std::vector<EventId> events_;
  std::vector<Location> locations_;
  std::uint32_t samples_per_event_ = 0;
  std::vector<std::uint32_t> hits_;
  std::vector<std::uint32_t> samples_;
};

// Own ratio minus the summed ratios of every other event (IDLE included).
inline std::vector<double> row_minus_noise(const HitRatioMatrix& h, const EventId& e) {
  auto self = h.event_index(e);
  if (!self) fail(ErrorKind::invalid_argument, "unknown event " + e.name);
  std::vector<double> score = h.row(*self);
  for (std::size_t other = 0; other < h.events().size(); ++other) {
    if (other == *self) continue;
    for (std::size_t l = 0; l < score.size(); ++l) score[l] -= h.ratio(other, l);
  }
  return score;
}

using EventGroup = std::vector<EventId>;

inline std::string group_label(const EventGroup& group) {
  std::string out;
  for (const auto& e : group) {
    if (!out.empty()) out += '|';
    out += e.name;
  }
  return out;
}

struct BinaryFingerprint {
  std::string sha256;
  std::string version;

  friend bool operator==(const BinaryFingerprint&, const BinaryFingerprint&) = default;
};

struct TemplateEntry {
  EventGroup group;
  Location location;
  double score = 0.0;
  // Neighbouring pages to touch before each probing round.
  std::vector<Location> prefetch_suppress;
  // First and last page of the read-around window when windows of two entries overlap.
  std::vector<Location> distinguishers;

  friend bool operator==(const TemplateEntry&, const TemplateEntry&) = default;
};

struct ClassifiedTemplate {
  std::vector<TemplateEntry> entries;
  std::vector<EventId> unclassifiable;
  std::vector<std::string> warnings;
  BinaryFingerprint fingerprint;
  std::string manifest;

  // Groups non-empty, pairwise disjoint, never containing IDLE.
  void validate() const {
    std::vector<EventId> seen;
    for (const auto& entry : entries) {
      if (entry.group.empty()) fail(ErrorKind::config, "template entry with empty event group");
      for (const auto& e : entry.group) {
        if (e.is_idle()) fail(ErrorKind::config, "IDLE cannot be part of an event group");
        if (std::find(seen.begin(), seen.end(), e) != seen.end()) {
          fail(ErrorKind::config, "event " + e.name + " appears in more than one group");
        }
        seen.push_back(e);
      }
    }
  }

  friend bool operator==(const ClassifiedTemplate&, const ClassifiedTemplate&) = default;
};

}  // namespace strata
