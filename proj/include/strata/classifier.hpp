#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "strata/core.hpp"
#include "strata/probes.hpp"

namespace strata {

struct ClassifierConfig {
  double min_score = 0.5;
  // Required margin above the IDLE ratio at the candidate location.
  double noise_margin = 0.1;
  // 0 means "all keys".
  std::size_t max_group_size = 0;
  bool require_idle = true;
  ReadaroundModel readaround;

  void validate() const {
    if (!(min_score > 0.0 && min_score <= 1.0)) fail(ErrorKind::config, "min_score must be in (0, 1]");
    if (noise_margin < 0.0) fail(ErrorKind::config, "noise_margin must be >= 0");
  }
};

namespace detail {

// Location order for tie-breaking: lowest offset first, then source id.
inline bool location_before(const Location& a, const Location& b) {
  if (a.offset != b.offset) return a.offset < b.offset;
  return a.source_id < b.source_id;
}

// Scores are sums of hit ratios, so values closer than rounding error are
// ties.
inline constexpr double score_epsilon = 1e-9;

inline std::size_t argmax_location(const HitRatioMatrix& h, const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t l = 1; l < v.size(); ++l) {
    const bool tie = std::abs(v[l] - v[best]) <= score_epsilon;
    if ((!tie && v[l] > v[best]) || (tie && location_before(h.locations()[l], h.locations()[best]))) {
      best = l;
    }
  }
  return best;
}

// Per-location score of a group: each member's ratio minus the summed ratios
// of every event outside the group, minimised over members.
inline std::vector<double> group_scores(const HitRatioMatrix& h, const std::vector<std::size_t>& group) {
  const auto nloc = h.locations().size();
  std::vector<double> noise(nloc, 0.0);
  for (std::size_t e = 0; e < h.events().size(); ++e) {
    if (std::find(group.begin(), group.end(), e) != group.end()) continue;
    for (std::size_t l = 0; l < nloc; ++l) noise[l] += h.ratio(e, l);
  }
  std::vector<double> score(nloc, std::numeric_limits<double>::infinity());
  for (auto m : group) {
    for (std::size_t l = 0; l < nloc; ++l) score[l] = std::min(score[l], h.ratio(m, l) - noise[l]);
  }
  return score;
}

// Elementwise max of the members' rows.
inline std::vector<double> group_row(const HitRatioMatrix& h, const std::vector<std::size_t>& group) {
  std::vector<double> row(h.locations().size(), 0.0);
  for (auto m : group) {
    for (std::size_t l = 0; l < row.size(); ++l) row[l] = std::max(row[l], h.ratio(m, l));
  }
  return row;
}

// Highest extent seen per source, used to clip read-around windows.
inline std::map<std::string, std::uint64_t> source_extents(const HitRatioMatrix& h) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& loc : h.locations()) {
    auto& end = out[loc.source_id];
    end = std::max(end, loc.end());
  }
  return out;
}

}  // namespace detail

// Links each event, or the smallest mergeable group of events, to the single
// location that best identifies it.
inline ClassifiedTemplate classify(const HitRatioMatrix& h, const ClassifierConfig& cfg) {
  cfg.validate();
  const auto idle = h.idle_index();
  if (cfg.require_idle && !idle) fail(ErrorKind::invalid_argument, "matrix has no IDLE row");
  if (h.locations().empty()) fail(ErrorKind::invalid_argument, "matrix has no locations");

  std::vector<std::size_t> keys;
  for (std::size_t e = 0; e < h.events().size(); ++e) {
    if (!h.events()[e].is_idle()) keys.push_back(e);
  }
  if (keys.empty()) fail(ErrorKind::invalid_argument, "matrix has no events to classify");
  const std::size_t max_group = cfg.max_group_size == 0 ? keys.size() : cfg.max_group_size;

  const auto extents = detail::source_extents(h);
  std::vector<bool> assigned(h.events().size(), false);
  ClassifiedTemplate out;

  for (auto e : keys) {
    if (assigned[e]) continue;
    std::vector<std::size_t> group{e};
    bool accepted = false;
    while (true) {
      const auto scores = detail::group_scores(h, group);
      const auto cand = detail::argmax_location(h, scores);
      const double idle_ratio = idle ? h.ratio(*idle, cand) : 0.0;
      if (scores[cand] + detail::score_epsilon >= std::max(cfg.min_score, idle_ratio + cfg.noise_margin)) {
        TemplateEntry entry;
        for (auto m : group) {
          entry.group.push_back(h.events()[m]);
          assigned[m] = true;
        }
        entry.location = h.locations()[cand];
        entry.score = scores[cand];
        if (entry.location.granularity == granularity::page) {
          entry.prefetch_suppress =
              suppression_pages(entry.location, cfg.readaround, extents.at(entry.location.source_id));
        }
        out.entries.push_back(std::move(entry));
        accepted = true;
        break;
      }
      if (group.size() >= max_group) break;

      // Grow by the unassigned event with the highest ratio where the group
      // is strongest above the idle floor.
      auto reference = detail::group_row(h, group);
      if (idle) {
        for (std::size_t l = 0; l < reference.size(); ++l) reference[l] -= h.ratio(*idle, l);
      }
      const auto ref = detail::argmax_location(h, reference);
      std::optional<std::size_t> next;
      for (auto o : keys) {
        if (assigned[o] || std::find(group.begin(), group.end(), o) != group.end()) continue;
        if (!next || h.ratio(o, ref) > h.ratio(*next, ref)) next = o;
      }
      if (!next) break;
      group.push_back(*next);
    }
    if (!accepted) {
      out.unclassifiable.push_back(h.events()[e]);
      out.warnings.push_back("no location identifies " + h.events()[e].name +
                             ", even merged into a group of " + std::to_string(group.size()));
    }
  }
  return out;
}

// Resolves read-around interference between page entries of one source.
// Entries with identical windows are indistinguishable and collapse into one
// group; overlapping windows keep both entries and record each window's first
// and last page as distinguishers.
inline ClassifiedTemplate filter_readaround(ClassifiedTemplate tmpl, const HitRatioMatrix& h,
                                            const ReadaroundModel& model) {
  if (!model.enabled) return tmpl;
  const auto extents = detail::source_extents(h);
  const auto g = granularity::page;

  auto window_of = [&](const Location& loc) {
    auto it = extents.find(loc.source_id);
    const std::uint64_t limit =
        it == extents.end() ? UINT64_MAX : (it->second + g.bytes() - 1) / g.bytes();
    return readaround_window(loc.offset / g.bytes(), model, limit);
  };

  auto& entries = tmpl.entries;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].location.granularity != g) continue;
    for (std::size_t j = i + 1; j < entries.size();) {
      auto& a = entries[i];
      auto& b = entries[j];
      if (b.location.granularity != g || a.location.source_id != b.location.source_id) {
        ++j;
        continue;
      }
      const auto wa = window_of(a.location);
      const auto wb = window_of(b.location);
      if (wa.last < wb.first || wb.last < wa.first) {
        ++j;
        continue;
      }
      if (wa.first == wb.first && wa.last == wb.last) {
        tmpl.warnings.push_back(group_label(a.group) + " and " + group_label(b.group) +
                                " are indistinguishable under read-around; merged");
        a.group.insert(a.group.end(), b.group.begin(), b.group.end());
        a.score = std::min(a.score, b.score);
        entries.erase(entries.begin() + static_cast<std::ptrdiff_t>(j));
        continue;
      }
      auto mark = [&](TemplateEntry& e, PageWindow w) {
        for (auto page : {w.first, w.last}) {
          Location loc{e.location.source_id, page * g.bytes(), g};
          if (std::find(e.distinguishers.begin(), e.distinguishers.end(), loc) == e.distinguishers.end()) {
            e.distinguishers.push_back(loc);
          }
        }
      };
      mark(a, wa);
      mark(b, wb);
      ++j;
    }
  }
  return tmpl;
}

}  // namespace strata
