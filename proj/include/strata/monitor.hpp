#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "strata/core.hpp"
#include "strata/csv.hpp"
#include "strata/probes.hpp"
#include "strata/trace.hpp"

namespace strata {

struct DetectionEvent {
  EventGroup group;
  // Probe round of the monitor loop; debouncing counts misses in rounds.
  std::uint64_t round = 0;
  // Backend clock: simulator round or steady-clock nanoseconds.
  std::uint64_t timestamp = 0;
  Location location;

  friend bool operator==(const DetectionEvent&, const DetectionEvent&) = default;
};

struct MonitorOptions {
  std::uint64_t rounds = 1000;
  std::uint32_t debounce_misses = 5;
};

struct MonitorResult {
  std::vector<DetectionEvent> detections;
  std::uint64_t rounds_run = 0;
  bool complete = true;
  std::string error;
};

// Collapses hits of one group on one location separated by at most `misses`
// missed rounds. A detection carries the round of the first hit of its streak.
inline std::vector<DetectionEvent> debounce(std::vector<DetectionEvent> hits, std::uint32_t misses) {
  std::stable_sort(hits.begin(), hits.end(),
                   [](const auto& a, const auto& b) { return a.round < b.round; });
  std::map<std::pair<EventGroup, Location>, std::uint64_t> last_hit;
  std::vector<DetectionEvent> out;
  for (auto& h : hits) {
    auto key = std::pair{h.group, h.location};
    auto it = last_hit.find(key);
    const bool fresh = it == last_hit.end() || h.round > it->second + misses + 1;
    last_hit[std::move(key)] = h.round;
    if (fresh) out.push_back(std::move(h));
  }
  return out;
}

// Exploitation loop: advance one round, check every template location,
// record hits, touch the read-around suppression pages, reset.
inline MonitorResult monitor_stream(const ClassifiedTemplate& tmpl, ProbeBackend& backend,
                                    const MonitorOptions& options) {
  tmpl.validate();
  const auto g = backend.granularity();
  std::vector<Location> probe_locs;
  std::vector<std::vector<std::size_t>> owners;
  std::vector<Location> suppress_locs;
  for (std::size_t i = 0; i < tmpl.entries.size(); ++i) {
    const auto& entry = tmpl.entries[i];
    if (entry.location.granularity > g) {
      fail(ErrorKind::invalid_argument, "template location " + entry.location.granularity.label() +
                                            " is coarser than the " + g.label() + " backend");
    }
    auto loc = enclosing_location(entry.location, g);
    auto it = std::find(probe_locs.begin(), probe_locs.end(), loc);
    if (it == probe_locs.end()) {
      probe_locs.push_back(loc);
      owners.push_back({i});
    } else {
      owners[static_cast<std::size_t>(it - probe_locs.begin())].push_back(i);
    }
    if (g == granularity::page) {
      for (const auto& s : entry.prefetch_suppress) {
        if (std::find(suppress_locs.begin(), suppress_locs.end(), s) == suppress_locs.end()) {
          suppress_locs.push_back(s);
        }
      }
    }
  }

  MonitorResult result;
  std::vector<DetectionEvent> raw;
  try {
    if (!suppress_locs.empty()) backend.touch(suppress_locs);
    backend.reset(probe_locs);
    for (std::uint64_t round = 0; round < options.rounds; ++round) {
      backend.advance();
      const auto now = backend.clock();
      const auto presence = backend.check(probe_locs);
      for (std::size_t l = 0; l < probe_locs.size(); ++l) {
        if (presence[l] != Presence::present) continue;
        for (auto i : owners[l]) {
          raw.push_back(DetectionEvent{tmpl.entries[i].group, round, now, tmpl.entries[i].location});
        }
      }
      if (!suppress_locs.empty()) backend.touch(suppress_locs);
      backend.reset(probe_locs);
      result.rounds_run = round + 1;
    }
  } catch (const Error& err) {
    result.complete = false;
    result.error = err.what();
  }
  result.detections = debounce(std::move(raw), options.debounce_misses);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EventScore {
  std::string event;
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
  // Whether precision / recall had a zero denominator.
  bool precision_defined = true;
  bool recall_defined = true;

  friend bool operator==(const EventScore&, const EventScore&) = default;
};

struct EvalReport {
  std::vector<EventScore> events;
  double macro_f_score = 0.0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// Undefined ratios are 1.0 when every count is zero, 0.0 otherwise.
inline EventScore score_counts(std::string event, std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  EventScore s{std::move(event), tp, fp, fn};
  const bool all_zero = tp == 0 && fp == 0 && fn == 0;
  s.precision_defined = tp + fp > 0;
  s.recall_defined = tp + fn > 0;
  s.precision = s.precision_defined ? static_cast<double>(tp) / (tp + fp) : (all_zero ? 1.0 : 0.0);
  s.recall = s.recall_defined ? static_cast<double>(tp) / (tp + fn) : (all_zero ? 1.0 : 0.0);
  s.f_score = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

// Matches each ground-truth keystroke to the earliest unmatched detection of
// its group within [round, round + window]. Events are scored per group label;
// a keystroke of an event outside every group scores under its own name.
inline EvalReport evaluate(const std::vector<DetectionEvent>& detections, const GroundTruth& truth,
                           std::uint64_t window, std::span<const EventGroup> groups = {}) {
  auto label_of = [&](const EventId& e) {
    for (const auto& g : groups) {
      if (std::find(g.begin(), g.end(), e) != g.end()) return group_label(g);
    }
    return e.name;
  };

  std::vector<const DetectionEvent*> ds;
  for (const auto& d : detections) ds.push_back(&d);
  std::stable_sort(ds.begin(), ds.end(),
                   [](const auto* a, const auto* b) { return a->timestamp < b->timestamp; });
  std::vector<const ScheduledEvent*> ts;
  for (const auto& t : truth) ts.push_back(&t);
  std::stable_sort(ts.begin(), ts.end(), [](const auto* a, const auto* b) { return a->round < b->round; });

  std::map<std::string, std::array<std::uint64_t, 3>> counts;  // tp, fp, fn
  for (const auto& g : groups) counts[group_label(g)];
  std::vector<bool> used(ds.size(), false);
  for (const auto* t : ts) {
    const auto label = label_of(t->event);
    auto& c = counts[label];
    bool matched = false;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (used[i] || ds[i]->timestamp < t->round) continue;
      if (ds[i]->timestamp > t->round + window) break;
      if (group_label(ds[i]->group) != label) continue;
      used[i] = true;
      matched = true;
      break;
    }
    ++c[matched ? 0 : 2];
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!used[i]) ++counts[group_label(ds[i]->group)][1];
  }

  EvalReport report;
  for (const auto& [label, c] : counts) {
    report.events.push_back(score_counts(label, c[0], c[1], c[2]));
  }
  if (!report.events.empty()) {
    double sum = 0.0;
    for (const auto& e : report.events) sum += e.f_score;
    report.macro_f_score = sum / report.events.size();
  }
  return report;
}

// Fast input, then no input, then slow input; every key once per active phase.
struct ThreePhasePlan {
  std::vector<EventId> keys;
  std::uint64_t start = 0;
  std::uint64_t fast_gap = 10;
  std::uint64_t idle_rounds = 200;
  std::uint64_t slow_gap = 100;
  std::uint32_t hits = 3;
};

inline GroundTruth three_phase_schedule(const ThreePhasePlan& plan) {
  GroundTruth out;
  auto round = plan.start;
  for (const auto& k : plan.keys) {
    out.push_back(ScheduledEvent{k, round, plan.hits});
    round += plan.fast_gap;
  }
  round += plan.idle_rounds;
  for (const auto& k : plan.keys) {
    out.push_back(ScheduledEvent{k, round, plan.hits});
    round += plan.slow_gap;
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV surfaces

inline void write_detections_csv(std::ostream& out, const std::vector<DetectionEvent>& ds,
                                  const std::string& manifest = {}) {
  if (!manifest.empty()) out << "# manifest: " << manifest << "\n";
  csv::write_row(out, {"round", "timestamp", "event_group", "source_id", "offset", "granularity"});
  for (const auto& d : ds) {
    csv::write_row(out, {std::to_string(d.round), std::to_string(d.timestamp), group_label(d.group),
                         d.location.source_id, std::to_string(d.location.offset),
                         std::to_string(d.location.granularity.bytes())});
  }
}

inline std::vector<DetectionEvent> read_detections_csv(std::istream& in) {
  auto t = csv::read(in);
  const auto cr = t.column("round"), ct = t.column("timestamp"), ce = t.column("event_group"),
             cs = t.column("source_id"), co = t.column("offset"), cg = t.column("granularity");
  std::vector<DetectionEvent> out;
  for (const auto& row : t.rows) {
    DetectionEvent d;
    d.round = csv::to_u64(row[cr]);
    d.timestamp = csv::to_u64(row[ct]);
    std::string label = row[ce];
    std::size_t start = 0;
    while (true) {
      auto bar = label.find('|', start);
      d.group.push_back(EventId{label.substr(start, bar == std::string::npos ? std::string::npos : bar - start)});
      if (bar == std::string::npos) break;
      start = bar + 1;
    }
    d.location = Location{row[cs], csv::to_u64(row[co]), Granularity(csv::to_u64(row[cg]))};
    out.push_back(std::move(d));
  }
  return out;
}

inline void write_eval_csv(std::ostream& out, const EvalReport& r, const std::string& manifest = {}) {
  if (!manifest.empty()) out << "# manifest: " << manifest << "\n";
  csv::write_row(out, {"event", "tp", "fp", "fn", "precision", "recall", "f_score"});
  for (const auto& e : r.events) {
    csv::write_row(out, {e.event, std::to_string(e.tp), std::to_string(e.fp), std::to_string(e.fn),
                         csv::fixed(e.precision, 6), csv::fixed(e.recall, 6), csv::fixed(e.f_score, 6)});
  }
  csv::write_row(out, {"macro", "", "", "", "", "", csv::fixed(r.macro_f_score, 6)});
}

// Per-application summary rows: which granularities allow precise keystroke
// recovery and the average F-score.
struct AppSummaryRow {
  std::string name;
  std::string category;
  bool cache_line = false;
  bool page_cache = false;
  bool inter_keystroke = false;
  double avg_f_score = 0.0;
};

inline std::vector<AppSummaryRow> read_app_summary(std::istream& in) {
  auto t = csv::read(in);
  const auto cn = t.column("name"), cc = t.column("category"), cl = t.column("cache_line"),
             cp = t.column("page_cache"), ci = t.column("inter_keystroke"), cf = t.column("avg_f_score");
  auto flag = [](const std::string& v) {
    if (v == "yes" || v == "true" || v == "1" || v == "\xE2\x9C\x93") return true;
    if (v == "no" || v == "false" || v == "0" || v == "\xE2\x9C\x97") return false;
    fail(ErrorKind::format, "not a yes/no flag: '" + v + "'");
  };
  std::vector<AppSummaryRow> rows;
  for (const auto& r : t.rows) {
    rows.push_back(AppSummaryRow{r[cn], r[cc], flag(r[cl]), flag(r[cp]), flag(r[ci]), csv::to_double(r[cf])});
  }
  return rows;
}

inline void write_app_summary(std::ostream& out, const std::vector<AppSummaryRow>& rows) {
  csv::write_row(out, {"name", "category", "cache_line", "page_cache", "inter_keystroke", "avg_f_score"});
  auto yn = [](bool b) { return std::string(b ? "yes" : "no"); };
  for (const auto& r : rows) {
    csv::write_row(out, {r.name, r.category, yn(r.cache_line), yn(r.page_cache), yn(r.inter_keystroke),
                         csv::fixed(r.avg_f_score, 2)});
  }
}

}  // namespace strata
