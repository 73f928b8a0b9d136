#pragma once

// Simulator trace file (JSON, "strata-trace" v1).
//
//   {
//     "format": "strata-trace", "version": 1,
//     "regions":    [{"source": "app.bin", "offset": 0, "length": 1048576}],
//     "readaround": {"enabled": false, "pages_before": 16, "pages_after": 15,
//                    "readahead_bytes": 131072},
//     "jitter": 0.0,
//     "events": [{"name": "KeyA", "jitter": 0.05,
//                 "accesses": [{"source": "app.bin", "offsets": [4096, 4160]}]}],
//     "background": [{"source": "app.bin", "offset": 8192, "probability": 1.0}],
//     "schedule":   [{"event": "KeyA", "round": 10, "hits": 3}]
//   }
//
// `jitter` is the probability that one trigger of an event also performs the
// accesses of another, uniformly chosen event. Per-event values override the
// top-level default. `background` accesses happen on every trigger (IDLE
// included) and every monitoring round. `schedule` is the ground-truth
// keystroke log: the event fires at `round` and stays active for `hits`
// consecutive probing rounds. A ground-truth file is a trace with only a
// schedule.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "strata/core.hpp"
#include "strata/probes.hpp"

namespace strata {

inline constexpr std::string_view trace_format = "strata-trace";
inline constexpr int trace_version = 1;

struct SourceAccesses {
  std::string source_id;
  std::vector<std::uint64_t> offsets;

  friend bool operator==(const SourceAccesses&, const SourceAccesses&) = default;
};

struct EventTrace {
  EventId event;
  std::vector<SourceAccesses> accesses;
  std::optional<double> jitter;

  friend bool operator==(const EventTrace&, const EventTrace&) = default;
};

struct BackgroundAccess {
  std::string source_id;
  std::uint64_t offset = 0;
  double probability = 1.0;

  friend bool operator==(const BackgroundAccess&, const BackgroundAccess&) = default;
};

struct ScheduledEvent {
  EventId event;
  std::uint64_t round = 0;
  std::uint32_t hits = 1;

  friend bool operator==(const ScheduledEvent&, const ScheduledEvent&) = default;
};

using GroundTruth = std::vector<ScheduledEvent>;

struct AccessTrace {
  std::vector<MemoryRegion> regions;
  ReadaroundModel readaround = ReadaroundModel::disabled();
  double jitter = 0.0;
  std::vector<EventTrace> events;
  std::vector<BackgroundAccess> background;
  GroundTruth schedule;

  const EventTrace* find(const EventId& e) const {
    auto it = std::find_if(events.begin(), events.end(),
                           [&](const EventTrace& t) { return t.event == e; });
    return it == events.end() ? nullptr : &*it;
  }

  const MemoryRegion* region_of(const std::string& source, std::uint64_t offset) const {
    for (const auto& r : regions) {
      if (r.source_id == source && offset >= r.offset && offset < r.end()) return &r;
    }
    return nullptr;
  }

  std::vector<EventId> event_ids() const {
    std::vector<EventId> out;
    for (const auto& e : events) out.push_back(e.event);
    return out;
  }

  void validate() const {
    std::set<std::string> names;
    for (const auto& e : events) {
      if (e.event.is_idle()) fail(ErrorKind::config, "IDLE is implicit and cannot be traced");
      if (!names.insert(e.event.name).second) {
        fail(ErrorKind::config, "duplicate trace event " + e.event.name);
      }
      if (e.jitter && (*e.jitter < 0.0 || *e.jitter > 1.0)) {
        fail(ErrorKind::config, "jitter of " + e.event.name + " outside [0,1]");
      }
      for (const auto& sa : e.accesses) {
        for (auto off : sa.offsets) {
          if (!region_of(sa.source_id, off)) {
            fail(ErrorKind::config, "access " + sa.source_id + "+" + std::to_string(off) +
                                        " of " + e.event.name + " is outside every region");
          }
        }
      }
    }
    if (jitter < 0.0 || jitter > 1.0) fail(ErrorKind::config, "jitter outside [0,1]");
    for (const auto& b : background) {
      if (!region_of(b.source_id, b.offset)) {
        fail(ErrorKind::config, "background access outside every region");
      }
      if (b.probability < 0.0 || b.probability > 1.0) {
        fail(ErrorKind::config, "background probability outside [0,1]");
      }
    }
    for (const auto& s : schedule) {
      if (s.hits == 0) fail(ErrorKind::config, "scheduled event with zero hits");
    }
  }

  friend bool operator==(const AccessTrace&, const AccessTrace&) = default;
};

namespace detail {

template <typename T>
T json_get(const nlohmann::json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  return it->get<T>();
}

inline void check_header(const nlohmann::json& j, std::string_view format, int version) {
  if (!j.is_object() || json_get<std::string>(j, "format", "") != format) {
    fail(ErrorKind::config, "not a " + std::string(format) + " document");
  }
  if (json_get<int>(j, "version", 0) != version) {
    fail(ErrorKind::config, std::string(format) + ": unsupported version");
  }
}

inline nlohmann::json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::config, path.string() + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

}  // namespace detail

inline nlohmann::json readaround_to_json(const ReadaroundModel& m) {
  return {{"enabled", m.enabled},
          {"pages_before", m.pages_before},
          {"pages_after", m.pages_after},
          {"readahead_bytes", m.readahead_bytes}};
}

inline ReadaroundModel readaround_from_json(const nlohmann::json& j) {
  ReadaroundModel m;
  m.enabled = detail::json_get<bool>(j, "enabled", m.enabled);
  m.pages_before = detail::json_get<std::uint32_t>(j, "pages_before", m.pages_before);
  m.pages_after = detail::json_get<std::uint32_t>(j, "pages_after", m.pages_after);
  m.readahead_bytes = detail::json_get<std::uint64_t>(j, "readahead_bytes", m.readahead_bytes);
  return m;
}

inline nlohmann::json schedule_to_json(const GroundTruth& schedule) {
  auto arr = nlohmann::json::array();
  for (const auto& s : schedule) {
    arr.push_back({{"event", s.event.name}, {"round", s.round}, {"hits", s.hits}});
  }
  return arr;
}

inline GroundTruth schedule_from_json(const nlohmann::json& arr) {
  GroundTruth out;
  for (const auto& s : arr) {
    out.push_back(ScheduledEvent{EventId{s.at("event").get<std::string>()},
                                 s.at("round").get<std::uint64_t>(),
                                 detail::json_get<std::uint32_t>(s, "hits", 1)});
  }
  return out;
}

inline nlohmann::json to_json(const AccessTrace& t) {
  nlohmann::json j;
  j["format"] = trace_format;
  j["version"] = trace_version;
  auto regions = nlohmann::json::array();
  for (const auto& r : t.regions) {
    regions.push_back({{"source", r.source_id}, {"offset", r.offset}, {"length", r.length}});
  }
  j["regions"] = regions;
  j["readaround"] = readaround_to_json(t.readaround);
  j["jitter"] = t.jitter;
  auto events = nlohmann::json::array();
  for (const auto& e : t.events) {
    nlohmann::json ej;
    ej["name"] = e.event.name;
    if (e.jitter) ej["jitter"] = *e.jitter;
    auto acc = nlohmann::json::array();
    for (const auto& sa : e.accesses) acc.push_back({{"source", sa.source_id}, {"offsets", sa.offsets}});
    ej["accesses"] = acc;
    events.push_back(ej);
  }
  j["events"] = events;
  auto bg = nlohmann::json::array();
  for (const auto& b : t.background) {
    bg.push_back({{"source", b.source_id}, {"offset", b.offset}, {"probability", b.probability}});
  }
  j["background"] = bg;
  j["schedule"] = schedule_to_json(t.schedule);
  return j;
}

inline AccessTrace trace_from_json(const nlohmann::json& j) {
  detail::check_header(j, trace_format, trace_version);
  AccessTrace t;
  try {
    for (const auto& r : j.value("regions", nlohmann::json::array())) {
      t.regions.push_back(MemoryRegion::make(r.at("source").get<std::string>(),
                                             detail::json_get<std::uint64_t>(r, "offset", 0),
                                             r.at("length").get<std::uint64_t>()));
    }
    if (j.contains("readaround")) t.readaround = readaround_from_json(j["readaround"]);
    t.jitter = detail::json_get<double>(j, "jitter", 0.0);
    for (const auto& e : j.value("events", nlohmann::json::array())) {
      EventTrace et;
      et.event = EventId{e.at("name").get<std::string>()};
      if (e.contains("jitter")) et.jitter = e["jitter"].get<double>();
      for (const auto& a : e.value("accesses", nlohmann::json::array())) {
        et.accesses.push_back(SourceAccesses{a.at("source").get<std::string>(),
                                             a.at("offsets").get<std::vector<std::uint64_t>>()});
      }
      t.events.push_back(std::move(et));
    }
    for (const auto& b : j.value("background", nlohmann::json::array())) {
      t.background.push_back(BackgroundAccess{b.at("source").get<std::string>(),
                                              b.at("offset").get<std::uint64_t>(),
                                              detail::json_get<double>(b, "probability", 1.0)});
    }
    t.schedule = schedule_from_json(j.value("schedule", nlohmann::json::array()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("malformed trace: ") + e.what());
  }
  t.validate();
  return t;
}

inline std::string dump_trace(const AccessTrace& t) { return to_json(t).dump(2) + "\n"; }

inline AccessTrace read_trace(const std::filesystem::path& path) {
  return trace_from_json(detail::parse_json_file(path));
}

inline void write_trace(const std::filesystem::path& path, const AccessTrace& t) {
  detail::write_text_file(path, dump_trace(t));
}

inline GroundTruth read_ground_truth(const std::filesystem::path& path) {
  return read_trace(path).schedule;
}

}  // namespace strata
