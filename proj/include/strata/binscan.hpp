#pragma once

// Static placement analysis of secret-correlated strings (key names and the
// like) in a binary's read-only data. A string that the victim reads only
// when a given key is pressed becomes a probe target if it sits on its own
// cache line or page; strings sharing one are indistinguishable.
//
// Placement is measured in file offsets, the same offset space the templater
// uses for file-backed mappings. Section addresses are carried along for
// reference only.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "strata/core.hpp"
#include "strata/csv.hpp"
#include "strata/elf.hpp"
#include "strata/manifest.hpp"
#include "strata/trace.hpp"

namespace strata {

enum class MatchMode {
  exact,     // NUL or section start before, NUL after
  substring  // any occurrence, including inside longer strings
};

inline std::string to_string(MatchMode m) { return m == MatchMode::exact ? "exact" : "substring"; }

struct MarkerSet {
  std::vector<std::string> markers;
  MatchMode mode = MatchMode::exact;

  void validate() const {
    if (markers.empty()) fail(ErrorKind::invalid_argument, "marker set is empty");
    std::set<std::string_view> seen;
    for (const auto& m : markers) {
      if (m.empty()) fail(ErrorKind::invalid_argument, "empty marker");
      for (unsigned char c : m) {
        // Printable ASCII keeps marker files line-based and reports valid JSON.
        if (c < 0x20 || c > 0x7e) fail(ErrorKind::invalid_argument, "marker has a non-printable byte: " + m);
      }
      if (!seen.insert(m).second) fail(ErrorKind::invalid_argument, "duplicate marker " + m);
    }
  }

  friend bool operator==(const MarkerSet&, const MarkerSet&) = default;
};

// DOM `code` names of a 57-key US_EN keyboard.
inline MarkerSet us_keyboard_markers() {
  MarkerSet s;
  for (char c = 'A'; c <= 'Z'; ++c) s.markers.push_back(std::string("Key") + c);
  for (char c = '0'; c <= '9'; ++c) s.markers.push_back(std::string("Digit") + c);
  for (const char* name :
       {"Minus", "Equal", "BracketLeft", "BracketRight", "Backslash", "Semicolon", "Quote", "Backquote",
        "Comma", "Period", "Slash", "Space", "Enter", "Backspace", "Tab", "Escape", "CapsLock",
        "ShiftLeft", "ShiftRight", "ControlLeft", "AltLeft"}) {
    s.markers.emplace_back(name);
  }
  return s;
}

// One marker per line; blank lines and '#' comments ignored. A leading
// "mode: substring" line switches the match mode.
inline MarkerSet read_markers(std::istream& in) {
  MarkerSet s;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (line.rfind("mode:", 0) == 0) {
      auto v = line.substr(5);
      v.erase(0, v.find_first_not_of(' '));
      if (v == "exact") s.mode = MatchMode::exact;
      else if (v == "substring") s.mode = MatchMode::substring;
      else fail(ErrorKind::config, "unknown marker mode " + v);
      continue;
    }
    s.markers.push_back(line);
  }
  s.validate();
  return s;
}

inline MarkerSet read_markers(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  try {
    return read_markers(in);
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

enum class OccurrenceKind {
  exact,  // a complete NUL-terminated string
  tail,   // suffix of a longer string (linker tail merging)
  inner   // anywhere else; substring mode only
};

inline std::string to_string(OccurrenceKind k) {
  switch (k) {
    case OccurrenceKind::exact: return "exact";
    case OccurrenceKind::tail: return "tail";
    case OccurrenceKind::inner: return "inner";
  }
  return "?";
}

struct Occurrence {
  std::string section;
  std::uint64_t file_offset = 0;
  std::uint64_t address = 0;
  OccurrenceKind kind = OccurrenceKind::exact;

  friend bool operator==(const Occurrence&, const Occurrence&) = default;
};

struct MarkerLayout {
  std::string marker;
  std::vector<Occurrence> occurrences;  // ascending file offset
  bool tail_merged = false;             // only found as a suffix

  // The occurrence that decides placement: the first complete string, else
  // the first occurrence of any kind.
  const Occurrence* primary() const {
    for (const auto& o : occurrences) {
      if (o.kind == OccurrenceKind::exact) return &o;
    }
    return occurrences.empty() ? nullptr : &occurrences.front();
  }

  std::optional<std::uint64_t> index_at(Granularity g) const {
    if (const auto* p = primary()) return p->file_offset / g.bytes();
    return std::nullopt;
  }

  std::optional<std::uint64_t> line() const { return index_at(granularity::cache_line); }
  std::optional<std::uint64_t> page() const { return index_at(granularity::page); }

  friend bool operator==(const MarkerLayout&, const MarkerLayout&) = default;
};

enum class Placement { distinct, co_located, marker_absent };

inline std::string to_string(Placement p) {
  switch (p) {
    case Placement::distinct: return "distinct";
    case Placement::co_located: return "co-located";
    case Placement::marker_absent: return "marker-absent";
  }
  return "?";
}

inline Placement parse_placement(std::string_view s) {
  if (s == "distinct") return Placement::distinct;
  if (s == "co-located") return Placement::co_located;
  if (s == "marker-absent") return Placement::marker_absent;
  fail(ErrorKind::format, "unknown placement " + std::string(s));
}

inline Placement placement_of(const MarkerLayout& a, const MarkerLayout& b, Granularity g) {
  const auto ia = a.index_at(g), ib = b.index_at(g);
  if (!ia || !ib) return Placement::marker_absent;
  return *ia == *ib ? Placement::co_located : Placement::distinct;
}

struct StringLayoutReport {
  std::string binary;  // path as given
  BinaryFingerprint fingerprint;
  MatchMode mode = MatchMode::exact;
  std::vector<Granularity> granularities;
  std::vector<std::string> sections;  // read-only data sections scanned
  std::vector<MarkerLayout> markers;  // marker-set order

  const MarkerLayout& layout(std::string_view marker) const {
    for (const auto& m : markers) {
      if (m.marker == marker) return m;
    }
    fail(ErrorKind::invalid_argument, "no marker " + std::string(marker) + " in report");
  }

  Placement placement(std::string_view a, std::string_view b, Granularity g) const {
    return placement_of(layout(a), layout(b), g);
  }

  friend bool operator==(const StringLayoutReport&, const StringLayoutReport&) = default;
};

namespace detail {

inline bool is_nul_or_edge(std::span<const std::uint8_t> data, std::int64_t i) {
  return i < 0 || static_cast<std::uint64_t>(i) >= data.size() || data[static_cast<std::size_t>(i)] == 0;
}

inline void find_in_section(const elf::Section& sec, std::span<const std::uint8_t> data, MatchMode mode,
                            MarkerLayout& out) {
  const std::string_view hay(reinterpret_cast<const char*>(data.data()), data.size());
  const std::string_view needle = out.marker;
  for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + 1)) {
    const auto at = static_cast<std::int64_t>(pos);
    // A terminator is required even at section end: an unterminated string
    // there is a prefix of nothing the program can read as this marker.
    const bool nul_after = pos + needle.size() < data.size() && data[pos + needle.size()] == 0;
    const bool boundary_before = is_nul_or_edge(data, at - 1);
    OccurrenceKind kind;
    if (nul_after && boundary_before) kind = OccurrenceKind::exact;
    else if (nul_after) kind = OccurrenceKind::tail;
    else if (mode == MatchMode::substring) kind = OccurrenceKind::inner;
    else continue;
    out.occurrences.push_back(Occurrence{sec.name, sec.offset + pos, sec.addr + pos, kind});
  }
}

}  // namespace detail

inline StringLayoutReport scan(const elf::File& file, const MarkerSet& markers,
                               std::vector<Granularity> granularities) {
  markers.validate();
  if (granularities.empty()) granularities = {granularity::page, granularity::cache_line};
  std::sort(granularities.begin(), granularities.end(), std::greater<>{});
  granularities.erase(std::unique(granularities.begin(), granularities.end()), granularities.end());

  const auto sections = file.readonly_data_sections();
  if (sections.empty()) fail(ErrorKind::format, "binary has no read-only data sections");

  StringLayoutReport r;
  r.fingerprint.sha256 = sha256_hex(std::span<const std::uint8_t>(file.bytes()));
  r.mode = markers.mode;
  r.granularities = granularities;
  for (const auto* s : sections) r.sections.push_back(s->name);

  const std::span<const std::uint8_t> bytes(file.bytes());
  for (const auto& m : markers.markers) {
    MarkerLayout layout;
    layout.marker = m;
    for (const auto* s : sections) {
      detail::find_in_section(*s, bytes.subspan(s->offset, s->size), markers.mode, layout);
    }
    std::sort(layout.occurrences.begin(), layout.occurrences.end(),
              [](const Occurrence& a, const Occurrence& b) { return a.file_offset < b.file_offset; });
    layout.tail_merged =
        !layout.occurrences.empty() &&
        std::none_of(layout.occurrences.begin(), layout.occurrences.end(),
                     [](const Occurrence& o) { return o.kind == OccurrenceKind::exact; }) &&
        std::any_of(layout.occurrences.begin(), layout.occurrences.end(),
                    [](const Occurrence& o) { return o.kind == OccurrenceKind::tail; });
    r.markers.push_back(std::move(layout));
  }
  return r;
}

inline StringLayoutReport scan(const std::filesystem::path& binary, const MarkerSet& markers,
                               std::vector<Granularity> granularities = {}) {
  auto r = scan(elf::File::read(binary), markers, std::move(granularities));
  r.binary = binary.string();
  return r;
}

// Re-reads every reported occurrence from the file. Returns the mismatches.
inline std::vector<std::string> verify_against(const StringLayoutReport& r, std::span<const std::uint8_t> bytes) {
  std::vector<std::string> problems;
  for (const auto& m : r.markers) {
    for (const auto& o : m.occurrences) {
      const bool fits = o.file_offset <= bytes.size() && m.marker.size() <= bytes.size() - o.file_offset;
      if (!fits || std::string_view(reinterpret_cast<const char*>(bytes.data() + o.file_offset),
                                    m.marker.size()) != m.marker) {
        problems.push_back(m.marker + " @ " + std::to_string(o.file_offset));
      }
    }
  }
  return problems;
}

// ---- diff -------------------------------------------------------------------

struct MarkerMove {
  std::string marker;
  std::optional<std::uint64_t> from;  // primary file offset
  std::optional<std::uint64_t> to;
  std::size_t count_from = 0;
  std::size_t count_to = 0;
  bool deduplicated = false;  // several copies collapsed into fewer

  friend bool operator==(const MarkerMove&, const MarkerMove&) = default;
};

struct PlacementTransition {
  std::string a;
  std::string b;
  Granularity granularity;
  Placement from = Placement::marker_absent;
  Placement to = Placement::marker_absent;

  friend bool operator==(const PlacementTransition&, const PlacementTransition&) = default;
};

struct LayoutDelta {
  std::vector<MarkerMove> moves;
  std::vector<PlacementTransition> transitions;

  bool empty() const noexcept { return moves.empty() && transitions.empty(); }

  const PlacementTransition* transition(std::string_view a, std::string_view b, Granularity g) const {
    for (const auto& t : transitions) {
      if (t.granularity == g && ((t.a == a && t.b == b) || (t.a == b && t.b == a))) return &t;
    }
    return nullptr;
  }
};

inline LayoutDelta diff_layouts(const StringLayoutReport& before, const StringLayoutReport& after) {
  const auto names = [](const StringLayoutReport& r) {
    std::vector<std::string> out;
    for (const auto& m : r.markers) out.push_back(m.marker);
    return out;
  };
  if (names(before) != names(after) || before.mode != after.mode) {
    fail(ErrorKind::invalid_argument, "layout reports were produced from different marker sets");
  }

  LayoutDelta d;
  for (std::size_t i = 0; i < before.markers.size(); ++i) {
    const auto& a = before.markers[i];
    const auto& b = after.markers[i];
    const auto pa = a.primary(), pb = b.primary();
    MarkerMove mv;
    mv.marker = a.marker;
    if (pa) mv.from = pa->file_offset;
    if (pb) mv.to = pb->file_offset;
    mv.count_from = a.occurrences.size();
    mv.count_to = b.occurrences.size();
    mv.deduplicated = mv.count_from > 1 && mv.count_to > 0 && mv.count_to < mv.count_from;
    if (mv.from != mv.to || mv.count_from != mv.count_to) d.moves.push_back(std::move(mv));
  }

  std::vector<Granularity> shared;
  for (auto g : before.granularities) {
    if (std::find(after.granularities.begin(), after.granularities.end(), g) != after.granularities.end()) {
      shared.push_back(g);
    }
  }
  for (auto g : shared) {
    for (std::size_t i = 0; i < before.markers.size(); ++i) {
      for (std::size_t j = i + 1; j < before.markers.size(); ++j) {
        const auto from = placement_of(before.markers[i], before.markers[j], g);
        const auto to = placement_of(after.markers[i], after.markers[j], g);
        if (from != to) {
          d.transitions.push_back({before.markers[i].marker, before.markers[j].marker, g, from, to});
        }
      }
    }
  }
  return d;
}

// ---- grading ----------------------------------------------------------------

enum class Grade { leak_page, leak_line, grouped, safe };

inline std::string to_string(Grade g) {
  switch (g) {
    case Grade::leak_page: return "LEAK_PAGE";
    case Grade::leak_line: return "LEAK_LINE";
    case Grade::grouped: return "GROUPED";
    case Grade::safe: return "SAFE";
  }
  return "?";
}

struct PairGrade {
  std::string a;
  std::string b;
  Grade grade = Grade::safe;
  std::string note;
};

inline constexpr std::string_view prefetcher_caveat =
    "same page, distinct lines: adjacent-line and stream prefetchers may blur the lines";

inline std::vector<PairGrade> leakage_grade(const StringLayoutReport& r) {
  std::vector<PairGrade> out;
  for (std::size_t i = 0; i < r.markers.size(); ++i) {
    for (std::size_t j = i + 1; j < r.markers.size(); ++j) {
      const auto& a = r.markers[i];
      const auto& b = r.markers[j];
      PairGrade pg{a.marker, b.marker, Grade::safe, {}};
      if (!a.primary() || !b.primary()) {
        pg.note = "marker absent: " + (!a.primary() ? a.marker : b.marker);
      } else if (*a.page() != *b.page()) {
        pg.grade = Grade::leak_page;
      } else if (*a.line() != *b.line()) {
        pg.grade = Grade::leak_line;
        pg.note = prefetcher_caveat;
      } else {
        pg.grade = Grade::grouped;
      }
      out.push_back(std::move(pg));
    }
  }
  return out;
}

// ---- persistence --------------------------------------------------------------

inline constexpr std::string_view layout_format = "strata-layout";
inline constexpr int layout_version = 1;

inline nlohmann::json to_json(const StringLayoutReport& r) {
  nlohmann::json j;
  j["format"] = layout_format;
  j["version"] = layout_version;
  j["binary"] = r.binary;
  j["sha256"] = r.fingerprint.sha256;
  j["binary_version"] = r.fingerprint.version;
  j["mode"] = to_string(r.mode);
  auto gs = nlohmann::json::array();
  for (auto g : r.granularities) gs.push_back(g.bytes());
  j["granularities"] = gs;
  j["sections"] = r.sections;
  auto markers = nlohmann::json::array();
  for (const auto& m : r.markers) {
    auto occ = nlohmann::json::array();
    for (const auto& o : m.occurrences) {
      occ.push_back({{"section", o.section},
                     {"offset", o.file_offset},
                     {"address", o.address},
                     {"kind", to_string(o.kind)}});
    }
    nlohmann::json mj{{"marker", m.marker}, {"tail_merged", m.tail_merged}, {"occurrences", occ}};
    if (auto line = m.line()) mj["line"] = *line;
    if (auto page = m.page()) mj["page"] = *page;
    markers.push_back(mj);
  }
  j["markers"] = markers;
  return j;
}

inline StringLayoutReport layout_from_json(const nlohmann::json& j) {
  detail::check_header(j, layout_format, layout_version);
  StringLayoutReport r;
  try {
    r.binary = j.value("binary", "");
    r.fingerprint.sha256 = j.value("sha256", "");
    r.fingerprint.version = j.value("binary_version", "");
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "exact") r.mode = MatchMode::exact;
    else if (mode == "substring") r.mode = MatchMode::substring;
    else fail(ErrorKind::format, "unknown match mode " + mode);
    for (const auto& g : j.at("granularities")) r.granularities.emplace_back(g.get<std::uint64_t>());
    r.sections = j.value("sections", std::vector<std::string>{});
    for (const auto& mj : j.at("markers")) {
      MarkerLayout m;
      m.marker = mj.at("marker").get<std::string>();
      m.tail_merged = mj.value("tail_merged", false);
      for (const auto& oj : mj.at("occurrences")) {
        Occurrence o;
        o.section = oj.at("section").get<std::string>();
        o.file_offset = oj.at("offset").get<std::uint64_t>();
        o.address = oj.value("address", std::uint64_t{0});
        const auto kind = oj.at("kind").get<std::string>();
        if (kind == "exact") o.kind = OccurrenceKind::exact;
        else if (kind == "tail") o.kind = OccurrenceKind::tail;
        else if (kind == "inner") o.kind = OccurrenceKind::inner;
        else fail(ErrorKind::format, "unknown occurrence kind " + kind);
        m.occurrences.push_back(std::move(o));
      }
      r.markers.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("malformed layout report: ") + e.what());
  }
  return r;
}

inline std::string dump_layout(const StringLayoutReport& r) { return to_json(r).dump(2) + "\n"; }

inline StringLayoutReport read_layout(const std::filesystem::path& path) {
  return layout_from_json(detail::parse_json_file(path));
}

inline void write_layout(const std::filesystem::path& path, const StringLayoutReport& r) {
  detail::write_text_file(path, dump_layout(r));
}

// marker,occurrences,primary_offset,line,page,tail_merged (absent fields empty)
inline void write_markers_csv(std::ostream& out, const StringLayoutReport& r) {
  csv::write_row(out, {"marker", "occurrences", "primary_offset", "line", "page", "tail_merged"});
  for (const auto& m : r.markers) {
    const auto* p = m.primary();
    const auto opt = [](std::optional<std::uint64_t> v) { return v ? std::to_string(*v) : std::string(); };
    csv::write_row(out, {m.marker, std::to_string(m.occurrences.size()),
                         p ? std::to_string(p->file_offset) : std::string(), opt(m.line()), opt(m.page()),
                         m.tail_merged ? "yes" : "no"});
  }
}

// marker_a,marker_b,granularity,placement
inline void write_pairs_csv(std::ostream& out, const StringLayoutReport& r) {
  csv::write_row(out, {"marker_a", "marker_b", "granularity", "placement"});
  for (auto g : r.granularities) {
    for (std::size_t i = 0; i < r.markers.size(); ++i) {
      for (std::size_t j = i + 1; j < r.markers.size(); ++j) {
        csv::write_row(out, {r.markers[i].marker, r.markers[j].marker, g.label(),
                             to_string(placement_of(r.markers[i], r.markers[j], g))});
      }
    }
  }
}

// marker_a,marker_b,grade,note
inline void write_grades_csv(std::ostream& out, const std::vector<PairGrade>& grades) {
  csv::write_row(out, {"marker_a", "marker_b", "grade", "note"});
  for (const auto& g : grades) csv::write_row(out, {g.a, g.b, to_string(g.grade), g.note});
}

// marker,from,to,count_from,count_to,deduplicated / marker_a,marker_b,granularity,from,to
inline void write_delta_csv(std::ostream& out, const LayoutDelta& d) {
  const auto opt = [](std::optional<std::uint64_t> v) { return v ? std::to_string(*v) : std::string(); };
  csv::write_row(out, {"marker", "from", "to", "count_from", "count_to", "deduplicated"});
  for (const auto& m : d.moves) {
    csv::write_row(out, {m.marker, opt(m.from), opt(m.to), std::to_string(m.count_from),
                         std::to_string(m.count_to), m.deduplicated ? "yes" : "no"});
  }
  out << '\n';
  csv::write_row(out, {"marker_a", "marker_b", "granularity", "from", "to"});
  for (const auto& t : d.transitions) {
    csv::write_row(out, {t.a, t.b, t.granularity.label(), to_string(t.from), to_string(t.to)});
  }
}

}  // namespace strata
