#pragma once

// Campaign config file ("strata-campaign" v1): one `key = value` per line,
// '#' starts a comment, lists are comma separated.
//
//   format = strata-campaign
//   version = 1
//   keys = KeyA, KeyB
//   samples = 20
//   ladder = 2MB, 4KB, 64B
//   threshold = 0.5
//   warmup = true
//   idle = true
//   seed = 1
//   backend = sim
//   trace = trace.json
//
// Layer results are CSV with the fixed columns
//   event,source_id,offset,granularity,hits,samples

#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "strata/core.hpp"
#include "strata/csv.hpp"
#include "strata/templater.hpp"
#include "strata/trace.hpp"

namespace strata {

inline constexpr std::string_view campaign_format = "strata-campaign";
inline constexpr int campaign_version = 1;

enum class BackendKind { sim, pageidle, pagecache, flush };

inline std::string to_string(BackendKind k) {
  switch (k) {
    case BackendKind::sim: return "sim";
    case BackendKind::pageidle: return "pageidle";
    case BackendKind::pagecache: return "pagecache";
    case BackendKind::flush: return "flush";
  }
  return "sim";
}

inline std::optional<BackendKind> parse_backend(std::string_view s) {
  if (s == "sim") return BackendKind::sim;
  if (s == "pageidle") return BackendKind::pageidle;
  if (s == "pagecache") return BackendKind::pagecache;
  if (s == "flush") return BackendKind::flush;
  return std::nullopt;
}

// Everything a `template` run needs beyond the search parameters.
struct CampaignFile {
  CampaignConfig campaign;
  BackendKind backend = BackendKind::sim;
  std::string trace;                    // sim: trace file
  std::optional<int> pid;               // OS: live target
  std::string maps;                     // OS: maps listing fixture instead of a pid
  std::vector<std::string> blacklist;
  std::string hook;                     // OS: command template, {event} substituted
  double idle_seconds = 30.0;
  bool drop_caches = false;
  std::string binary;
  std::string binary_version;

  friend bool operator==(const CampaignFile& a, const CampaignFile& b) {
    return a.campaign.keys == b.campaign.keys &&
           a.campaign.samples_per_key == b.campaign.samples_per_key &&
           a.campaign.ladder == b.campaign.ladder &&
           a.campaign.pass_threshold == b.campaign.pass_threshold &&
           a.campaign.warmup == b.campaign.warmup &&
           a.campaign.include_idle == b.campaign.include_idle &&
           a.campaign.rng_seed == b.campaign.rng_seed && a.backend == b.backend &&
           a.trace == b.trace && a.pid == b.pid && a.maps == b.maps &&
           a.blacklist == b.blacklist && a.hook == b.hook && a.idle_seconds == b.idle_seconds &&
           a.drop_caches == b.drop_caches && a.binary == b.binary &&
           a.binary_version == b.binary_version;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto comma = s.find(',', start);
    auto item = trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& i : items) {
    if (!out.empty()) out += ", ";
    out += i;
  }
  return out;
}

inline bool parse_bool(const std::string& v, bool& out) {
  if (v == "true" || v == "yes" || v == "1") { out = true; return true; }
  if (v == "false" || v == "no" || v == "0") { out = false; return true; }
  return false;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace detail

// "4096", "4KB", "2MB", "64B", "1GB"
inline Granularity parse_granularity(std::string_view s) {
  std::string t = detail::trim(s);
  std::uint64_t scale = 1;
  auto ends_with = [&](std::string_view suf) {
    return t.size() > suf.size() && t.compare(t.size() - suf.size(), suf.size(), suf) == 0;
  };
  if (ends_with("TB")) { scale = 1ULL << 40; t.resize(t.size() - 2); }
  else if (ends_with("GB")) { scale = 1ULL << 30; t.resize(t.size() - 2); }
  else if (ends_with("MB")) { scale = 1ULL << 20; t.resize(t.size() - 2); }
  else if (ends_with("KB")) { scale = 1ULL << 10; t.resize(t.size() - 2); }
  else if (ends_with("B")) { t.resize(t.size() - 1); }
  return Granularity(csv::to_u64(t) * scale);
}

inline CampaignFile parse_campaign(std::istream& in, const std::string& name = "<config>") {
  CampaignFile cf;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  std::optional<std::string> format;
  std::optional<int> version;
  auto error = [&](const std::string& msg) -> void {
    fail(ErrorKind::config, name + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    auto body = detail::trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    auto eq = body.find('=');
    if (eq == std::string::npos) error("expected 'key = value'");
    auto key = detail::trim(std::string_view(body).substr(0, eq));
    auto value = detail::trim(std::string_view(body).substr(eq + 1));
    if (!seen.insert(key).second) error("duplicate key '" + key + "'");
    try {
      if (key == "format") format = value;
      else if (key == "version") version = static_cast<int>(csv::to_u64(value));
      else if (key == "keys") {
        cf.campaign.keys.clear();
        for (auto& k : detail::split_list(value)) cf.campaign.keys.push_back(EventId{k});
      } else if (key == "samples") cf.campaign.samples_per_key = static_cast<std::uint32_t>(csv::to_u64(value));
      else if (key == "ladder") {
        cf.campaign.ladder.clear();
        for (auto& g : detail::split_list(value)) cf.campaign.ladder.push_back(parse_granularity(g));
      } else if (key == "threshold") {
        cf.campaign.pass_threshold.clear();
        for (auto& t : detail::split_list(value)) cf.campaign.pass_threshold.push_back(csv::to_double(t));
      } else if (key == "warmup") {
        if (!detail::parse_bool(value, cf.campaign.warmup)) error("warmup must be true or false");
      } else if (key == "idle") {
        if (!detail::parse_bool(value, cf.campaign.include_idle)) error("idle must be true or false");
      } else if (key == "seed") cf.campaign.rng_seed = csv::to_u64(value);
      else if (key == "backend") {
        auto b = parse_backend(value);
        if (!b) error("unknown backend '" + value + "' (sim, pageidle, pagecache, flush)");
        cf.backend = *b;
      } else if (key == "trace") cf.trace = value;
      else if (key == "pid") cf.pid = value.empty() ? std::nullopt : std::optional<int>(static_cast<int>(csv::to_u64(value)));
      else if (key == "maps") cf.maps = value;
      else if (key == "blacklist") cf.blacklist = detail::split_list(value);
      else if (key == "hook") cf.hook = value;
      else if (key == "idle_seconds") cf.idle_seconds = csv::to_double(value);
      else if (key == "drop_caches") {
        if (!detail::parse_bool(value, cf.drop_caches)) error("drop_caches must be true or false");
      } else if (key == "binary") cf.binary = value;
      else if (key == "binary_version") cf.binary_version = value;
      else error("unknown key '" + key + "'");
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::config && std::string_view(e.what()).starts_with(name + ":")) throw;
      error(e.what());
    }
  }
  if (format != campaign_format) {
    lineno = 0;
    error("missing 'format = strata-campaign'");
  }
  if (version != campaign_version) {
    lineno = 0;
    error("unsupported or missing version");
  }
  try {
    cf.campaign.validate();
  } catch (const Error& e) {
    fail(ErrorKind::config, name + ": " + e.what());
  }
  return cf;
}

inline CampaignFile read_campaign(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  return parse_campaign(in, path.string());
}

inline std::string dump_campaign(const CampaignFile& cf) {
  std::ostringstream out;
  const auto& c = cf.campaign;
  std::vector<std::string> keys, ladder, thresholds;
  for (const auto& k : c.keys) keys.push_back(k.name);
  for (const auto& g : c.ladder) ladder.push_back(g.label());
  for (double t : c.pass_threshold) thresholds.push_back(detail::format_double(t));
  out << "format = " << campaign_format << "\n";
  out << "version = " << campaign_version << "\n";
  out << "keys = " << detail::join(keys) << "\n";
  out << "samples = " << c.samples_per_key << "\n";
  out << "ladder = " << detail::join(ladder) << "\n";
  out << "threshold = " << detail::join(thresholds) << "\n";
  out << "warmup = " << (c.warmup ? "true" : "false") << "\n";
  out << "idle = " << (c.include_idle ? "true" : "false") << "\n";
  out << "seed = " << c.rng_seed << "\n";
  out << "backend = " << to_string(cf.backend) << "\n";
  if (!cf.trace.empty()) out << "trace = " << cf.trace << "\n";
  if (cf.pid) out << "pid = " << *cf.pid << "\n";
  if (!cf.maps.empty()) out << "maps = " << cf.maps << "\n";
  if (!cf.blacklist.empty()) out << "blacklist = " << detail::join(cf.blacklist) << "\n";
  if (!cf.hook.empty()) out << "hook = " << cf.hook << "\n";
  out << "idle_seconds = " << detail::format_double(cf.idle_seconds) << "\n";
  out << "drop_caches = " << (cf.drop_caches ? "true" : "false") << "\n";
  if (!cf.binary.empty()) out << "binary = " << cf.binary << "\n";
  if (!cf.binary_version.empty()) out << "binary_version = " << cf.binary_version << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Layer CSV

inline void write_matrix_csv(std::ostream& out, const HitRatioMatrix& h,
                             const std::string& manifest = {}) {
  if (!manifest.empty()) out << "# manifest: " << manifest << "\n";
  out << "# samples_per_event: " << h.samples_per_event() << "\n";
  csv::write_row(out, {"event", "source_id", "offset", "granularity", "hits", "samples"});
  for (std::size_t e = 0; e < h.events().size(); ++e) {
    for (std::size_t l = 0; l < h.locations().size(); ++l) {
      const auto& loc = h.locations()[l];
      csv::write_row(out, {h.events()[e].name, loc.source_id, std::to_string(loc.offset),
                           std::to_string(loc.granularity.bytes()), std::to_string(h.hits(e, l)),
                           std::to_string(h.samples(e, l))});
    }
  }
}

inline std::string dump_matrix_csv(const HitRatioMatrix& h, const std::string& manifest = {}) {
  std::ostringstream out;
  write_matrix_csv(out, h, manifest);
  return out.str();
}

inline HitRatioMatrix read_matrix_csv(std::istream& in) {
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::optional<std::uint32_t> declared_n;
  {
    std::istringstream scan(text);
    std::string line;
    constexpr std::string_view tag = "# samples_per_event: ";
    while (std::getline(scan, line)) {
      if (line.starts_with(tag)) declared_n = static_cast<std::uint32_t>(csv::to_u64(detail::trim(line.substr(tag.size()))));
    }
  }
  std::istringstream body(text);
  auto table = csv::read(body);
  const auto ce = table.column("event"), cs = table.column("source_id"), co = table.column("offset"),
             cg = table.column("granularity"), ch = table.column("hits"), cn = table.column("samples");

  std::vector<EventId> events;
  std::map<std::string, std::size_t> event_idx;
  std::vector<Location> locations;
  std::map<Location, std::size_t> loc_idx;
  std::uint32_t max_n = 0;
  for (const auto& row : table.rows) {
    if (event_idx.emplace(row[ce], events.size()).second) events.push_back(EventId{row[ce]});
    Location loc{row[cs], csv::to_u64(row[co]), Granularity(csv::to_u64(row[cg]))};
    if (!loc.granularity.divides(loc.offset)) fail(ErrorKind::format, "misaligned location in CSV");
    if (loc_idx.emplace(loc, locations.size()).second) locations.push_back(loc);
    max_n = std::max<std::uint32_t>(max_n, static_cast<std::uint32_t>(csv::to_u64(row[cn])));
  }
  HitRatioMatrix h(events, locations, declared_n.value_or(max_n));
  for (const auto& row : table.rows) {
    Location loc{row[cs], csv::to_u64(row[co]), Granularity(csv::to_u64(row[cg]))};
    h.set(event_idx.at(row[ce]), loc_idx.at(loc), static_cast<std::uint32_t>(csv::to_u64(row[ch])),
          static_cast<std::uint32_t>(csv::to_u64(row[cn])));
  }
  return h;
}

inline HitRatioMatrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  return read_matrix_csv(in);
}

}  // namespace strata
