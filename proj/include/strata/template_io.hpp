#pragma once

// Template file (JSON, "strata-template" v1).
//
//   {
//     "format": "strata-template", "version": 1,
//     "binary": {"sha256": "...", "version": "100.0.4896.60"},
//     "manifest": "manifest.json",
//     "entries": [{"events": ["KeyA"], "source": "chrome", "offset": 4096,
//                  "granularity": 4096, "score": 0.95,
//                  "suppress": [0, 8192], "distinguishers": []}],
//     "unclassifiable": ["Digit9"],
//     "warnings": ["..."]
//   }
//
// `suppress` and `distinguishers` are page offsets within the entry's source.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "strata/core.hpp"
#include "strata/trace.hpp"

namespace strata {

inline constexpr std::string_view template_format = "strata-template";
inline constexpr int template_version = 1;

inline nlohmann::json to_json(const ClassifiedTemplate& t) {
  nlohmann::json j;
  j["format"] = template_format;
  j["version"] = template_version;
  j["binary"] = {{"sha256", t.fingerprint.sha256}, {"version", t.fingerprint.version}};
  j["manifest"] = t.manifest;
  auto entries = nlohmann::json::array();
  for (const auto& e : t.entries) {
    nlohmann::json ej;
    auto names = nlohmann::json::array();
    for (const auto& ev : e.group) names.push_back(ev.name);
    ej["events"] = names;
    ej["source"] = e.location.source_id;
    ej["offset"] = e.location.offset;
    ej["granularity"] = e.location.granularity.bytes();
    ej["score"] = e.score;
    auto offsets = [](const std::vector<Location>& locs) {
      auto arr = nlohmann::json::array();
      for (const auto& l : locs) arr.push_back(l.offset);
      return arr;
    };
    ej["suppress"] = offsets(e.prefetch_suppress);
    ej["distinguishers"] = offsets(e.distinguishers);
    entries.push_back(ej);
  }
  j["entries"] = entries;
  auto unclassified = nlohmann::json::array();
  for (const auto& e : t.unclassifiable) unclassified.push_back(e.name);
  j["unclassifiable"] = unclassified;
  j["warnings"] = t.warnings;
  return j;
}

inline ClassifiedTemplate template_from_json(const nlohmann::json& j) {
  detail::check_header(j, template_format, template_version);
  ClassifiedTemplate t;
  try {
    if (j.contains("binary")) {
      t.fingerprint.sha256 = detail::json_get<std::string>(j["binary"], "sha256", "");
      t.fingerprint.version = detail::json_get<std::string>(j["binary"], "version", "");
    }
    t.manifest = detail::json_get<std::string>(j, "manifest", "");
    for (const auto& ej : j.at("entries")) {
      TemplateEntry e;
      for (const auto& name : ej.at("events")) e.group.push_back(EventId{name.get<std::string>()});
      const auto source = ej.at("source").get<std::string>();
      const Granularity g(ej.at("granularity").get<std::uint64_t>());
      e.location = Location{source, ej.at("offset").get<std::uint64_t>(), g};
      if (!g.divides(e.location.offset)) fail(ErrorKind::config, "misaligned template entry");
      e.score = ej.at("score").get<double>();
      for (const auto& off : ej.value("suppress", nlohmann::json::array())) {
        e.prefetch_suppress.push_back(Location{source, off.get<std::uint64_t>(), granularity::page});
      }
      for (const auto& off : ej.value("distinguishers", nlohmann::json::array())) {
        e.distinguishers.push_back(Location{source, off.get<std::uint64_t>(), granularity::page});
      }
      t.entries.push_back(std::move(e));
    }
    for (const auto& name : j.value("unclassifiable", nlohmann::json::array())) {
      t.unclassifiable.push_back(EventId{name.get<std::string>()});
    }
    t.warnings = j.value("warnings", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("malformed template: ") + e.what());
  }
  t.validate();
  return t;
}

inline std::string dump_template(const ClassifiedTemplate& t) { return to_json(t).dump(2) + "\n"; }

inline ClassifiedTemplate read_template(const std::filesystem::path& path) {
  return template_from_json(detail::parse_json_file(path));
}

inline void write_template(const std::filesystem::path& path, const ClassifiedTemplate& t) {
  detail::write_text_file(path, dump_template(t));
}

}  // namespace strata
