#pragma once

// File-backed mappings of a process, from /proc/<pid>/maps or a saved copy of
// one. Regions are keyed by file path and expressed in file offsets.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "strata/core.hpp"

namespace strata {

struct MapsEntry {
  std::uint64_t start = 0;
  std::uint64_t end = 0;
  std::string perms;
  std::uint64_t offset = 0;
  std::uint64_t inode = 0;
  std::string path;

  bool file_backed() const noexcept { return inode != 0 && !path.empty() && path.front() == '/'; }
};

namespace detail {

inline std::optional<std::uint64_t> parse_hex(std::string_view s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

// "start-end perms offset dev inode [path]"; the path may contain spaces.
inline std::optional<MapsEntry> parse_maps_line(std::string_view line) {
  std::istringstream in{std::string(line)};
  std::string range, perms, offset, dev, inode;
  if (!(in >> range >> perms >> offset >> dev >> inode)) return std::nullopt;
  const auto dash = range.find('-');
  if (dash == std::string::npos) return std::nullopt;
  auto start = detail::parse_hex(std::string_view(range).substr(0, dash));
  auto end = detail::parse_hex(std::string_view(range).substr(dash + 1));
  auto off = detail::parse_hex(offset);
  std::uint64_t ino = 0;
  auto [p, ec] = std::from_chars(inode.data(), inode.data() + inode.size(), ino);
  if (!start || !end || !off || *end < *start || ec != std::errc{}) return std::nullopt;
  MapsEntry e{*start, *end, perms, *off, ino, {}};
  std::string rest;
  std::getline(in, rest);
  const auto first = rest.find_first_not_of(" \t");
  if (first != std::string::npos) e.path = rest.substr(first);
  return e;
}

struct MappingFilter {
  std::vector<std::string> blacklist;  // path prefixes, e.g. "/usr/share/fonts/"

  bool excluded(std::string_view path) const {
    return std::any_of(blacklist.begin(), blacklist.end(),
                       [&](const std::string& prefix) { return path.rfind(prefix, 0) == 0; });
  }
};

// Merges per-path segments into non-overlapping file ranges. Segments that
// continue both the file range and the address range extend the previous
// region; a re-mapping of bytes already covered contributes only its new tail.
inline std::vector<MemoryRegion> regions_from_maps(std::istream& in, const MappingFilter& filter = {}) {
  std::vector<MapsEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto e = parse_maps_line(line);
    if (!e) fail(ErrorKind::format, "maps line " + std::to_string(lineno) + " is malformed");
    if (e->file_backed() && !filter.excluded(e->path) && e->end > e->start) entries.push_back(std::move(*e));
  }
  std::stable_sort(entries.begin(), entries.end(), [](const MapsEntry& a, const MapsEntry& b) {
    return std::tie(a.path, a.offset) < std::tie(b.path, b.offset);
  });

  std::vector<MemoryRegion> out;
  for (const auto& e : entries) {
    const std::uint64_t len = e.end - e.start;
    if (!out.empty() && out.back().source_id == e.path && e.offset <= out.back().end()) {
      auto& prev = out.back();
      const std::uint64_t new_end = e.offset + len;
      if (new_end > prev.end()) prev.length = new_end - prev.offset;
      continue;
    }
    out.push_back(MemoryRegion::make(e.path, e.offset, len, e.start));
  }
  return out;
}

inline std::vector<MemoryRegion> regions_from_maps_file(const std::filesystem::path& path,
                                                        const MappingFilter& filter = {}) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open map listing " + path.string());
  return regions_from_maps(in, filter);
}

inline std::vector<MemoryRegion> enumerate_mappings(int pid, const MappingFilter& filter = {}) {
  const std::filesystem::path maps = "/proc/" + std::to_string(pid) + "/maps";
  std::error_code ec;
  if (!std::filesystem::exists("/proc/" + std::to_string(pid), ec)) {
    fail(ErrorKind::environment, "no process with pid " + std::to_string(pid));
  }
  std::ifstream in(maps);
  if (!in) fail(ErrorKind::environment, "cannot read " + maps.string() + " (needs ptrace read access)");
  return regions_from_maps(in, filter);
}

}  // namespace strata
