#pragma once

// Builds small, valid ELF files with hand-placed section contents. These are
// the ground truth for the binscan tests: the test knows where every string
// was put because it put it there.
//
// Placement script, one directive per line ('#' starts a comment):
//
//   section .rodata [rw|exec]   start a section (default: allocated, read-only)
//   org 0x1050                  move to this offset inside the section
//   align 64                    move to the next multiple
//   str KeyA                    the text plus a terminating NUL
//   raw KeyA                    the text, no terminator
//   pad 64 [c]                  64 copies of c (default 'x')
//
// Sections are laid out page-aligned from file offset 0x1000 in script order;
// each section's address is 0x400000 + its file offset.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace strata::test_support {

struct FixtureSection {
  std::string name;
  std::uint32_t type = 1;   // SHT_PROGBITS
  std::uint64_t flags = 2;  // SHF_ALLOC
  std::vector<std::uint8_t> bytes;
  // Where each `str` was written, in section offsets.
  std::vector<std::pair<std::string, std::uint64_t>> strings;

  FixtureSection& org(std::uint64_t off) {
    if (off < bytes.size()) throw std::invalid_argument("org moves backwards in " + name);
    bytes.resize(off, 0);
    return *this;
  }
  FixtureSection& align(std::uint64_t a) { return org((bytes.size() + a - 1) / a * a); }
  FixtureSection& raw(const std::string& s) {
    bytes.insert(bytes.end(), s.begin(), s.end());
    return *this;
  }
  FixtureSection& str(const std::string& s) {
    strings.emplace_back(s, bytes.size());
    raw(s);
    bytes.push_back(0);
    return *this;
  }
  FixtureSection& pad(std::size_t n, char c = 'x') {
    bytes.insert(bytes.end(), n, static_cast<std::uint8_t>(c));
    return *this;
  }
};

struct ElfFixture {
  std::vector<FixtureSection> sections;
  bool is64 = true;
  bool little = true;

  static constexpr std::uint64_t first_offset = 0x1000;
  static constexpr std::uint64_t base_address = 0x400000;

  FixtureSection& section(const std::string& name, std::uint64_t flags = 2) {
    sections.push_back(FixtureSection{name, 1, flags, {}, {}});
    return sections.back();
  }

  FixtureSection& rodata() {
    for (auto& s : sections) {
      if (s.name == ".rodata") return s;
    }
    return section(".rodata");
  }

  std::uint64_t offset_of(std::size_t index) const {
    std::uint64_t off = first_offset;
    for (std::size_t i = 0; i < index; ++i) off = (off + sections[i].bytes.size() + 0xfff) / 0x1000 * 0x1000;
    return off;
  }

  std::uint64_t offset_of(const std::string& name) const {
    for (std::size_t i = 0; i < sections.size(); ++i) {
      if (sections[i].name == name) return offset_of(i);
    }
    throw std::invalid_argument("no section " + name);
  }

  // File offsets of every `str` of `text` in sections with the given flags.
  std::vector<std::uint64_t> placed(const std::string& text, std::uint64_t flags = 2) const {
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < sections.size(); ++i) {
      if (sections[i].flags != flags) continue;
      for (const auto& [s, at] : sections[i].strings) {
        if (s == text) out.push_back(offset_of(i) + at);
      }
    }
    return out;
  }

  std::vector<std::uint8_t> build() const {
    std::vector<std::uint8_t> out;
    auto put = [&](std::uint64_t at, std::uint64_t v, unsigned width) {
      if (out.size() < at + width) out.resize(at + width, 0);
      for (unsigned i = 0; i < width; ++i) {
        const unsigned shift = little ? 8 * i : 8 * (width - 1 - i);
        out[at + i] = static_cast<std::uint8_t>(v >> shift);
      }
    };
    const unsigned aw = is64 ? 8 : 4;

    std::string shstrtab(1, '\0');
    std::vector<std::uint32_t> name_at;
    for (const auto& s : sections) {
      name_at.push_back(static_cast<std::uint32_t>(shstrtab.size()));
      shstrtab += s.name;
      shstrtab += '\0';
    }
    const auto strtab_name = static_cast<std::uint32_t>(shstrtab.size());
    shstrtab += ".shstrtab";
    shstrtab += '\0';

    std::vector<std::uint64_t> offsets;
    for (std::size_t i = 0; i < sections.size(); ++i) {
      offsets.push_back(offset_of(i));
      out.resize(offsets.back(), 0);
      out.insert(out.end(), sections[i].bytes.begin(), sections[i].bytes.end());
    }
    if (out.size() < first_offset) out.resize(first_offset, 0);
    const std::uint64_t strtab_off = out.size();
    out.insert(out.end(), shstrtab.begin(), shstrtab.end());
    const std::uint64_t shoff = (out.size() + 7) / 8 * 8;
    const unsigned shentsize = is64 ? 64 : 40;
    const std::uint64_t shnum = sections.size() + 2;
    out.resize(shoff + shnum * shentsize, 0);

    // ELF header
    const std::uint8_t ident[] = {0x7f, 'E', 'L', 'F', static_cast<std::uint8_t>(is64 ? 2 : 1),
                                  static_cast<std::uint8_t>(little ? 1 : 2), 1};
    std::copy(std::begin(ident), std::end(ident), out.begin());
    put(16, 3, 2);                      // ET_DYN
    put(18, is64 ? 62 : 3, 2);          // x86-64 / i386
    put(20, 1, 4);
    put(is64 ? 32 : 28, 0, aw);         // no program headers
    put(is64 ? 40 : 32, shoff, aw);
    put(is64 ? 52 : 40, is64 ? 64 : 52, 2);
    put(is64 ? 58 : 46, shentsize, 2);
    put(is64 ? 60 : 48, shnum, 2);
    put(is64 ? 62 : 50, shnum - 1, 2);  // .shstrtab is last

    auto header = [&](std::uint64_t i, std::uint32_t name, std::uint32_t type, std::uint64_t flags,
                      std::uint64_t addr, std::uint64_t off, std::uint64_t size) {
      const auto h = shoff + i * shentsize;
      put(h, name, 4);
      put(h + 4, type, 4);
      if (is64) {
        put(h + 8, flags, 8);
        put(h + 16, addr, 8);
        put(h + 24, off, 8);
        put(h + 32, size, 8);
        put(h + 48, 1, 8);
      } else {
        put(h + 8, flags, 4);
        put(h + 12, addr, 4);
        put(h + 16, off, 4);
        put(h + 20, size, 4);
        put(h + 32, 1, 4);
      }
    };
    for (std::size_t i = 0; i < sections.size(); ++i) {
      const auto& s = sections[i];
      header(i + 1, name_at[i], s.type, s.flags, base_address + offsets[i], offsets[i], s.bytes.size());
    }
    header(shnum - 1, strtab_name, 3, 0, 0, strtab_off, shstrtab.size());
    return out;
  }

  void write(const std::filesystem::path& path) const {
    const auto bytes = build();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("cannot write " + path.string());
  }
};

inline std::uint64_t parse_number(const std::string& s) {
  std::size_t used = 0;
  const auto v = std::stoull(s, &used, 0);
  if (used != s.size()) throw std::invalid_argument("not a number: " + s);
  return v;
}

inline ElfFixture parse_placement(std::istream& in) {
  ElfFixture fx;
  FixtureSection* cur = nullptr;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream words(line.substr(first));
    std::string op;
    words >> op;
    std::string rest;
    std::getline(words, rest);
    if (!rest.empty() && rest.front() == ' ') rest.erase(0, 1);
    auto need_section = [&] {
      if (!cur) throw std::invalid_argument("line " + std::to_string(lineno) + ": no section yet");
      return cur;
    };
    if (op == "section") {
      std::istringstream args(rest);
      std::string name, kind;
      args >> name >> kind;
      std::uint64_t flags = 2;
      if (kind == "rw") flags |= 1;
      else if (kind == "exec") flags |= 4;
      else if (!kind.empty()) throw std::invalid_argument("line " + std::to_string(lineno) + ": bad section kind");
      cur = &fx.section(name, flags);
    } else if (op == "org") {
      need_section()->org(parse_number(rest));
    } else if (op == "align") {
      need_section()->align(parse_number(rest));
    } else if (op == "str") {
      need_section()->str(rest);
    } else if (op == "raw") {
      need_section()->raw(rest);
    } else if (op == "pad") {
      std::istringstream args(rest);
      std::string n, c;
      args >> n >> c;
      need_section()->pad(parse_number(n), c.empty() ? 'x' : c.front());
    } else {
      throw std::invalid_argument("line " + std::to_string(lineno) + ": unknown directive " + op);
    }
  }
  return fx;
}

inline ElfFixture read_placement(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_placement(in);
}

}  // namespace strata::test_support
