#pragma once

// Section-header level ELF reader: enough to locate read-only data sections
// and map file offsets to virtual addresses. ELF32/ELF64, either byte order.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "strata/error.hpp"

namespace strata::elf {

inline constexpr std::uint32_t sht_progbits = 1;
inline constexpr std::uint32_t sht_nobits = 8;
inline constexpr std::uint64_t shf_write = 0x1;
inline constexpr std::uint64_t shf_alloc = 0x2;
inline constexpr std::uint64_t shf_execinstr = 0x4;
inline constexpr std::uint16_t shn_xindex = 0xffff;

struct Section {
  std::string name;
  std::uint32_t type = 0;
  std::uint64_t flags = 0;
  std::uint64_t addr = 0;
  std::uint64_t offset = 0;
  std::uint64_t size = 0;

  // Allocated, initialised, neither writable nor executable.
  bool is_readonly_data() const noexcept {
    return type == sht_progbits && (flags & shf_alloc) && !(flags & shf_write) &&
           !(flags & shf_execinstr);
  }

  bool contains_file_offset(std::uint64_t off) const noexcept {
    return type != sht_nobits && off >= offset && off < offset + size;
  }
};

class File {
 public:
  explicit File(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) { parse(); }

  static File read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
      return File(std::move(bytes));
    } catch (const Error& e) {
      fail(e.kind(), path.string() + ": " + e.what());
    }
  }

  bool is64() const noexcept { return is64_; }
  bool little_endian() const noexcept { return little_; }
  std::uint16_t machine() const noexcept { return machine_; }
  const std::vector<Section>& sections() const noexcept { return sections_; }
  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

  std::vector<const Section*> readonly_data_sections() const {
    std::vector<const Section*> out;
    for (const auto& s : sections_) {
      if (s.is_readonly_data() && s.size > 0) out.push_back(&s);
    }
    return out;
  }

 private:
  std::uint64_t read_uint(std::uint64_t off, unsigned width) const {
    if (off > bytes_.size() || width > bytes_.size() - off) {
      fail(ErrorKind::format, "truncated ELF (read past end at " + std::to_string(off) + ")");
    }
    std::uint64_t v = 0;
    for (unsigned i = 0; i < width; ++i) {
      const std::uint64_t b = bytes_[off + i];
      v |= little_ ? b << (8 * i) : b << (8 * (width - 1 - i));
    }
    return v;
  }

  void parse() {
    if (bytes_.size() < 16 || std::memcmp(bytes_.data(), "\177ELF", 4) != 0) {
      fail(ErrorKind::format, "not an ELF file");
    }
    const auto cls = bytes_[4], data = bytes_[5];
    if (cls != 1 && cls != 2) fail(ErrorKind::format, "bad ELF class");
    if (data != 1 && data != 2) fail(ErrorKind::format, "bad ELF data encoding");
    is64_ = cls == 2;
    little_ = data == 1;

    const unsigned addr_w = is64_ ? 8 : 4;
    machine_ = static_cast<std::uint16_t>(read_uint(18, 2));
    const std::uint64_t shoff = read_uint(is64_ ? 0x28 : 0x20, addr_w);
    const auto shentsize = read_uint(is64_ ? 0x3A : 0x2E, 2);
    std::uint64_t shnum = read_uint(is64_ ? 0x3C : 0x30, 2);
    std::uint64_t shstrndx = read_uint(is64_ ? 0x3E : 0x32, 2);
    if (shoff == 0) fail(ErrorKind::format, "ELF has no section header table");
    if (shentsize < (is64_ ? 64u : 40u)) fail(ErrorKind::format, "bad section header size");

    auto header = [&](std::uint64_t i) { return shoff + i * shentsize; };
    // Extended numbering lives in section 0.
    if (shnum == 0) shnum = read_uint(header(0) + (is64_ ? 0x20 : 0x14), addr_w);
    if (shstrndx == shn_xindex) shstrndx = read_uint(header(0) + (is64_ ? 0x28 : 0x18), 4);
    if (shoff > bytes_.size() || shnum > (bytes_.size() - shoff) / shentsize) {
      fail(ErrorKind::format, "section header table extends past end of file");
    }

    struct Raw {
      std::uint32_t name;
      Section s;
    };
    std::vector<Raw> raw;
    raw.reserve(shnum);
    for (std::uint64_t i = 0; i < shnum; ++i) {
      const auto h = header(i);
      Raw r;
      r.name = static_cast<std::uint32_t>(read_uint(h, 4));
      r.s.type = static_cast<std::uint32_t>(read_uint(h + 4, 4));
      if (is64_) {
        r.s.flags = read_uint(h + 0x08, 8);
        r.s.addr = read_uint(h + 0x10, 8);
        r.s.offset = read_uint(h + 0x18, 8);
        r.s.size = read_uint(h + 0x20, 8);
      } else {
        r.s.flags = read_uint(h + 0x08, 4);
        r.s.addr = read_uint(h + 0x0C, 4);
        r.s.offset = read_uint(h + 0x10, 4);
        r.s.size = read_uint(h + 0x14, 4);
      }
      if (r.s.type != sht_nobits && r.s.type != 0 &&
          (r.s.offset > bytes_.size() || r.s.size > bytes_.size() - r.s.offset)) {
        fail(ErrorKind::format, "section " + std::to_string(i) + " extends past end of file");
      }
      raw.push_back(r);
    }
    if (shstrndx >= raw.size()) fail(ErrorKind::format, "bad section name table index");
    const auto& strtab = raw[shstrndx].s;
    for (auto& r : raw) {
      if (r.name < strtab.size) {
        const auto* begin = reinterpret_cast<const char*>(bytes_.data() + strtab.offset + r.name);
        r.s.name.assign(begin, strnlen(begin, strtab.size - r.name));
      }
      sections_.push_back(std::move(r.s));
    }
  }

  std::vector<std::uint8_t> bytes_;
  bool is64_ = true;
  bool little_ = true;
  std::uint16_t machine_ = 0;
  std::vector<Section> sections_;
};

}  // namespace strata::elf
