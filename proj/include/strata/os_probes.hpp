#pragma once

// Linux probe backends. All share the unified polarity of ProbeBackend:
// `present` means the location saw activity since its last reset.
//
// Sources are file paths: a Location's source_id is the mapped file and its
// offset is a file offset, exactly what enumerate_mappings produces.

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <sys/uio.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#if defined(__x86_64__) || defined(__i386__)
#include <x86intrin.h>
#define STRATA_HAVE_FLUSH 1
#endif

#include "strata/core.hpp"
#include "strata/probes.hpp"

namespace strata {

// ---- plumbing -----------------------------------------------------------------

class FileDescriptor {
 public:
  FileDescriptor() = default;
  explicit FileDescriptor(int fd) noexcept : fd_(fd) {}
  FileDescriptor(const FileDescriptor&) = delete;
  FileDescriptor& operator=(const FileDescriptor&) = delete;
  FileDescriptor(FileDescriptor&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  FileDescriptor& operator=(FileDescriptor&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~FileDescriptor() { close(); }

  static FileDescriptor open(const std::string& path, int flags, ErrorKind on_error = ErrorKind::io) {
    const int fd = ::open(path.c_str(), flags | O_CLOEXEC);
    if (fd < 0) fail(on_error, "cannot open " + path + ": " + std::strerror(errno));
    return FileDescriptor(fd);
  }

  int get() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }

 private:
  void close() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  int fd_ = -1;
};

// Read-only shared mapping of a whole file, with kernel read-around disabled
// so the probe's own accesses do not prefetch neighbours.
class MappedFile {
 public:
  explicit MappedFile(const std::string& path) : fd_(FileDescriptor::open(path, O_RDONLY)) {
    struct stat st {};
    if (::fstat(fd_.get(), &st) != 0) fail(ErrorKind::io, "cannot stat " + path);
    size_ = static_cast<std::size_t>(st.st_size);
    if (size_ == 0) return;
    void* p = ::mmap(nullptr, size_, PROT_READ, MAP_SHARED, fd_.get(), 0);
    if (p == MAP_FAILED) fail(ErrorKind::io, "cannot map " + path + ": " + std::strerror(errno));
    data_ = static_cast<const std::uint8_t*>(p);
    ::madvise(p, size_, MADV_RANDOM);
  }
  MappedFile(const MappedFile&) = delete;
  MappedFile& operator=(const MappedFile&) = delete;
  ~MappedFile() {
    if (data_) ::munmap(const_cast<std::uint8_t*>(data_), size_);
  }

  int fd() const noexcept { return fd_.get(); }
  std::size_t size() const noexcept { return size_; }
  const std::uint8_t* at(std::uint64_t offset) const noexcept {
    return offset < size_ ? data_ + offset : nullptr;
  }

  void touch(std::uint64_t offset) const noexcept {
    if (const auto* p = at(offset)) {
      [[maybe_unused]] volatile std::uint8_t sink = *p;
    }
  }

 private:
  FileDescriptor fd_;
  const std::uint8_t* data_ = nullptr;
  std::size_t size_ = 0;
};

class MappedFileSet {
 public:
  const MappedFile& get(const std::string& path) {
    auto it = files_.find(path);
    if (it == files_.end()) it = files_.emplace(path, std::make_unique<MappedFile>(path)).first;
    return *it->second;
  }

 private:
  std::map<std::string, std::unique_ptr<MappedFile>> files_;
};

// Runs the user's input-synthesis command for an event. "{event}" in the
// template is replaced by the shell-quoted event name. IDLE just waits.
class EventInjector {
 public:
  EventInjector() = default;
  EventInjector(std::string command_template, double idle_seconds)
      : command_(std::move(command_template)), idle_seconds_(idle_seconds) {}

  std::string command_for(const EventId& event) const {
    std::string quoted = "'";
    for (char c : event.name) quoted += c == '\'' ? std::string("'\\''") : std::string(1, c);
    quoted += "'";
    std::string cmd = command_;
    for (auto pos = cmd.find("{event}"); pos != std::string::npos; pos = cmd.find("{event}", pos + quoted.size())) {
      cmd.replace(pos, 7, quoted);
    }
    return cmd;
  }

  void inject(const EventId& event) const {
    if (event.is_idle()) {
      std::this_thread::sleep_for(std::chrono::duration<double>(idle_seconds_));
      return;
    }
    if (command_.empty()) fail(ErrorKind::config, "no injection hook configured for event " + event.name);
    const int rc = std::system(command_for(event).c_str());
    if (rc != 0) fail(ErrorKind::probe, "injection hook failed for " + event.name);
  }

 private:
  std::string command_;
  double idle_seconds_ = 0.0;
};

namespace detail {

inline std::uint64_t steady_micros(std::chrono::steady_clock::time_point since) {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - since).count());
}

}  // namespace detail

// Shared parts of the OS backends: injection, pacing, clock and touching
// pages through the attacker's own mapping.
class OsProbeBase : public ProbeBackend {
 public:
  OsProbeBase(EventInjector injector, std::chrono::microseconds round)
      : injector_(std::move(injector)), round_(round), epoch_(std::chrono::steady_clock::now()) {}

  void trigger(const EventId& event) override { injector_.inject(event); }

  void touch(std::span<const Location> locs) override {
    for (const auto& loc : locs) files_.get(loc.source_id).touch(loc.offset);
  }

  void advance() override {
    if (round_.count() > 0) std::this_thread::sleep_for(round_);
  }

  std::uint64_t clock() const override { return detail::steady_micros(epoch_); }

 protected:
  MappedFileSet files_;

 private:
  EventInjector injector_;
  std::chrono::microseconds round_;
  std::chrono::steady_clock::time_point epoch_;
};

// ---- page-idle bitmap -----------------------------------------------------------

// One 64-bit word per 64 page frames; writing a 1 marks the frame idle, the
// kernel clears it on access. A set bit on read-back therefore means "not
// accessed". Frames come from the victim's pagemap, which needs
// CAP_SYS_ADMIN to expose PFNs.
struct PageIdlePaths {
  std::string bitmap = "/sys/kernel/mm/page_idle/bitmap";
  std::string pagemap;  // "/proc/<pid>/pagemap"
};

class PageIdleProbe final : public OsProbeBase {
 public:
  PageIdleProbe(std::vector<MemoryRegion> regions, PageIdlePaths paths, EventInjector injector = {},
                std::chrono::microseconds round = std::chrono::microseconds{0})
      : OsProbeBase(std::move(injector), round),
        regions_(std::move(regions)),
        bitmap_(FileDescriptor::open(paths.bitmap, O_RDWR, ErrorKind::environment)),
        pagemap_(FileDescriptor::open(paths.pagemap, O_RDONLY, ErrorKind::environment)) {}

  Granularity granularity() const override { return granularity::page; }
  Capabilities capabilities() const override { return {false, true, false}; }
  std::string identity() const override { return "pageidle@4KB"; }

  void reset(std::span<const Location> locs) override {
    require_granularity(locs);
    for (const auto& loc : locs) {
      if (auto pfn = frame_of(loc)) {
        const std::uint64_t word = std::uint64_t{1} << (*pfn % 64);
        // Failure leaves the bit as is; the following check reports the truth.
        [[maybe_unused]] auto n = ::pwrite(bitmap_.get(), &word, sizeof word, static_cast<off_t>(*pfn / 64 * 8));
      }
    }
  }

  std::vector<Presence> check(std::span<const Location> locs) override {
    require_granularity(locs);
    count_probes(locs.size());
    std::vector<Presence> out;
    out.reserve(locs.size());
    for (const auto& loc : locs) {
      const auto pfn = frame_of(loc);
      std::uint64_t word = 0;
      if (!pfn || ::pread(bitmap_.get(), &word, sizeof word, static_cast<off_t>(*pfn / 64 * 8)) != sizeof word) {
        out.push_back(Presence::unknown);
        continue;
      }
      out.push_back((word >> (*pfn % 64)) & 1 ? Presence::idle : Presence::present);
    }
    return out;
  }

  // Virtual address of a file offset in the victim, if mapped.
  std::optional<std::uint64_t> address_of(const Location& loc) const {
    for (const auto& r : regions_) {
      if (r.source_id == loc.source_id && loc.offset >= r.offset && loc.offset < r.end() && r.base_address) {
        return r.base_address + (loc.offset - r.offset);
      }
    }
    return std::nullopt;
  }

  std::optional<std::uint64_t> frame_of(const Location& loc) const {
    const auto va = address_of(loc);
    if (!va) return std::nullopt;
    std::uint64_t entry = 0;
    if (::pread(pagemap_.get(), &entry, sizeof entry, static_cast<off_t>(*va / 4096 * 8)) != sizeof entry) {
      return std::nullopt;
    }
    constexpr std::uint64_t present_bit = std::uint64_t{1} << 63;
    constexpr std::uint64_t pfn_mask = (std::uint64_t{1} << 55) - 1;
    const std::uint64_t pfn = entry & pfn_mask;
    if (!(entry & present_bit) || pfn == 0) return std::nullopt;
    return pfn;
  }

 private:
  std::vector<MemoryRegion> regions_;
  FileDescriptor bitmap_;
  FileDescriptor pagemap_;
};

// ---- page-cache residency -------------------------------------------------------

enum class EvictionStrategy {
  fadvise,       // POSIX_FADV_DONTNEED on the probed page
  eviction_file  // stream through a file larger than the victim's working set
};

struct PageCacheOptions {
  EvictionStrategy eviction = EvictionStrategy::fadvise;
  std::string eviction_file;
};

// RWF_NOWAIT reads succeed only from the page cache: success means resident,
// EAGAIN means not. Observing residency needs the page evicted first, so the
// backend reports a destructive read and resets by evicting.
class PageCacheProbe final : public OsProbeBase {
 public:
  explicit PageCacheProbe(PageCacheOptions opts = {}, EventInjector injector = {},
                          std::chrono::microseconds round = std::chrono::microseconds{0})
      : OsProbeBase(std::move(injector), round), opts_(std::move(opts)) {
    if (opts_.eviction == EvictionStrategy::eviction_file && opts_.eviction_file.empty()) {
      fail(ErrorKind::config, "eviction-file strategy needs an eviction file");
    }
  }

  Granularity granularity() const override { return granularity::page; }
  Capabilities capabilities() const override { return {true, false, false}; }
  std::string identity() const override { return "pagecache@4KB"; }

  void reset(std::span<const Location> locs) override {
    require_granularity(locs);
    if (opts_.eviction == EvictionStrategy::eviction_file) {
      const auto& ev = files_.get(opts_.eviction_file);
      for (std::uint64_t off = 0; off < ev.size(); off += 4096) ev.touch(off);
      return;
    }
    for (const auto& loc : locs) {
      const auto& f = files_.get(loc.source_id);
      ::posix_fadvise(f.fd(), static_cast<off_t>(loc.offset), 4096, POSIX_FADV_DONTNEED);
    }
  }

  std::vector<Presence> check(std::span<const Location> locs) override {
    require_granularity(locs);
    count_probes(locs.size());
    std::vector<Presence> out;
    out.reserve(locs.size());
    for (const auto& loc : locs) out.push_back(resident(files_.get(loc.source_id).fd(), loc.offset));
    return out;
  }

  static Presence resident(int fd, std::uint64_t offset) {
    char byte = 0;
    iovec iov{&byte, 1};
    const auto n = ::preadv2(fd, &iov, 1, static_cast<off_t>(offset), RWF_NOWAIT);
    if (n == 1) return Presence::present;
    if (n < 0 && errno == EAGAIN) return Presence::idle;
    return Presence::unknown;
  }

 private:
  PageCacheOptions opts_;
};

// ---- flush + reload ---------------------------------------------------------------

#ifdef STRATA_HAVE_FLUSH

namespace detail {

inline std::uint64_t timed_load(const volatile std::uint8_t* p) {
  unsigned aux = 0;
  _mm_mfence();
  _mm_lfence();
  const auto t0 = __rdtscp(&aux);
  _mm_lfence();
  [[maybe_unused]] std::uint8_t v = *p;
  const auto t1 = __rdtscp(&aux);
  _mm_lfence();
  return t1 - t0;
}

inline void flush(const void* p) {
  _mm_clflush(p);
  _mm_mfence();
}

inline std::uint64_t median(std::vector<std::uint64_t> v) {
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
  return v[v.size() / 2];
}

}  // namespace detail

struct FlushCalibration {
  std::uint64_t cached_median = 0;
  std::uint64_t uncached_median = 0;
  std::uint64_t threshold = 0;  // reload faster than this means cached
};

// Median of `rounds` cached and uncached reloads of `line`; threshold at the
// midpoint.
inline FlushCalibration calibrate_flush(const std::uint8_t* line, std::size_t rounds = 1000) {
  std::vector<std::uint64_t> hit, miss;
  hit.reserve(rounds);
  miss.reserve(rounds);
  for (std::size_t i = 0; i < rounds; ++i) {
    [[maybe_unused]] volatile std::uint8_t warm = *line;
    hit.push_back(detail::timed_load(line));
    detail::flush(line);
    miss.push_back(detail::timed_load(line));
  }
  FlushCalibration c;
  c.cached_median = detail::median(std::move(hit));
  c.uncached_median = detail::median(std::move(miss));
  c.threshold = (c.cached_median + c.uncached_median) / 2;
  return c;
}

class FlushReloadProbe final : public OsProbeBase {
 public:
  FlushReloadProbe(std::uint64_t threshold, EventInjector injector = {},
                   std::chrono::microseconds round = std::chrono::microseconds{0})
      : OsProbeBase(std::move(injector), round), threshold_(threshold) {}

  Granularity granularity() const override { return granularity::cache_line; }
  Capabilities capabilities() const override { return {true, false, false}; }
  std::string identity() const override { return "flush@64B"; }

  void reset(std::span<const Location> locs) override {
    require_granularity(locs);
    for (const auto& loc : locs) {
      if (const auto* p = files_.get(loc.source_id).at(loc.offset)) detail::flush(p);
    }
  }

  // The reload caches the line, so each check flushes it again.
  std::vector<Presence> check(std::span<const Location> locs) override {
    require_granularity(locs);
    count_probes(locs.size());
    std::vector<Presence> out;
    out.reserve(locs.size());
    for (const auto& loc : locs) {
      const auto* p = files_.get(loc.source_id).at(loc.offset);
      if (!p) {
        out.push_back(Presence::unknown);
        continue;
      }
      out.push_back(detail::timed_load(p) < threshold_ ? Presence::present : Presence::idle);
      detail::flush(p);
    }
    return out;
  }

  std::uint64_t threshold() const noexcept { return threshold_; }

 private:
  std::uint64_t threshold_;
};

#endif  // STRATA_HAVE_FLUSH

// ---- coarse layers over a fine backend ------------------------------------------------

// Presents a finer backend at a coarser granularity: a coarse location is
// present if any of its children inside the regions is.
class AggregatingProbe final : public ProbeBackend {
 public:
  AggregatingProbe(ProbeBackend& inner, Granularity coarse, std::vector<MemoryRegion> regions)
      : inner_(inner), coarse_(coarse), regions_(std::move(regions)) {
    if (!(inner.granularity() < coarse)) {
      fail(ErrorKind::invalid_argument, "aggregation needs a coarser granularity than " + inner.granularity().label());
    }
  }

  Granularity granularity() const override { return coarse_; }
  Capabilities capabilities() const override { return inner_.capabilities(); }
  std::string identity() const override { return inner_.identity() + "/" + coarse_.label(); }

  void reset(std::span<const Location> locs) override {
    require_granularity(locs);
    for (const auto& loc : locs) {
      const auto kids = expand(loc);
      inner_.reset(kids);
    }
  }

  void trigger(const EventId& e) override { inner_.trigger(e); }
  void touch(std::span<const Location> locs) override { inner_.touch(locs); }
  void advance() override { inner_.advance(); }
  std::uint64_t clock() const override { return inner_.clock(); }

  std::vector<Presence> check(std::span<const Location> locs) override {
    require_granularity(locs);
    count_probes(locs.size());
    std::vector<Presence> out;
    out.reserve(locs.size());
    for (const auto& loc : locs) {
      const auto kids = expand(loc);
      const auto states = inner_.check(kids);
      if (std::find(states.begin(), states.end(), Presence::present) != states.end()) out.push_back(Presence::present);
      else if (std::find(states.begin(), states.end(), Presence::unknown) != states.end()) out.push_back(Presence::unknown);
      else out.push_back(Presence::idle);
    }
    return out;
  }

 private:
  std::vector<Location> expand(const Location& loc) const {
    std::vector<Location> out;
    for (const auto& r : regions_) {
      if (r.source_id != loc.source_id || r.end() <= loc.offset || r.offset >= loc.end()) continue;
      auto part = children(loc, inner_.granularity(), Extent{r.offset, r.end()});
      out.insert(out.end(), part.begin(), part.end());
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  ProbeBackend& inner_;
  Granularity coarse_;
  std::vector<MemoryRegion> regions_;
};

// ---- environment ------------------------------------------------------------------

inline void drop_page_caches(const std::string& control = "/proc/sys/vm/drop_caches") {
  ::sync();
  const auto fd = FileDescriptor::open(control, O_WRONLY, ErrorKind::environment);
  if (::write(fd.get(), "3\n", 2) != 2) {
    fail(ErrorKind::environment, "dropping caches needs CAP_SYS_ADMIN (write to " + control + " failed)");
  }
}

// Empty when the page-idle backend can run here; otherwise what is missing.
inline std::string pageidle_missing(const PageIdlePaths& paths) {
  if (::access(paths.bitmap.c_str(), R_OK | W_OK) != 0) {
    return "read/write access to " + paths.bitmap + " (root, CONFIG_IDLE_PAGE_TRACKING)";
  }
  if (::access(paths.pagemap.c_str(), R_OK) != 0) return "read access to " + paths.pagemap + " (CAP_SYS_ADMIN)";
  return {};
}

inline bool flush_supported() noexcept {
#ifdef STRATA_HAVE_FLUSH
  return true;
#else
  return false;
#endif
}

}  // namespace strata
