#pragma once

#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "strata/probes.hpp"
#include "strata/trace.hpp"

namespace strata {

struct SimOptions {
  // Chance that a single location check comes back unknown.
  double unknown_probability = 0.0;
  // Rounds of victim activity that elapse inside each reset (eviction cost of
  // a destructive page-cache probe). Activity during eviction is wiped.
  std::uint32_t eviction_rounds = 0;
  bool destructive = false;
  // Throw a probe error once this many location checks have been issued.
  std::optional<std::uint64_t> fail_after_checks;
};

// Trace-driven victim plus the presence state every simulated probe reads.
// Lines record direct accesses; pages additionally receive read-around.
class SimulatedSystem {
 public:
  SimulatedSystem(AccessTrace trace, std::uint64_t seed) : trace_(std::move(trace)), rng_(seed) {
    trace_.validate();
    for (const auto& r : trace_.regions) {
      auto [it, fresh] = sources_.try_emplace(r.source_id);
      auto& s = it->second;
      if (fresh) {
        s.begin = granularity::page.align_down(r.offset);
        s.end = r.end();
      } else {
        s.begin = std::min(s.begin, granularity::page.align_down(r.offset));
        s.end = std::max(s.end, r.end());
      }
    }
    for (auto& [id, s] : sources_) {
      const auto span = s.end - s.begin;
      s.lines.assign((span + 63) / 64, 0);
      s.pages.assign((span + 4095) / 4096, 0);
      s.touched.assign(s.pages.size(), 0);
    }
  }

  const AccessTrace& trace() const noexcept { return trace_; }
  ReadaroundModel& readaround() noexcept { return trace_.readaround; }

  void trigger(const EventId& event) {
    if (!event.is_idle()) {
      const auto* et = trace_.find(event);
      if (!et) fail(ErrorKind::invalid_argument, "simulator has no trace for event " + event.name);
      apply(*et);
      maybe_crosstalk(*et);
    }
    apply_background();
  }

  // One monitoring round: scheduled keystrokes active now, plus background.
  void advance() {
    const auto now = next_round_++;
    for (const auto& s : trace_.schedule) {
      if (now < s.round || now >= s.round + s.hits) continue;
      const auto* et = trace_.find(s.event);
      if (!et) fail(ErrorKind::invalid_argument, "schedule names untraced event " + s.event.name);
      apply(*et);
      if (now == s.round) maybe_crosstalk(*et);
    }
    apply_background();
  }

  std::uint64_t rounds_elapsed() const noexcept { return next_round_; }

  void clear(const Location& loc) {
    auto* s = find(loc.source_id);
    if (!s) return;
    for_each_index(*s, loc, [](std::uint8_t& bit) { bit = 0; });
  }

  bool present(const Location& loc) const {
    const auto* s = find(loc.source_id);
    if (!s) return false;
    bool any = false;
    for_each_index(*s, loc, [&](std::uint8_t bit) { any = any || bit; });
    return any;
  }

  // Attacker-side access: the page becomes resident and no longer faults,
  // so it triggers no read-around of its own.
  void touch(const Location& page) {
    auto* s = find(page.source_id);
    if (!s || page.offset < s->begin || page.offset >= s->end) return;
    const auto idx = (page.offset - s->begin) / 4096;
    s->touched[idx] = 1;
    s->pages[idx] = 1;
  }

  void clear_suppression() {
    for (auto& [id, s] : sources_) std::fill(s.touched.begin(), s.touched.end(), 0);
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }

 private:
  struct SourceState {
    std::uint64_t begin = 0;
    std::uint64_t end = 0;
    std::vector<std::uint8_t> lines;
    std::vector<std::uint8_t> pages;
    std::vector<std::uint8_t> touched;
  };

  SourceState* find(const std::string& id) {
    auto it = sources_.find(id);
    return it == sources_.end() ? nullptr : &it->second;
  }
  const SourceState* find(const std::string& id) const {
    auto it = sources_.find(id);
    return it == sources_.end() ? nullptr : &it->second;
  }

  template <typename State, typename F>
  static void for_each_index(State& s, const Location& loc, F&& f) {
    const auto lo = std::max(loc.offset, s.begin);
    const auto hi = std::min(loc.end(), s.end);
    if (lo >= hi) return;
    const bool by_page = loc.granularity >= granularity::page;
    auto& bits = by_page ? s.pages : s.lines;
    const std::uint64_t unit = by_page ? 4096 : 64;
    for (auto i = (lo - s.begin) / unit; i <= (hi - 1 - s.begin) / unit; ++i) f(bits[i]);
  }

  void access(const std::string& source, std::uint64_t offset) {
    auto* s = find(source);
    if (!s || offset < s->begin || offset >= s->end) return;
    s->lines[(offset - s->begin) / 64] = 1;
    const auto page = (offset - s->begin) / 4096;
    s->pages[page] = 1;
    if (!trace_.readaround.enabled || s->touched[page]) return;
    const auto w = readaround_window(page, trace_.readaround, s->pages.size());
    for (auto p = w.first; p <= w.last; ++p) s->pages[p] = 1;
  }

  void apply(const EventTrace& et) {
    for (const auto& sa : et.accesses) {
      for (auto off : sa.offsets) access(sa.source_id, off);
    }
  }

  void maybe_crosstalk(const EventTrace& et) {
    const double p = et.jitter.value_or(trace_.jitter);
    const double draw = uniform();
    if (p <= 0.0 || draw >= p || trace_.events.size() < 2) return;
    std::uniform_int_distribution<std::size_t> pick(0, trace_.events.size() - 2);
    auto idx = pick(rng_);
    const auto self = static_cast<std::size_t>(&et - trace_.events.data());
    if (idx >= self) ++idx;
    apply(trace_.events[idx]);
  }

  void apply_background() {
    for (const auto& b : trace_.background) {
      if (b.probability >= 1.0 || uniform() < b.probability) access(b.source_id, b.offset);
    }
  }

  AccessTrace trace_;
  std::mt19937_64 rng_;
  std::map<std::string, SourceState> sources_;
  std::uint64_t next_round_ = 0;
};

// One granularity view onto a shared SimulatedSystem.
class SimulatedProbe final : public ProbeBackend {
 public:
  SimulatedProbe(std::shared_ptr<SimulatedSystem> system, Granularity g, SimOptions options = {})
      : system_(std::move(system)), granularity_(g), options_(options) {}

  Granularity granularity() const override { return granularity_; }

  Capabilities capabilities() const override {
    return Capabilities{options_.destructive, false, true};
  }

  std::string identity() const override { return "sim@" + granularity_.label(); }

  void reset(std::span<const Location> locs) override {
    require_granularity(locs);
    for (std::uint32_t i = 0; i < options_.eviction_rounds; ++i) system_->advance();
    for (const auto& loc : locs) system_->clear(loc);
  }

  void trigger(const EventId& event) override { system_->trigger(event); }

  std::vector<Presence> check(std::span<const Location> locs) override {
    require_granularity(locs);
    if (options_.fail_after_checks && probe_count() + locs.size() > *options_.fail_after_checks) {
      fail(ErrorKind::probe, identity() + ": injected backend failure");
    }
    count_probes(locs.size());
    std::vector<Presence> out;
    out.reserve(locs.size());
    for (const auto& loc : locs) {
      if (options_.unknown_probability > 0.0 && system_->uniform() < options_.unknown_probability) {
        out.push_back(Presence::unknown);
        continue;
      }
      out.push_back(system_->present(loc) ? Presence::present : Presence::idle);
    }
    return out;
  }

  void touch(std::span<const Location> locs) override {
    for (const auto& loc : locs) system_->touch(loc);
  }

  void advance() override { system_->advance(); }

  // Index of the most recently simulated round.
  std::uint64_t clock() const override {
    const auto n = system_->rounds_elapsed();
    return n ? n - 1 : 0;
  }

  SimulatedSystem& system() noexcept { return *system_; }

 private:
  std::shared_ptr<SimulatedSystem> system_;
  Granularity granularity_;
  SimOptions options_;
};

}  // namespace strata
