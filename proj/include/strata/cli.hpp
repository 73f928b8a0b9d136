#pragma once

// `strata` command-line frontend. Exit codes: 0 success, 1 gate failure
// (--min-fscore), 2 usage or configuration error, 3 environment, privilege
// or probe failure.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "strata/binscan.hpp"
#include "strata/campaign_io.hpp"
#include "strata/classifier.hpp"
#include "strata/manifest.hpp"
#include "strata/mappings.hpp"
#include "strata/monitor.hpp"
#include "strata/os_probes.hpp"
#include "strata/simulator.hpp"
#include "strata/template_io.hpp"
#include "strata/templater.hpp"

namespace strata::cli {

namespace fs = std::filesystem;

enum ExitCode : int { ok = 0, gate_failed = 1, usage = 2, environment = 3 };

inline int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::environment:
    case ErrorKind::probe: return environment;
    default: return usage;
  }
}

// Simulator seed derived from the campaign seed so one number reproduces a run.
inline std::uint64_t simulator_seed(std::uint64_t seed) { return seed ^ 0x9e3779b97f4a7c15ULL; }

inline fs::path resolve_near(const fs::path& base_file, const std::string& p) {
  fs::path path(p);
  if (path.is_absolute() || base_file.empty()) return path;
  return base_file.parent_path() / path;
}

struct Session {
  std::ostream& out;
  std::ostream& err;
  RunManifest manifest;
  fs::path out_dir = ".";

  void begin(const std::string& command, int argc, const char* const* argv) {
    std::string line;
    for (int i = 0; i < argc; ++i) line += (i ? " " : "") + std::string(argv[i]);
    manifest.command = line.empty() ? command : line;
    manifest.started = utc_timestamp();
  }

  void input(const fs::path& p) { manifest.inputs[p.string()] = sha256_file(p); }

  std::string manifest_name(const std::string& command) const { return command + ".manifest.json"; }

  void write_output(const std::string& name, const std::string& text) {
    fs::create_directories(out_dir);
    detail::write_text_file(out_dir / name, text);
    manifest.outputs.push_back(name);
  }

  void finish(const std::string& command) {
    manifest.finished = utc_timestamp();
    fs::create_directories(out_dir);
    write_manifest(out_dir / manifest_name(command), manifest);
  }
};

// ---- backends -----------------------------------------------------------------

// Owns the probe objects a campaign or monitor run needs.
struct BackendSet {
  std::shared_ptr<SimulatedSystem> system;
  std::vector<std::unique_ptr<ProbeBackend>> owned;
  std::unique_ptr<ProbeBackend> native;  // OS backends: the real probe
  std::vector<MemoryRegion> regions;

  ProbeBackend& add(std::unique_ptr<ProbeBackend> b) {
    owned.push_back(std::move(b));
    return *owned.back();
  }
};

inline std::vector<MemoryRegion> os_regions(const CampaignFile& cf, const fs::path& config_path) {
  MappingFilter filter{cf.blacklist};
  if (!cf.maps.empty()) return regions_from_maps_file(resolve_near(config_path, cf.maps), filter);
  if (!cf.pid) fail(ErrorKind::config, "OS backends need 'pid' or 'maps' in the config");
  return enumerate_mappings(*cf.pid, filter);
}

inline std::unique_ptr<ProbeBackend> make_native_probe(const CampaignFile& cf,
                                                       const std::vector<MemoryRegion>& regions) {
  EventInjector injector(cf.hook, cf.idle_seconds);
  switch (cf.backend) {
    case BackendKind::pageidle: {
      if (!cf.pid) fail(ErrorKind::config, "the pageidle backend needs the target 'pid'");
      PageIdlePaths paths;
      paths.pagemap = "/proc/" + std::to_string(*cf.pid) + "/pagemap";
      if (auto missing = pageidle_missing(paths); !missing.empty()) {
        fail(ErrorKind::environment, "pageidle backend needs " + missing);
      }
      return std::make_unique<PageIdleProbe>(regions, paths, injector);
    }
    case BackendKind::pagecache:
      return std::make_unique<PageCacheProbe>(PageCacheOptions{}, injector);
    case BackendKind::flush: {
#ifdef STRATA_HAVE_FLUSH
      if (regions.empty()) fail(ErrorKind::config, "no regions to calibrate the flush backend on");
      MappedFile calib(regions.front().source_id);
      const auto* line = calib.at(regions.front().offset);
      if (!line) fail(ErrorKind::environment, "cannot map " + regions.front().source_id + " for calibration");
      const auto c = calibrate_flush(line);
      return std::make_unique<FlushReloadProbe>(c.threshold, injector);
#else
      fail(ErrorKind::environment, "the flush backend needs an x86 CPU with clflush");
#endif
    }
    case BackendKind::sim: break;
  }
  fail(ErrorKind::invalid_argument, "not an OS backend");
}

// One probe per ladder layer. The simulator observes every granularity
// natively; OS probes are aggregated upwards and cannot go finer.
inline BackendMap build_backends(BackendSet& set, const CampaignFile& cf, const fs::path& config_path,
                                 const Ladder& ladder, const std::string& trace_override) {
  BackendMap map;
  if (cf.backend == BackendKind::sim) {
    const auto trace_path = trace_override.empty() ? resolve_near(config_path, cf.trace) : fs::path(trace_override);
    if (trace_path.empty()) fail(ErrorKind::config, "the sim backend needs a 'trace'");
    auto trace = read_trace(trace_path);
    set.regions = trace.regions;
    set.system = std::make_shared<SimulatedSystem>(std::move(trace), simulator_seed(cf.campaign.rng_seed));
    for (auto g : ladder) map[g] = &set.add(std::make_unique<SimulatedProbe>(set.system, g));
    return map;
  }
  set.regions = os_regions(cf, config_path);
  set.native = make_native_probe(cf, set.regions);
  const auto base = set.native->granularity();
  for (auto g : ladder) {
    if (g == base) map[g] = set.native.get();
    else if (base < g) map[g] = &set.add(std::make_unique<AggregatingProbe>(*set.native, g, set.regions));
    else fail(ErrorKind::config, to_string(cf.backend) + " cannot probe the " + g.label() + " layer");
  }
  return map;
}

// ---- subcommands ---------------------------------------------------------------

struct TemplateArgs {
  std::string config;
  std::string backend;
  std::optional<std::uint64_t> seed;
  std::string trace;
  std::vector<std::string> blacklist;
  bool drop_caches = false;
};

inline int cmd_template(Session& s, const TemplateArgs& a) {
  const fs::path config_path(a.config);
  auto cf = read_campaign(config_path);
  s.input(config_path);
  s.manifest.config_sha256 = sha256_file(config_path);
  if (!a.backend.empty()) {
    auto b = parse_backend(a.backend);
    if (!b) fail(ErrorKind::config, "unknown backend " + a.backend);
    cf.backend = *b;
  }
  if (a.seed) cf.campaign.rng_seed = *a.seed;
  if (!a.blacklist.empty()) cf.blacklist = a.blacklist;
  if (a.drop_caches) cf.drop_caches = true;
  s.manifest.rng_seed = cf.campaign.rng_seed;

  BackendSet set;
  auto backends = build_backends(set, cf, config_path, cf.campaign.ladder, a.trace);
  if (cf.backend == BackendKind::sim) {
    s.input(a.trace.empty() ? resolve_near(config_path, cf.trace) : fs::path(a.trace));
  }
  for (const auto& [g, b] : backends) s.manifest.backends.push_back(b->identity());

  CampaignHooks hooks;
  if (cf.drop_caches) hooks.before_warmup = [] { drop_page_caches(); };
  const auto result = run_campaign(cf.campaign, backends, set.regions, hooks);

  for (auto g : result.skipped) {
    s.manifest.notes.push_back("skipped layer " + g.label() + ": larger than the " +
                               std::to_string(total_bytes(set.regions)) + "-byte search space");
    s.out << "skipped " << g.label() << " (exceeds region size)\n";
  }
  const auto mname = s.manifest_name("template");
  for (std::size_t i = 0; i < result.layers.size(); ++i) {
    const auto& layer = result.layers[i];
    const auto name = "layer" + std::to_string(i) + "_" + layer.granularity.label() + ".csv";
    s.write_output(name, dump_matrix_csv(layer.matrix, mname));
    s.out << "layer " << layer.granularity.label() << ": " << layer.matrix.locations().size() << " locations, "
          << layer.survivors.size() << " survivors, " << layer.probes << " probes"
          << (layer.complete ? "" : " (incomplete)") << " -> " << name << "\n";
  }
  s.out << "events: " << cf.campaign.keys.size() << ", samples per key: " << cf.campaign.samples_per_key << "\n";
  if (!result.complete()) {
    const auto& t = *result.aborted_at;
    s.manifest.notes.push_back("aborted at layer " + std::to_string(t.layer) + ", event position " +
                               std::to_string(t.event) + ", repetition " + std::to_string(t.repetition) + ": " +
                               result.error);
    s.finish("template");
    s.err << "campaign aborted: " << result.error << "\n";
    return environment;
  }
  s.finish("template");
  return ok;
}

struct ClassifyArgs {
  std::string matrix;
  std::string trace;
  bool no_readaround = false;
  double min_score = 0.5;
  double noise_margin = 0.1;
  std::size_t max_group = 0;
  std::string binary;
  std::string binary_version;
};

inline int cmd_classify(Session& s, const ClassifyArgs& a) {
  const auto h = read_matrix_csv(fs::path(a.matrix));
  s.input(a.matrix);
  ClassifierConfig cfg;
  cfg.min_score = a.min_score;
  cfg.noise_margin = a.noise_margin;
  cfg.max_group_size = a.max_group;
  if (!a.trace.empty()) {
    cfg.readaround = read_trace(a.trace).readaround;
    s.input(a.trace);
  }
  if (a.no_readaround) cfg.readaround = ReadaroundModel::disabled();

  auto tmpl = filter_readaround(classify(h, cfg), h, cfg.readaround);
  tmpl.manifest = s.manifest_name("classify");
  if (!a.binary.empty()) {
    tmpl.fingerprint.sha256 = sha256_file(a.binary);
    s.input(a.binary);
  }
  tmpl.fingerprint.version = a.binary_version;
  s.write_output("template.json", dump_template(tmpl));
  for (const auto& e : tmpl.entries) {
    s.out << group_label(e.group) << " -> " << e.location.source_id << "+0x" << std::hex << e.location.offset
          << std::dec << " (" << e.location.granularity.label() << ", score " << csv::fixed(e.score, 3) << ")\n";
  }
  for (const auto& w : tmpl.warnings) s.err << "warning: " << w << "\n";
  s.finish("classify");
  return ok;
}

struct MonitorArgs {
  std::string tmpl;
  std::string backend = "sim";
  std::string trace;
  std::string config;
  std::string truth;
  std::optional<std::uint64_t> seed;
  std::uint64_t rounds = 0;
  std::uint32_t debounce = 5;
  std::uint64_t window = 50;
  std::uint32_t eviction_rounds = 0;
  std::optional<double> min_fscore;
};

inline int cmd_monitor(Session& s, const MonitorArgs& a) {
  const auto tmpl = read_template(a.tmpl);
  s.input(a.tmpl);
  if (tmpl.entries.empty()) fail(ErrorKind::config, "template has no entries to monitor");
  Granularity g = tmpl.entries.front().location.granularity;
  for (const auto& e : tmpl.entries) g = std::min(g, e.location.granularity);

  const auto kind = parse_backend(a.backend);
  if (!kind) fail(ErrorKind::config, "unknown backend " + a.backend);

  GroundTruth truth;
  std::uint64_t rounds = a.rounds;
  BackendSet set;
  ProbeBackend* backend = nullptr;
  if (*kind == BackendKind::sim) {
    if (a.trace.empty()) fail(ErrorKind::config, "the sim backend needs --trace");
    auto trace = read_trace(a.trace);
    s.input(a.trace);
    truth = trace.schedule;
    if (rounds == 0) {
      for (const auto& ev : trace.schedule) rounds = std::max(rounds, ev.round + ev.hits + a.window);
    }
    const auto seed = a.seed.value_or(0);
    s.manifest.rng_seed = seed;
    set.system = std::make_shared<SimulatedSystem>(std::move(trace), simulator_seed(seed));
    SimOptions opts;
    opts.eviction_rounds = a.eviction_rounds;
    opts.destructive = a.eviction_rounds > 0;
    backend = &set.add(std::make_unique<SimulatedProbe>(set.system, g, opts));
  } else {
    if (a.config.empty()) fail(ErrorKind::config, "OS backends need --config for the target");
    auto cf = read_campaign(a.config);
    cf.backend = *kind;
    backend = build_backends(set, cf, a.config, {g}, {}).at(g);
  }
  if (!a.truth.empty()) {
    truth = read_ground_truth(a.truth);
    s.input(a.truth);
  }
  if (rounds == 0) rounds = MonitorOptions{}.rounds;
  s.manifest.backends.push_back(backend->identity());

  const auto result = monitor_stream(tmpl, *backend, MonitorOptions{rounds, a.debounce});
  const auto mname = s.manifest_name("monitor");
  std::ostringstream det;
  write_detections_csv(det, result.detections, mname);
  s.write_output("detections.csv", det.str());
  s.out << result.detections.size() << " detections in " << result.rounds_run << " rounds\n";

  int code = ok;
  if (!truth.empty()) {
    std::vector<EventGroup> groups;
    for (const auto& e : tmpl.entries) groups.push_back(e.group);
    const auto report = evaluate(result.detections, truth, a.window, groups);
    std::ostringstream ev;
    write_eval_csv(ev, report, mname);
    s.write_output("eval.csv", ev.str());
    s.out << "macro F-score " << csv::fixed(report.macro_f_score, 4) << "\n";
    if (a.min_fscore && report.macro_f_score < *a.min_fscore) {
      s.err << "macro F-score " << csv::fixed(report.macro_f_score, 4) << " below --min-fscore "
            << *a.min_fscore << "\n";
      code = gate_failed;
    }
  }
  if (!result.complete) {
    s.err << "monitoring stopped early: " << result.error << "\n";
    code = environment;
  }
  s.finish("monitor");
  return code;
}

struct BinscanArgs {
  std::string binary;
  std::string markers;
  bool substring = false;
  bool grade = false;
  std::string baseline;
  std::string binary_version;
};

inline int cmd_binscan(Session& s, const BinscanArgs& a) {
  auto markers = a.markers.empty() ? us_keyboard_markers() : read_markers(fs::path(a.markers));
  if (a.substring) markers.mode = MatchMode::substring;
  if (!a.markers.empty()) s.input(a.markers);
  s.input(a.binary);

  auto report = scan(fs::path(a.binary), markers);
  report.fingerprint.version = a.binary_version;
  s.write_output("layout.json", dump_layout(report));
  std::ostringstream mcsv, pcsv;
  write_markers_csv(mcsv, report);
  write_pairs_csv(pcsv, report);
  s.write_output("markers.csv", mcsv.str());
  s.write_output("pairs.csv", pcsv.str());

  std::size_t found = 0, tail = 0;
  for (const auto& m : report.markers) {
    if (m.primary()) ++found;
    if (m.tail_merged) ++tail;
  }
  s.out << a.binary << ": " << found << "/" << report.markers.size() << " markers in "
        << report.sections.size() << " read-only section(s)";
  if (tail) s.out << ", " << tail << " only as tail-merged suffixes";
  s.out << "\n";
  for (const auto& m : report.markers) {
    if (const auto* p = m.primary()) {
      s.out << "  " << std::left << std::setw(14) << m.marker << std::right << " 0x" << std::hex << p->file_offset
            << std::dec << "  line " << *m.line() << "  page " << *m.page() << "  x" << m.occurrences.size()
            << (m.tail_merged ? "  tail" : "") << "\n";
    } else {
      s.out << "  " << std::left << std::setw(14) << m.marker << std::right << " absent\n";
    }
  }

  if (a.grade) {
    const auto grades = leakage_grade(report);
    std::ostringstream gcsv;
    write_grades_csv(gcsv, grades);
    s.write_output("grades.csv", gcsv.str());
    std::map<std::string, std::size_t> tally;
    for (const auto& g : grades) ++tally[to_string(g.grade)];
    s.out << "pair grades:";
    for (const char* name : {"LEAK_PAGE", "LEAK_LINE", "GROUPED", "SAFE"}) s.out << " " << name << "=" << tally[name];
    s.out << "\n";
    if (tally["LEAK_LINE"]) s.out << "note: " << prefetcher_caveat << "\n";
  }

  if (!a.baseline.empty()) {
    s.input(a.baseline);
    const auto before = scan(fs::path(a.baseline), markers);
    const auto delta = diff_layouts(before, report);
    std::ostringstream dcsv;
    write_delta_csv(dcsv, delta);
    s.write_output("delta.csv", dcsv.str());
    std::size_t dedup = 0;
    for (const auto& m : delta.moves) dedup += m.deduplicated;
    s.out << "versus " << a.baseline << ": " << delta.moves.size() << " marker(s) moved, " << dedup
          << " deduplicated, " << delta.transitions.size() << " placement transition(s)\n";
    for (const auto& t : delta.transitions) {
      s.out << "  " << t.a << "/" << t.b << " @" << t.granularity.label() << ": " << to_string(t.from) << " -> "
            << to_string(t.to) << "\n";
    }
  }
  s.finish("binscan");
  return ok;
}

struct EstimateArgs {
  std::string preset;
  std::optional<double> flat_s_per_mb;
  std::optional<double> mb;
  std::optional<std::uint32_t> keys;
  std::optional<std::uint32_t> samples;
  std::vector<std::string> layers;  // "2MB:661.965e-9:0"
};

inline LayerCost parse_layer_cost(const std::string& spec) {
  const auto parts = [&] {
    std::vector<std::string> out;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ':')) out.push_back(item);
    return out;
  }();
  if (parts.size() != 3) fail(ErrorKind::config, "layer cost must be GRANULARITY:S_PER_PROBE:S_PER_SAMPLE");
  return LayerCost{parse_granularity(parts[0]), csv::to_double(parts[1]), csv::to_double(parts[2]), std::nullopt};
}

inline int cmd_estimate(Session& s, const EstimateArgs& a) {
  CostModel m;
  if (a.preset == "chrome") m = chrome_reference_costs();
  else if (!a.preset.empty()) fail(ErrorKind::config, "unknown preset " + a.preset + " (chrome)");
  if (a.flat_s_per_mb) m.flat_seconds_per_mb = *a.flat_s_per_mb;
  if (a.mb) m.region_mb = *a.mb;
  if (a.keys) m.keys = *a.keys;
  if (a.samples) m.samples = *a.samples;
  if (!a.layers.empty()) {
    m.layers.clear();
    for (const auto& l : a.layers) m.layers.push_back(parse_layer_cost(l));
  }
  const auto est = estimate_campaign(m);

  std::ostringstream table;
  csv::write_row(table, {"stage", "locations", "seconds", "hours", "days"});
  auto row = [&](const std::string& stage, const std::string& locs, double secs) {
    csv::write_row(table, {stage, locs, csv::fixed(secs, 3), csv::fixed(secs / 3600.0, 4),
                           csv::fixed(secs / 86400.0, 4)});
  };
  row("flat-64B", "", est.flat_seconds);
  for (const auto& l : est.layers) row("layer-" + l.granularity.label(), std::to_string(l.locations), l.seconds);
  row("layered-total", "", est.layered_seconds);
  s.write_output("estimate.csv", table.str());

  s.out << "flat 64B scan:    " << csv::fixed(est.flat_seconds / 86400.0, 2) << " days\n";
  for (const auto& l : est.layers) {
    s.out << "layer " << std::left << std::setw(5) << l.granularity.label() << std::right << "       "
          << l.locations << " locations, " << csv::fixed(l.seconds / 3600.0, 4) << " h\n";
  }
  s.out << "layered campaign: " << csv::fixed(est.layered_seconds / 3600.0, 2) << " hours\n";
  if (est.speedup) s.out << "speedup:          " << csv::fixed(*est.speedup, 1) << "x\n";
  s.finish("estimate");
  return ok;
}

inline int cmd_report(Session& s, const std::string& summary) {
  std::ifstream in(summary);
  if (!in) fail(ErrorKind::io, "cannot open " + summary);
  s.input(summary);
  const auto rows = read_app_summary(in);
  std::ostringstream csv_out;
  write_app_summary(csv_out, rows);
  s.write_output("summary.csv", csv_out.str());
  s.out << csv_out.str();
  s.finish("report");
  return ok;
}

// ---- entry point ------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Layered binary templating: find, classify and monitor secret-dependent memory locations"};
  app.require_subcommand(1);
  std::string out_dir = ".";
  app.add_option("--out-dir", out_dir, "Directory for output files")->capture_default_str();

  TemplateArgs ta;
  auto* tpl = app.add_subcommand("template", "Run a layered templating campaign");
  tpl->add_option("--config", ta.config, "Campaign config file")->required()->check(CLI::ExistingFile);
  tpl->add_option("--backend", ta.backend, "Override backend")
      ->check(CLI::IsMember({"sim", "pageidle", "pagecache", "flush"}));
  tpl->add_option("--seed", ta.seed, "Override RNG seed");
  tpl->add_option("--trace", ta.trace, "Simulator trace (overrides config)");
  tpl->add_option("--blacklist", ta.blacklist, "Mapping path prefixes to skip")->delimiter(',');
  tpl->add_flag("--drop-caches", ta.drop_caches, "Drop OS page caches before warmup (privileged)");

  ClassifyArgs ca;
  auto* cls = app.add_subcommand("classify", "Build a template from a layer CSV");
  cls->add_option("--matrix", ca.matrix, "Layer CSV from `template`")->required()->check(CLI::ExistingFile);
  cls->add_option("--trace", ca.trace, "Take the read-around model from this trace");
  cls->add_flag("--no-readaround", ca.no_readaround, "Skip read-around suppression and filtering");
  cls->add_option("--min-score", ca.min_score)->capture_default_str();
  cls->add_option("--noise-margin", ca.noise_margin)->capture_default_str();
  cls->add_option("--max-group", ca.max_group, "Largest event group (0 = all keys)")->capture_default_str();
  cls->add_option("--binary", ca.binary, "Binary the template belongs to (fingerprinted)");
  cls->add_option("--binary-version", ca.binary_version);

  MonitorArgs ma;
  auto* mon = app.add_subcommand("monitor", "Watch template locations and report detections");
  mon->add_option("--template", ma.tmpl, "Template file")->required()->check(CLI::ExistingFile);
  mon->add_option("--backend", ma.backend)->check(CLI::IsMember({"sim", "pageidle", "pagecache", "flush"}));
  mon->add_option("--trace", ma.trace, "Simulator trace with keystroke schedule");
  mon->add_option("--config", ma.config, "Campaign config naming the OS target");
  mon->add_option("--truth", ma.truth, "Ground-truth keystroke log");
  mon->add_option("--seed", ma.seed);
  mon->add_option("--rounds", ma.rounds, "Probe rounds (default: cover the schedule)");
  mon->add_option("--debounce", ma.debounce, "Missed rounds that end a detection")->capture_default_str();
  mon->add_option("--window", ma.window, "Matching window in rounds")->capture_default_str();
  mon->add_option("--eviction-rounds", ma.eviction_rounds, "Simulated eviction cost per reset");
  mon->add_option("--min-fscore", ma.min_fscore, "Fail (exit 1) below this macro F-score");

  BinscanArgs ba;
  auto* bin = app.add_subcommand("binscan", "Locate marker strings in a binary's read-only data");
  bin->add_option("--binary", ba.binary, "ELF binary")->required()->check(CLI::ExistingFile);
  bin->add_option("--markers", ba.markers, "Marker file (default: US keyboard DOM codes)");
  bin->add_flag("--substring", ba.substring, "Also match inside longer strings");
  bin->add_flag("--grade", ba.grade, "Grade every marker pair");
  bin->add_option("--baseline", ba.baseline, "Earlier binary to diff against")->check(CLI::ExistingFile);
  bin->add_option("--binary-version", ba.binary_version);

  EstimateArgs ea;
  auto* est = app.add_subcommand("estimate", "Campaign cost estimate, flat versus layered");
  est->add_option("--preset", ea.preset, "Reference costs (chrome)");
  est->add_option("--flat-s-per-mb", ea.flat_s_per_mb);
  est->add_option("--mb", ea.mb);
  est->add_option("--keys", ea.keys);
  est->add_option("--samples", ea.samples);
  est->add_option("--layer", ea.layers, "GRANULARITY:S_PER_PROBE:S_PER_SAMPLE, repeatable");

  std::string summary;
  auto* rep = app.add_subcommand("report", "Normalise a per-application summary table");
  rep->add_option("--summary", summary, "Summary CSV")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? ok : usage;
  }

  Session s{out, err, {}, out_dir};
  try {
    const auto* sub = app.get_subcommands().front();
    s.begin(sub->get_name(), argc, argv);
    if (sub == tpl) return cmd_template(s, ta);
    if (sub == cls) return cmd_classify(s, ca);
    if (sub == mon) return cmd_monitor(s, ma);
    if (sub == bin) return cmd_binscan(s, ba);
    if (sub == est) return cmd_estimate(s, ea);
    if (sub == rep) return cmd_report(s, summary);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return usage;
  }
  return usage;
}

}  // namespace strata::cli
