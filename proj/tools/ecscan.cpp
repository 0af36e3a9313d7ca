// ecscan: response-aware EDNS Client Subnet scanning suite.
//
// One binary with subcommands for the scan modes (scan-v4, scan-v6,
// scan-list, explore, overlap-census), target preparation, the simulated
// authoritative nameserver and post-scan analysis.

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "ecscan/analysis.hpp"
#include "ecscan/prefix_trie.hpp"
#include "ecscan/record.hpp"
#include "ecscan/scanner.hpp"
#include "ecscan/simns.hpp"
#include "ecscan/targets.hpp"

using nlohmann::json;
using namespace ecscan;

namespace {

volatile std::sig_atomic_t g_stop = 0;
void handle_signal(int) { g_stop = 1; }

BudgetTable load_budget_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open budget file: " + path);
  json j = json::parse(in);
  BudgetTable t;
  auto load_map = [](const json& obj, std::map<int, uint64_t>& out) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      int len = std::stoi(it.key());
      uint64_t limit = it.value().get<uint64_t>();
      if (limit == 0) throw std::runtime_error("budget limits must be positive");
      out[len] = limit;
    }
  };
  if (j.contains("routed")) load_map(j["routed"], t.routed_limits);
  if (j.contains("unrouted")) load_map(j["unrouted"], t.unrouted_limits);
  if (j.contains("combined") && !j["combined"].is_null())
    t.combined_limit = j["combined"].get<uint64_t>();
  t.combined_global = j.value("combined_global", false);
  return t;
}

struct ScanCli {
  std::string targets_file;
  std::string qname;
  std::string qtype = "A";
  std::vector<std::string> ns;
  std::string seeds_file;
  std::string unrouted_seeds_file;
  std::string probes_file;
  std::string budgets_file;
  std::string out_file;
  int workers = 1;
  double rate = 1000.0;
  double per_ns_rate = 20.0;
  int burst = 10;
  uint64_t rng_seed = 1;
  int source_len = -1;
  int scope_floor = 8;
  bool seed_once = false;
  bool nsid = false;
  bool rd = false;
  int timeout_ms = 1000;
  int retries = 2;
  int pin_ns = -1;
  double fail_threshold = 0.5;
};

void add_scan_options(CLI::App* cmd, ScanCli& o, bool wants_seeds, bool wants_probes) {
  cmd->add_option("--targets", o.targets_file, "target JSONL file (qname, qtype, ns)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--qname", o.qname, "single target name (alternative to --targets)");
  cmd->add_option("--qtype", o.qtype, "query type for --qname (A or AAAA)");
  cmd->add_option("--ns", o.ns, "nameserver address for --qname (repeatable, ip[:port])");
  if (wants_seeds) {
    cmd->add_option("--seeds", o.seeds_file, "routed seed prefixes, one CIDR per line")
        ->check(CLI::ExistingFile);
    cmd->add_option("--unrouted-seeds", o.unrouted_seeds_file,
                    "unrouted/RFC1918 seed prefixes")
        ->check(CLI::ExistingFile);
    cmd->add_option("--budgets", o.budgets_file, "budget table JSON")
        ->check(CLI::ExistingFile);
    cmd->add_flag("--seed-once", o.seed_once, "query every seed at least once");
  }
  if (wants_probes)
    cmd->add_option("--probes", o.probes_file, "probe prefixes, one CIDR per line")
        ->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out_file, "output JSONL file")->required();
  cmd->add_option("--workers", o.workers, "worker threads")->check(CLI::Range(1, 64));
  cmd->add_option("--rate", o.rate, "global queries/second")->check(CLI::PositiveNumber);
  cmd->add_option("--per-ns-rate", o.per_ns_rate, "per-nameserver queries/second")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--burst", o.burst, "rate limiter burst")->check(CLI::PositiveNumber);
  cmd->add_option("--rng-seed", o.rng_seed, "random number generator seed");
  cmd->add_option("--source-len", o.source_len, "ECS source prefix length");
  cmd->add_option("--scope-floor", o.scope_floor,
                  "minimum accepted scope length (default 8)");
  cmd->add_flag("--nsid", o.nsid, "request the nameserver identifier option");
  cmd->add_flag("--rd", o.rd, "set the recursion-desired bit (resolver targets)");
  cmd->add_option("--timeout-ms", o.timeout_ms, "per-attempt timeout")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--retries", o.retries, "retransmissions per target")
      ->check(CLI::Range(0, 16));
  cmd->add_option("--pin-ns", o.pin_ns, "pin one nameserver index instead of rotating");
  cmd->add_option("--fail-threshold", o.fail_threshold,
                  "error-rate fraction above which the exit code is 1");
}

ScanJob make_job(const ScanCli& o, ScanMode mode) {
  ScanJob job;
  job.mode = mode;
  if (!o.targets_file.empty()) {
    job.targets = load_targets(o.targets_file);
  } else if (!o.qname.empty()) {
    ScanTarget t;
    t.qname = o.qname;
    auto qt = qtype_from_string(o.qtype);
    if (!qt) throw std::runtime_error("bad --qtype: " + o.qtype);
    t.qtype = *qt;
    for (const auto& s : o.ns) {
      auto ip = IpPort::parse(s);
      if (!ip) throw std::runtime_error("bad --ns address: " + s);
      t.ns.push_back(*ip);
    }
    job.targets.push_back(std::move(t));
  } else {
    throw std::runtime_error("either --targets or --qname is required");
  }
  if (!o.seeds_file.empty()) job.seeds = load_prefix_file(o.seeds_file);
  if (!o.unrouted_seeds_file.empty())
    job.unrouted_seeds = load_prefix_file(o.unrouted_seeds_file);
  if (!o.budgets_file.empty()) job.budgets = load_budget_file(o.budgets_file);
  if (!o.probes_file.empty()) job.probes = load_prefix_file(o.probes_file);
  if (o.source_len >= 0) job.source_len = o.source_len;
  job.scope_floor = o.scope_floor;
  job.rng_seed = o.rng_seed;
  job.workers = o.workers;
  job.seed_once = o.seed_once;
  job.request_nsid = o.nsid;
  job.recursion_desired = o.rd;
  if (o.pin_ns >= 0) job.pin_ns = static_cast<size_t>(o.pin_ns);
  job.policy.timeout_ms = o.timeout_ms;
  job.policy.retries = o.retries;
  job.policy.global_rate = o.rate;
  job.policy.per_ns_rate = o.per_ns_rate;
  job.policy.burst = o.burst;

  if (mode == ScanMode::full_v4 || mode == ScanMode::overlap_census) {
    if (job.seeds.empty() && job.unrouted_seeds.empty())
      throw std::runtime_error("--seeds is required for IPv4 sweeps");
  }
  if (mode == ScanMode::seeded_v6) {
    if (job.seeds.empty() && job.unrouted_seeds.empty())
      throw std::runtime_error("--seeds is required for seeded IPv6 scans");
    if (job.budgets.empty()) job.budgets = BudgetTable::ipv6_defaults();
  }
  if (mode == ScanMode::static_list && job.probes.empty())
    throw std::runtime_error("--probes is required for scan-list");
  return job;
}

int run_scan_command(const ScanCli& o, ScanMode mode) {
  ScanJob job = make_job(o, mode);
  JsonlFileSink sink(o.out_file);
  std::vector<ExploreOutcome> outcomes;
  ScanStats stats = run_scan(job, sink, &outcomes);
  if (mode == ScanMode::explore) {
    for (const auto& oc : outcomes) {
      json j;
      j["qname"] = oc.qname;
      j["family"] = static_cast<int>(oc.family);
      j["classification"] = to_string(oc.cls);
      std::cout << j.dump() << "\n";
    }
  }
  std::cerr << "dispatched " << stats.dispatched << ", responses " << stats.responses
            << ", errors " << stats.errors << ", stream fallbacks "
            << stats.stream_fallbacks << "\n";
  if (stats.dispatched > 0 &&
      static_cast<double>(stats.errors) / stats.dispatched > o.fail_threshold)
    return 1;
  return 0;
}

json summary_to_json(const std::string& qname, const std::string& qtype,
                     const ScanSummary& s) {
  json j;
  j["qname"] = qname;
  j["qtype"] = qtype;
  j["queries"] = s.queries;
  j["distinct_rrsets"] = s.distinct_rrsets;
  j["distinct_addresses"] = s.distinct_addresses;
  j["distinct_scopes"] = s.distinct_scopes;
  return j;
}

int cmd_analyze_summary(const std::string& in) {
  auto records = load_records(in);
  std::map<std::pair<std::string, uint16_t>, std::vector<ScanRecord>> groups;
  for (auto& r : records) groups[{r.qname, r.qtype}].push_back(std::move(r));
  for (const auto& [key, recs] : groups)
    std::cout << summary_to_json(key.first, qtype_to_string(key.second), summarize(recs))
                     .dump()
              << "\n";
  return 0;
}

int cmd_analyze_histogram(const std::string& in, const std::string& csv) {
  auto h = scope_histogram(load_records(in));
  if (!csv.empty()) {
    std::ofstream out(csv);
    if (!out) throw std::runtime_error("cannot open " + csv);
    out << "scope_len,count\n";
    for (const auto& [len, count] : h.buckets) out << len << "," << count << "\n";
    if (h.no_scope) out << "none," << h.no_scope << "\n";
    return 0;
  }
  json j;
  json buckets = json::object();
  for (const auto& [len, count] : h.buckets) buckets[std::to_string(len)] = count;
  j["buckets"] = buckets;
  j["no_scope"] = h.no_scope;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_analyze_classify(const std::string& in) {
  auto records = load_records(in);
  std::map<std::pair<std::string, int>, std::vector<ScanRecord>> groups;
  for (auto& r : records)
    groups[{r.qname, static_cast<int>(r.family)}].push_back(std::move(r));
  for (const auto& [key, recs] : groups) {
    json j;
    j["qname"] = key.first;
    j["family"] = key.second;
    j["classification"] = to_string(classify_ecs(recs));
    std::cout << j.dump() << "\n";
  }
  return 0;
}

int cmd_analyze_overlaps(const std::string& in, const std::string& as_csv, int floor) {
  auto records = load_records(in);
  AsMap as_map;
  if (!as_csv.empty()) as_map = AsMap::from_geo(load_geo_csv(as_csv));
  auto reports = detect_overlaps(records, floor, as_csv.empty() ? nullptr : &as_map);
  for (const auto& r : reports) {
    json j;
    j["covering_region"] = r.covering_region.to_string();
    j["covering_query"] = r.covering_query.to_string();
    j["covering_scope"] = r.covering_scope;
    j["differing_answers"] = r.differing_answers;
    if (r.cross_as) j["cross_as"] = *r.cross_as;
    json covered = json::array();
    for (const auto& c : r.covered)
      covered.push_back({{"region", c.region.to_string()},
                         {"query", c.query.to_string()},
                         {"scope", c.scope}});
    j["covered"] = covered;
    std::cout << j.dump() << "\n";
  }
  std::cerr << reports.size() << " covering prefixes\n";
  return 0;
}

int cmd_analyze_savings(const std::string& in, const std::string& seeds_file,
                        int source_len) {
  auto records = load_records(in);
  auto seeds = load_prefix_file(seeds_file);
  json j;
  j["savings_ratio"] = savings_ratio(records, seeds, source_len);
  j["naive_targets"] = count_naive_targets(seeds, source_len);
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_analyze_diff(const std::string& a, const std::string& b) {
  auto deltas = diff_scope_runs(load_records(a), load_records(b));
  for (const auto& d : deltas) {
    json j;
    j["probe"] = d.probe.to_string();
    j["scope_a"] = d.scope_a ? json(*d.scope_a) : json(nullptr);
    j["scope_b"] = d.scope_b ? json(*d.scope_b) : json(nullptr);
    j["delta"] = d.delta ? json(*d.delta) : json(nullptr);
    if (d.missing_a) j["missing"] = "run_a";
    if (d.missing_b) j["missing"] = "run_b";
    std::cout << j.dump() << "\n";
  }
  return 0;
}

int cmd_analyze_sample(const std::string& geo_csv, int k, uint64_t rng_seed) {
  auto picks = sample_country_prefixes(load_geo_csv(geo_csv), k, rng_seed);
  for (const auto& p : picks) std::cout << p.to_string() << "\n";
  return 0;
}

int cmd_sim_ns(const std::string& zone_file, const std::string& bind) {
  auto zone = SimZone::from_file(zone_file);
  auto addr = IpPort::parse(bind, 5353);
  if (!addr) throw std::runtime_error("bad --bind address: " + bind);
  SimServer server(std::move(zone), *addr);
  server.start();
  std::cout << "listening on " << server.endpoint().to_string() << " (udp+tcp)"
            << std::endl;
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}

int cmd_prepare(const std::string& domains_file, const std::string& resolver,
                const std::string& out_file, const std::string& rejects_file,
                const std::string& qtype, int parallelism, int timeout_ms, int retries) {
  auto domains = load_domain_list(domains_file);
  if (domains.empty()) throw std::runtime_error("domain list is empty");
  auto res = IpPort::parse(resolver);
  if (!res) throw std::runtime_error("bad --resolver address: " + resolver);
  auto qt = qtype_from_string(qtype);
  if (!qt) throw std::runtime_error("bad --qtype: " + qtype);
  ExchangePolicy policy;
  policy.timeout_ms = timeout_ms;
  policy.retries = retries;
  auto result = prepare_targets(domains, *res, policy, *qt, parallelism);
  std::ofstream out(out_file);
  if (!out) throw std::runtime_error("cannot open " + out_file);
  for (const auto& t : result.targets) out << target_record_to_jsonl(t) << "\n";
  std::ofstream rej(rejects_file);
  if (!rej) throw std::runtime_error("cannot open " + rejects_file);
  for (const auto& r : result.rejects) rej << reject_to_jsonl(r) << "\n";
  std::cerr << result.targets.size() << " targets, " << result.rejects.size()
            << " rejects\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"response-aware EDNS Client Subnet scanner"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read defaults from a config file");

  ScanCli v4o, v6o, listo, exploreo, censuso;
  auto* scan_v4 = app.add_subcommand("scan-v4", "response-aware IPv4 address space scan");
  add_scan_options(scan_v4, v4o, true, false);
  auto* scan_v6 = app.add_subcommand("scan-v6", "seeded random response-aware IPv6 scan");
  add_scan_options(scan_v6, v6o, true, false);
  auto* scan_list = app.add_subcommand("scan-list", "scan a static ECS prefix list");
  add_scan_options(scan_list, listo, false, true);
  auto* explore = app.add_subcommand("explore", "ECS support exploration with few probes");
  add_scan_options(explore, exploreo, false, true);
  auto* census =
      app.add_subcommand("overlap-census", "non-response-aware sweep for overlap analysis");
  add_scan_options(census, censuso, true, false);

  std::string zone_file, bind_addr = "127.0.0.1:5353";
  auto* sim = app.add_subcommand("sim-ns", "simulated authoritative nameserver");
  sim->add_option("--zone", zone_file, "zone JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  sim->add_option("--bind", bind_addr, "bind address (default 127.0.0.1:5353)");

  std::string prep_domains, prep_resolver, prep_out = "targets.jsonl",
                            prep_rejects = "rejects.jsonl", prep_qtype = "A";
  int prep_parallel = 8, prep_timeout = 1000, prep_retries = 2;
  auto* prep = app.add_subcommand("prepare-targets",
                                  "follow CNAME chains and collect authoritative NS");
  prep->add_option("--domains", prep_domains, "newline-delimited domain list")
      ->required()
      ->check(CLI::ExistingFile);
  prep->add_option("--resolver", prep_resolver, "recursive resolver ip[:port]")->required();
  prep->add_option("--out", prep_out, "target JSONL output");
  prep->add_option("--rejects", prep_rejects, "rejects JSONL output");
  prep->add_option("--qtype", prep_qtype, "record type for prepared targets");
  prep->add_option("--parallelism", prep_parallel, "concurrent resolutions")
      ->check(CLI::Range(1, 64));
  prep->add_option("--timeout-ms", prep_timeout, "per-attempt timeout");
  prep->add_option("--retries", prep_retries, "retransmissions per query");

  auto* analyze = app.add_subcommand("analyze", "post-scan analytics over JSONL logs");
  analyze->require_subcommand(1);
  std::string an_in, an_csv, an_as, an_seeds, an_a, an_b, an_geo;
  int an_floor = 8, an_source = 24, an_k = 3;
  uint64_t an_seed = 1;
  auto* an_summary = analyze->add_subcommand("summary", "per-domain scan summary");
  an_summary->add_option("--in", an_in)->required()->check(CLI::ExistingFile);
  auto* an_hist = analyze->add_subcommand("histogram", "returned scope histogram");
  an_hist->add_option("--in", an_in)->required()->check(CLI::ExistingFile);
  an_hist->add_option("--csv", an_csv, "write scope_len,count CSV here");
  auto* an_classify =
      analyze->add_subcommand("classify", "ECS classification per domain and family");
  an_classify->add_option("--in", an_in)->required()->check(CLI::ExistingFile);
  auto* an_overlaps = analyze->add_subcommand("overlaps", "overlapping response scopes");
  an_overlaps->add_option("--in", an_in)->required()->check(CLI::ExistingFile);
  an_overlaps->add_option("--as-map", an_as, "prefix,country,origin_as CSV")
      ->check(CLI::ExistingFile);
  an_overlaps->add_option("--scope-floor", an_floor);
  auto* an_savings = analyze->add_subcommand("savings", "response-aware query savings");
  an_savings->add_option("--in", an_in)->required()->check(CLI::ExistingFile);
  an_savings->add_option("--seeds", an_seeds)->required()->check(CLI::ExistingFile);
  an_savings->add_option("--source-len", an_source);
  auto* an_diff = analyze->add_subcommand("diff", "scope changes between two runs");
  an_diff->add_option("--a", an_a)->required()->check(CLI::ExistingFile);
  an_diff->add_option("--b", an_b)->required()->check(CLI::ExistingFile);
  auto* an_sample =
      analyze->add_subcommand("sample-countries", "country-diverse prefix sample");
  an_sample->add_option("--geo", an_geo, "prefix,country,origin_as CSV")
      ->required()
      ->check(CLI::ExistingFile);
  an_sample->add_option("-k,--per-country", an_k);
  an_sample->add_option("--rng-seed", an_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (scan_v4->parsed()) return run_scan_command(v4o, ScanMode::full_v4);
    if (scan_v6->parsed()) return run_scan_command(v6o, ScanMode::seeded_v6);
    if (scan_list->parsed()) return run_scan_command(listo, ScanMode::static_list);
    if (explore->parsed()) return run_scan_command(exploreo, ScanMode::explore);
    if (census->parsed()) return run_scan_command(censuso, ScanMode::overlap_census);
    if (sim->parsed()) return cmd_sim_ns(zone_file, bind_addr);
    if (prep->parsed())
      return cmd_prepare(prep_domains, prep_resolver, prep_out, prep_rejects, prep_qtype,
                         prep_parallel, prep_timeout, prep_retries);
    if (analyze->parsed()) {
      if (an_summary->parsed()) return cmd_analyze_summary(an_in);
      if (an_hist->parsed()) return cmd_analyze_histogram(an_in, an_csv);
      if (an_classify->parsed()) return cmd_analyze_classify(an_in);
      if (an_overlaps->parsed()) return cmd_analyze_overlaps(an_in, an_as, an_floor);
      if (an_savings->parsed()) return cmd_analyze_savings(an_in, an_seeds, an_source);
      if (an_diff->parsed()) return cmd_analyze_diff(an_a, an_b);
      if (an_sample->parsed()) return cmd_analyze_sample(an_geo, an_k, an_seed);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
