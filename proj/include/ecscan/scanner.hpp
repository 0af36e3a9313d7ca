#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ecscan/analysis.hpp"
#include "ecscan/prefix_trie.hpp"
#include "ecscan/record.hpp"
#include "ecscan/transport.hpp"

namespace ecscan {

enum class ScanMode { full_v4, seeded_v6, static_list, explore, overlap_census };

struct ScanTarget {
  std::string qname;
  uint16_t qtype = kTypeA;
  std::vector<IpPort> ns;
};

struct ScanJob {
  ScanMode mode = ScanMode::full_v4;
  std::vector<ScanTarget> targets;
  std::vector<Prefix> seeds;
  std::vector<Prefix> unrouted_seeds;
  BudgetTable budgets;
  std::optional<int> source_len;  // default 24 for IPv4, 48 for IPv6
  int scope_floor = 8;
  std::vector<Prefix> probes;  // static_list and explore modes
  uint64_t rng_seed = 1;
  int workers = 1;
  ExchangePolicy policy;
  bool seed_once = false;
  bool request_nsid = false;
  bool recursion_desired = false;
  std::optional<size_t> pin_ns;  // pin one nameserver instead of rotating
};

struct ScanStats {
  uint64_t dispatched = 0;
  uint64_t responses = 0;
  uint64_t errors = 0;
  uint64_t stream_fallbacks = 0;
};

struct ExploreOutcome {
  std::string qname;
  Family family = Family::v4;
  EcsClass cls = EcsClass::unresolved;
};

ScanStats run_full_v4(const ScanJob& job, RecordSink& sink);
ScanStats run_seeded_v6(const ScanJob& job, RecordSink& sink);
ScanStats run_static(const ScanJob& job, RecordSink& sink);
ScanStats run_overlap_census(const ScanJob& job, RecordSink& sink);
ScanStats run_explore(const ScanJob& job, RecordSink& sink,
                      std::vector<ExploreOutcome>& outcomes);

// Dispatches on job.mode; outcomes only used by explore.
ScanStats run_scan(const ScanJob& job, RecordSink& sink,
                   std::vector<ExploreOutcome>* outcomes = nullptr);

// Target file: JSON lines {"qname": str, "qtype": "A"|"AAAA", "ns": [ip, ...]}.
std::vector<ScanTarget> load_targets(const std::string& path);
std::vector<ScanTarget> parse_target_lines(const std::string& text, const std::string& origin);
std::string target_to_jsonl(const ScanTarget& t);

// The default exploration probes, four per family.
std::vector<Prefix> default_explore_probes(Family family);

}  // namespace ecscan
