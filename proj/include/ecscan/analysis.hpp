#pragma once

#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecscan/prefix.hpp"
#include "ecscan/record.hpp"

namespace ecscan {

struct ScanSummary {
  uint64_t queries = 0;
  uint64_t distinct_rrsets = 0;
  uint64_t distinct_addresses = 0;
  uint64_t distinct_scopes = 0;
};

struct ScopeHistogram {
  std::map<int, uint64_t> buckets;
  uint64_t no_scope = 0;  // responses without an echoed scope
};

enum class EcsClass { unsupported, enabled, using_ecs, unresolved };
std::string to_string(EcsClass cls);

struct OverlapReport {
  Prefix covering_region;
  Prefix covering_query;
  int covering_scope = 0;  // raw returned scope, for audit
  std::string covering_rrset;
  struct Covered {
    Prefix region;
    Prefix query;
    int scope = 0;
    std::string rrset;
  };
  std::vector<Covered> covered;
  bool differing_answers = false;
  std::optional<bool> cross_as;
};

struct ProbeMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ScopeDelta {
  Prefix probe;
  std::optional<int> scope_a;
  std::optional<int> scope_b;
  std::optional<int> delta;  // scope_b - scope_a; absent when either side is missing
  bool missing_a = false;
  bool missing_b = false;
};

struct GeoEntry {
  Prefix prefix;
  std::string country;
  uint32_t origin_as = 0;
};

// Longest-prefix-match table from prefix to origin AS.
class AsMap {
 public:
  void add(const Prefix& p, uint32_t asn);
  std::optional<uint32_t> lookup(const Prefix& p) const;
  static AsMap from_geo(std::span<const GeoEntry> entries);
  size_t size() const { return entries_.size(); }

 private:
  std::vector<std::pair<Prefix, uint32_t>> entries_;  // kept sorted
  bool sorted_ = true;
};

// Order- and TTL-insensitive RRset identity.
std::string rrset_key(const ScanRecord& r);

// Expects records from one (qname, qtype).
ScanSummary summarize(std::span<const ScanRecord> records);

ScopeHistogram scope_histogram(std::span<const ScanRecord> records);

// enabled iff any scoped response (scope > 0); using iff additionally at
// least two distinct RRsets across distinct probe prefixes.
EcsClass classify_ecs(std::span<const ScanRecord> records);

// Reports every response scope region that strictly contains another
// record's scope region; regions use the clamped effective scope. cross_as
// is filled when an AS map is supplied.
std::vector<OverlapReport> detect_overlaps(std::span<const ScanRecord> records,
                                           int scope_floor = 8,
                                           const AsMap* as_map = nullptr);

// 1 - dispatched unique targets / naive target count. Throws
// std::domain_error when the seed space is empty.
double savings_ratio(std::span<const ScanRecord> records, std::span<const Prefix> seeds,
                     int source_len);

std::vector<ScopeDelta> diff_scope_runs(std::span<const ScanRecord> run_a,
                                        std::span<const ScanRecord> run_b);

// Up to k prefixes per ISO country, never two from the same origin AS within
// a country; deterministic under rng_seed and invariant under input order.
std::vector<Prefix> sample_country_prefixes(std::span<const GeoEntry> geo_map, int k,
                                            uint64_t rng_seed);

std::vector<GeoEntry> load_geo_csv(const std::string& path);

}  // namespace ecscan
