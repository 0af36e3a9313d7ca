#include "ecscan/analysis.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "ecscan/prefix_trie.hpp"

namespace ecscan {

namespace {

struct ProbeKey {
  Family family;
  AddrBits addr;
  uint8_t source_len;
  friend auto operator<=>(const ProbeKey&, const ProbeKey&) = default;
};

ProbeKey probe_key(const ScanRecord& r) {
  return ProbeKey{r.family, r.ecs_addr.masked(r.source_len), r.source_len};
}

// Scope region of a scoped response, clamped to [floor, source_len].
std::optional<Prefix> scope_region(const ScanRecord& r, int floor) {
  if (r.error || !r.scope_len) return std::nullopt;
  int eff = effective_scope(r.source_len, static_cast<int>(*r.scope_len), floor);
  return r.ecs_prefix().supernet(eff);
}

}  // namespace

std::string to_string(EcsClass cls) {
  switch (cls) {
    case EcsClass::unsupported:
      return "unsupported";
    case EcsClass::enabled:
      return "enabled";
    case EcsClass::using_ecs:
      return "using";
    case EcsClass::unresolved:
      return "unresolved";
  }
  return "?";
}

std::string rrset_key(const ScanRecord& r) {
  std::vector<std::string> parts;
  parts.reserve(r.answers.size());
  for (const auto& a : r.answers) parts.push_back(std::to_string(a.type) + ":" + a.rdata);
  std::sort(parts.begin(), parts.end());
  std::string key;
  for (const auto& p : parts) {
    key += p;
    key.push_back('|');
  }
  return key;
}

ScanSummary summarize(std::span<const ScanRecord> records) {
  ScanSummary s;
  std::set<std::string> rrsets;
  std::set<std::string> addresses;
  std::set<int> scopes;
  for (const auto& r : records) {
    ++s.queries;
    if (r.error) continue;
    rrsets.insert(rrset_key(r));
    for (const auto& a : r.answers)
      if (a.type == kTypeA || a.type == kTypeAAAA) addresses.insert(a.rdata);
    if (r.scope_len) scopes.insert(*r.scope_len);
  }
  s.distinct_rrsets = rrsets.size();
  s.distinct_addresses = addresses.size();
  s.distinct_scopes = scopes.size();
  return s;
}

ScopeHistogram scope_histogram(std::span<const ScanRecord> records) {
  ScopeHistogram h;
  for (const auto& r : records) {
    if (r.scope_len)
      ++h.buckets[*r.scope_len];
    else
      ++h.no_scope;
  }
  return h;
}

EcsClass classify_ecs(std::span<const ScanRecord> records) {
  bool any_response = false;
  bool enabled = false;
  std::map<ProbeKey, std::string> per_probe;
  for (const auto& r : records) {
    if (r.error) continue;
    any_response = true;
    if (r.scope_len && *r.scope_len > 0) enabled = true;
    per_probe.emplace(probe_key(r), rrset_key(r));  // keep the first per probe
  }
  if (!any_response) return EcsClass::unresolved;
  if (!enabled) return EcsClass::unsupported;
  std::set<std::string> distinct;
  for (const auto& [probe, key] : per_probe) distinct.insert(key);
  return distinct.size() >= 2 ? EcsClass::using_ecs : EcsClass::enabled;
}

void AsMap::add(const Prefix& p, uint32_t asn) {
  entries_.emplace_back(p, asn);
  sorted_ = false;
}

std::optional<uint32_t> AsMap::lookup(const Prefix& p) const {
  // Longest matching entry wins.
  std::optional<uint32_t> best;
  int best_len = -1;
  for (const auto& [ep, asn] : entries_) {
    if (ep.contains(p) && ep.length > best_len) {
      best = asn;
      best_len = ep.length;
    }
  }
  return best;
}

AsMap AsMap::from_geo(std::span<const GeoEntry> entries) {
  AsMap m;
  for (const auto& e : entries) m.add(e.prefix, e.origin_as);
  return m;
}

std::vector<OverlapReport> detect_overlaps(std::span<const ScanRecord> records,
                                           int scope_floor, const AsMap* as_map) {
  struct Entry {
    Prefix region;
    size_t idx;
  };
  std::vector<Entry> entries;
  for (size_t i = 0; i < records.size(); ++i)
    if (auto reg = scope_region(records[i], scope_floor))
      entries.push_back({*reg, i});

  // Sorting by (bits, length) puts containers before their contents, so a
  // stack sweep finds every strict containment chain.
  std::stable_sort(entries.begin(), entries.end(),
                   [](const Entry& a, const Entry& b) { return a.region < b.region; });

  std::map<Prefix, OverlapReport> reports;
  std::vector<Entry> stack;
  for (const auto& e : entries) {
    while (!stack.empty() && !stack.back().region.contains(e.region)) stack.pop_back();
    for (const auto& outer : stack) {
      if (outer.region.length >= e.region.length) continue;  // strict only
      const ScanRecord& cov = records[outer.idx];
      const ScanRecord& sub = records[e.idx];
      auto [it, fresh] = reports.try_emplace(outer.region);
      if (fresh) {
        it->second.covering_region = outer.region;
        it->second.covering_query = cov.ecs_prefix();
        it->second.covering_scope = cov.scope_len ? *cov.scope_len : 0;
        it->second.covering_rrset = rrset_key(cov);
      }
      it->second.covered.push_back(OverlapReport::Covered{
          e.region, sub.ecs_prefix(), sub.scope_len ? *sub.scope_len : 0, rrset_key(sub)});
    }
    if (stack.empty() || stack.back().region != e.region) stack.push_back(e);
  }

  std::vector<OverlapReport> out;
  out.reserve(reports.size());
  for (auto& [region, report] : reports) {
    for (const auto& c : report.covered)
      if (c.rrset != report.covering_rrset) report.differing_answers = true;
    if (as_map) {
      auto cov_as = as_map->lookup(report.covering_query);
      bool cross = false;
      for (const auto& c : report.covered) {
        auto sub_as = as_map->lookup(c.query);
        if (cov_as && sub_as && *cov_as != *sub_as) cross = true;
      }
      report.cross_as = cross;
    }
    out.push_back(std::move(report));
  }
  return out;
}

double savings_ratio(std::span<const ScanRecord> records, std::span<const Prefix> seeds,
                     int source_len) {
  uint64_t naive = count_naive_targets(seeds, source_len);
  if (naive == 0) throw std::domain_error("seed space is empty");
  std::set<ProbeKey> targets;
  for (const auto& r : records) targets.insert(probe_key(r));
  return 1.0 - static_cast<double>(targets.size()) / static_cast<double>(naive);
}

std::vector<ScopeDelta> diff_scope_runs(std::span<const ScanRecord> run_a,
                                        std::span<const ScanRecord> run_b) {
  auto collect = [](std::span<const ScanRecord> run) {
    std::map<ProbeKey, std::pair<Prefix, std::optional<int>>> m;
    for (const auto& r : run) {
      if (r.error) continue;
      auto key = probe_key(r);
      if (m.count(key)) continue;  // first observation per probe wins
      std::optional<int> scope;
      if (r.scope_len) scope = static_cast<int>(*r.scope_len);
      m.emplace(key, std::make_pair(r.ecs_prefix(), scope));
    }
    return m;
  };
  auto a = collect(run_a);
  auto b = collect(run_b);

  bool any_common = false;
  for (const auto& [key, val] : a)
    if (b.count(key)) any_common = true;
  if (!a.empty() && !b.empty() && !any_common)
    throw ProbeMismatchError("probe sets of the two runs are disjoint");

  std::vector<ScopeDelta> out;
  std::set<ProbeKey> keys;
  for (const auto& [k, v] : a) keys.insert(k);
  for (const auto& [k, v] : b) keys.insert(k);
  for (const auto& k : keys) {
    ScopeDelta d;
    auto ia = a.find(k);
    auto ib = b.find(k);
    d.probe = ia != a.end() ? ia->second.first : ib->second.first;
    d.missing_a = ia == a.end();
    d.missing_b = ib == b.end();
    if (!d.missing_a) d.scope_a = ia->second.second;
    if (!d.missing_b) d.scope_b = ib->second.second;
    if (d.scope_a && d.scope_b) d.delta = *d.scope_b - *d.scope_a;
    out.push_back(d);
  }
  return out;
}

std::vector<Prefix> sample_country_prefixes(std::span<const GeoEntry> geo_map, int k,
                                            uint64_t rng_seed) {
  std::map<std::string, std::vector<GeoEntry>> by_country;
  for (const auto& e : geo_map) by_country[e.country].push_back(e);

  std::mt19937_64 rng(rng_seed);
  std::vector<Prefix> out;
  std::set<Prefix> taken;
  for (auto& [country, candidates] : by_country) {
    // Canonical candidate order makes the draw independent of input order.
    std::sort(candidates.begin(), candidates.end(),
              [](const GeoEntry& a, const GeoEntry& b) { return a.prefix < b.prefix; });
    candidates.erase(std::unique(candidates.begin(), candidates.end(),
                                 [](const GeoEntry& a, const GeoEntry& b) {
                                   return a.prefix == b.prefix;
                                 }),
                     candidates.end());
    std::shuffle(candidates.begin(), candidates.end(), rng);
    std::set<uint32_t> used_as;
    int picked = 0;
    for (const auto& c : candidates) {
      if (picked >= k) break;
      if (used_as.count(c.origin_as) || taken.count(c.prefix)) continue;
      used_as.insert(c.origin_as);
      taken.insert(c.prefix);
      out.push_back(c.prefix);
      ++picked;
    }
  }
  return out;
}

std::vector<GeoEntry> load_geo_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open geo csv: " + path);
  std::vector<GeoEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string prefix_s, country, as_s;
    if (!std::getline(ss, prefix_s, ',') || !std::getline(ss, country, ',') ||
        !std::getline(ss, as_s))
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected prefix,country,origin_as");
    auto p = Prefix::parse(prefix_s);
    if (!p)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad prefix " +
                               prefix_s);
    GeoEntry e;
    e.prefix = *p;
    e.country = country;
    e.origin_as = static_cast<uint32_t>(std::stoul(as_s));
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace ecscan
