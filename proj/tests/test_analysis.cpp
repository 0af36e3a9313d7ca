#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "ecscan/analysis.hpp"
#include "ecscan/prefix_trie.hpp"
#include "helpers.hpp"

using namespace ecscan;
using testutil::P;

namespace {

ScanRecord rec(const std::string& cidr, std::optional<int> scope,
               std::vector<std::string> addrs = {"192.0.2.1"},
               const std::string& qname = "example.com") {
  ScanRecord r;
  r.qname = qname;
  r.qtype = kTypeA;
  auto p = P(cidr);
  r.family = p.family;
  r.ecs_addr = p.bits;
  r.source_len = p.length;
  if (scope) r.scope_len = static_cast<uint8_t>(*scope);
  r.rcode = 0;
  for (const auto& a : addrs) r.answers.push_back(RecordAnswer{kTypeA, 60, a});
  return r;
}

// Quadratic reference for detect_overlaps: every strict region containment,
// grouped by covering region.
std::map<Prefix, std::set<Prefix>> brute_force_overlaps(
    const std::vector<ScanRecord>& records, int floor) {
  auto region_of = [&](const ScanRecord& r) -> std::optional<Prefix> {
    if (r.error || !r.scope_len) return std::nullopt;
    int eff = effective_scope(r.source_len, static_cast<int>(*r.scope_len), floor);
    return r.ecs_prefix().supernet(eff);
  };
  std::map<Prefix, std::set<Prefix>> out;
  for (const auto& a : records) {
    auto ra = region_of(a);
    if (!ra) continue;
    for (const auto& b : records) {
      auto rb = region_of(b);
      if (!rb) continue;
      if (ra->length < rb->length && ra->contains(*rb)) out[*ra].insert(*rb);
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("analysis") {

TEST_CASE("rrset identity ignores order and ttl") {
  auto a = rec("10.0.0.0/24", 24, {"192.0.2.1", "192.0.2.2"});
  auto b = rec("10.0.1.0/24", 24, {"192.0.2.2", "192.0.2.1"});
  b.answers[0].ttl = 999;
  CHECK(rrset_key(a) == rrset_key(b));
  std::vector<ScanRecord> records{a, b};
  CHECK(summarize(records).distinct_rrsets == 1);
}

TEST_CASE("summarize counts planted ground truth") {
  std::vector<ScanRecord> records{
      rec("10.0.0.0/24", 24, {"192.0.2.1"}),
      rec("10.0.1.0/24", 23, {"192.0.2.2"}),
      rec("10.0.2.0/24", 24, {"192.0.2.3"}),
      rec("10.0.3.0/24", 24, {"192.0.2.1"}),
  };
  auto s = summarize(records);
  CHECK(s.queries == 4);
  CHECK(s.distinct_rrsets == 3);
  CHECK(s.distinct_addresses == 3);
  CHECK(s.distinct_scopes == 2);
}

TEST_CASE("scope histogram partitions the record count") {
  std::vector<ScanRecord> records{
      rec("10.0.0.0/24", 24), rec("10.0.1.0/24", 24), rec("10.0.2.0/24", 20),
      rec("10.0.3.0/24", std::nullopt)};
  auto h = scope_histogram(records);
  CHECK(h.buckets[24] == 2);
  CHECK(h.buckets[20] == 1);
  CHECK(h.no_scope == 1);
  uint64_t total = h.no_scope;
  for (auto& [len, n] : h.buckets) total += n;
  CHECK(total == records.size());
  CHECK(scope_histogram({}).buckets.empty());
}

TEST_CASE("classification follows the terminology lattice") {
  SUBCASE("all scopes zero or absent is unsupported") {
    std::vector<ScanRecord> records{rec("10.0.0.0/24", 0), rec("10.0.1.0/24", std::nullopt)};
    CHECK(classify_ecs(records) == EcsClass::unsupported);
  }
  SUBCASE("scoped single RRset is enabled") {
    std::vector<ScanRecord> records{rec("10.0.0.0/24", 24), rec("10.0.1.0/24", 24)};
    CHECK(classify_ecs(records) == EcsClass::enabled);
  }
  SUBCASE("scoped with two RRsets across probes is using") {
    std::vector<ScanRecord> records{rec("10.0.0.0/24", 24, {"192.0.2.1"}),
                                    rec("10.0.1.0/24", 24, {"192.0.2.2"})};
    CHECK(classify_ecs(records) == EcsClass::using_ecs);
  }
  SUBCASE("two RRsets from the same probe do not count as using") {
    std::vector<ScanRecord> records{rec("10.0.0.0/24", 24, {"192.0.2.1"}),
                                    rec("10.0.0.0/24", 24, {"192.0.2.2"})};
    CHECK(classify_ecs(records) == EcsClass::enabled);
  }
  SUBCASE("adding records never demotes") {
    std::vector<ScanRecord> records{rec("10.0.0.0/24", 24, {"192.0.2.1"})};
    CHECK(classify_ecs(records) == EcsClass::enabled);
    records.push_back(rec("10.0.1.0/24", 0, {"192.0.2.1"}));
    CHECK(classify_ecs(records) == EcsClass::enabled);
    records.push_back(rec("10.0.2.0/24", 24, {"192.0.2.9"}));
    CHECK(classify_ecs(records) == EcsClass::using_ecs);
    records.push_back(rec("10.0.3.0/24", std::nullopt));
    CHECK(classify_ecs(records) == EcsClass::using_ecs);
  }
  SUBCASE("only errors is unresolved") {
    auto r = rec("10.0.0.0/24", std::nullopt);
    r.error = "timeout";
    r.rcode.reset();
    std::vector<ScanRecord> records{r};
    CHECK(classify_ecs(records) == EcsClass::unresolved);
  }
}

TEST_CASE("the planted overlap pair yields one report with a /23 covering") {
  std::vector<ScanRecord> records{
      rec("10.0.0.0/24", 24, {"192.0.2.1"}),
      rec("10.0.1.0/24", 23, {"198.51.100.1"}),
  };
  auto reports = detect_overlaps(records);
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].covering_region.to_string() == "10.0.0.0/23");
  CHECK(reports[0].covering_query.to_string() == "10.0.1.0/24");
  CHECK(reports[0].covering_scope == 23);
  REQUIRE(reports[0].covered.size() == 1);
  CHECK(reports[0].covered[0].region.to_string() == "10.0.0.0/24");
  CHECK(reports[0].differing_answers);
  CHECK(!reports[0].cross_as.has_value());
}

TEST_CASE("equal scopes never overlap") {
  std::vector<ScanRecord> records;
  for (int i = 0; i < 32; ++i)
    records.push_back(rec("10.0." + std::to_string(i) + ".0/24", 24));
  CHECK(detect_overlaps(records).empty());
}

TEST_CASE("cross_as flags covered prefixes from another AS") {
  std::vector<ScanRecord> records{
      rec("10.0.0.0/24", 24, {"192.0.2.1"}),
      rec("10.0.1.0/24", 23, {"198.51.100.1"}),
  };
  AsMap as_map;
  as_map.add(P("10.0.0.0/24"), 65001);
  as_map.add(P("10.0.1.0/24"), 65002);
  auto reports = detect_overlaps(records, 8, &as_map);
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].cross_as == true);

  AsMap same;
  same.add(P("10.0.0.0/16"), 65001);
  auto reports2 = detect_overlaps(records, 8, &same);
  CHECK(reports2[0].cross_as == false);
}

TEST_CASE("detect_overlaps equals the quadratic oracle on random logs") {
  std::mt19937_64 rng(1009);
  for (int round = 0; round < 100; ++round) {
    std::vector<ScanRecord> records;
    size_t n = 50 + rng() % 950;
    for (size_t i = 0; i < n; ++i) {
      AddrBits bits{rng() << 40, 0};  // confined space provokes containments
      Prefix p{Family::v4, bits.masked(24), 24};
      std::optional<int> scope;
      if (rng() % 10 != 0) scope = static_cast<int>(rng() % 33);
      records.push_back(rec(p.to_string(), scope));
      if (rng() % 7 == 0) records.back().error = "timeout";
    }
    auto got = detect_overlaps(records);
    auto want = brute_force_overlaps(records, 8);
    REQUIRE(got.size() == want.size());
    for (const auto& report : got) {
      auto it = want.find(report.covering_region);
      REQUIRE(it != want.end());
      std::set<Prefix> got_regions;
      for (const auto& c : report.covered) got_regions.insert(c.region);
      CHECK(got_regions == it->second);
    }
  }
}

TEST_CASE("savings ratio") {
  SUBCASE("fixed-24 answers save nothing") {
    std::vector<Prefix> seeds{P("10.0.0.0/20")};
    std::vector<ScanRecord> records;
    AddrBits bits = seeds[0].bits;
    for (int i = 0; i < 16; ++i) {
      records.push_back(rec(Prefix{Family::v4, bits, 24}.to_string(), 24));
      advance_grid(bits, Family::v4, 24);
    }
    CHECK(savings_ratio(records, seeds, 24) == doctest::Approx(0.0));
  }
  SUBCASE("one covering answer saves all but one query") {
    std::vector<Prefix> seeds{P("10.0.0.0/8")};
    std::vector<ScanRecord> records{rec("10.0.0.0/24", 8)};
    CHECK(savings_ratio(records, seeds, 24) == doctest::Approx(1.0 - 1.0 / 65536));
  }
  SUBCASE("duplicate targets count once") {
    std::vector<Prefix> seeds{P("10.0.0.0/22")};
    std::vector<ScanRecord> records{rec("10.0.0.0/24", 24), rec("10.0.0.0/24", 24),
                                    rec("10.0.1.0/24", 24)};
    CHECK(savings_ratio(records, seeds, 24) == doctest::Approx(0.5));
  }
  SUBCASE("empty seed space is an error") {
    std::vector<ScanRecord> records{rec("10.0.0.0/24", 24)};
    CHECK_THROWS_AS(savings_ratio(records, {}, 24), std::domain_error);
  }
  SUBCASE("matches a region-counting oracle on a planted scope map") {
    // scope map: first /20 answered at /20, rest of the /16 at /22 each
    std::vector<Prefix> seeds{P("10.0.0.0/16")};
    std::vector<ScanRecord> records;
    records.push_back(rec("10.0.0.0/24", 20));
    AddrBits bits = P("10.0.16.0/24").bits;
    int queries = 1;
    while (true) {
      records.push_back(rec(Prefix{Family::v4, bits, 24}.to_string(), 22));
      ++queries;
      if (!advance_grid(bits, Family::v4, 22)) break;
      if (!P("10.0.0.0/16").contains_addr(bits)) break;
    }
    // regions: one /20 (16 /24s) + 60 /22s (4 /24s each) = 256 total
    CHECK(queries == 61);
    CHECK(savings_ratio(records, seeds, 24) == doctest::Approx(1.0 - 61.0 / 256.0));
  }
}

TEST_CASE("scope run diffs") {
  SUBCASE("identical runs have zero deltas") {
    std::vector<ScanRecord> a{rec("10.0.0.0/24", 20), rec("10.1.0.0/24", 24)};
    auto deltas = diff_scope_runs(a, a);
    REQUIRE(deltas.size() == 2);
    for (const auto& d : deltas) CHECK(d.delta == 0);
  }
  SUBCASE("more specific scopes give positive deltas") {
    std::vector<ScanRecord> a{rec("10.0.0.0/24", 20)};
    std::vector<ScanRecord> b{rec("10.0.0.0/24", 24)};
    auto deltas = diff_scope_runs(a, b);
    REQUIRE(deltas.size() == 1);
    CHECK(deltas[0].delta == 4);
  }
  SUBCASE("probes missing from one run are flagged") {
    std::vector<ScanRecord> a{rec("10.0.0.0/24", 20), rec("10.1.0.0/24", 24)};
    std::vector<ScanRecord> b{rec("10.0.0.0/24", 20)};
    auto deltas = diff_scope_runs(a, b);
    REQUIRE(deltas.size() == 2);
    int flagged = 0;
    for (const auto& d : deltas)
      if (d.missing_b) {
        ++flagged;
        CHECK(!d.delta.has_value());
      }
    CHECK(flagged == 1);
  }
  SUBCASE("disjoint probe sets are an error") {
    std::vector<ScanRecord> a{rec("10.0.0.0/24", 20)};
    std::vector<ScanRecord> b{rec("10.9.0.0/24", 20)};
    CHECK_THROWS_AS(diff_scope_runs(a, b), ProbeMismatchError);
  }
}

TEST_CASE("country prefix sampling") {
  auto entry = [](const std::string& cidr, const std::string& cc, uint32_t asn) {
    return GeoEntry{P(cidr), cc, asn};
  };
  SUBCASE("k AS-distinct candidates give exactly k") {
    std::vector<GeoEntry> geo{
        entry("10.0.0.0/24", "DE", 1), entry("10.0.1.0/24", "DE", 2),
        entry("10.0.2.0/24", "DE", 3), entry("10.0.3.0/24", "DE", 4),
        entry("10.1.0.0/24", "FR", 9), entry("10.1.1.0/24", "FR", 9),
    };
    auto picks = sample_country_prefixes(geo, 3, 5);
    // DE yields 3, FR only 1 because both candidates share AS 9
    CHECK(picks.size() == 4);
    std::set<Prefix> set(picks.begin(), picks.end());
    CHECK(set.size() == picks.size());
  }
  SUBCASE("empty map yields empty list") {
    CHECK(sample_country_prefixes({}, 3, 1).empty());
  }
  SUBCASE("deterministic and input-order invariant") {
    std::vector<GeoEntry> geo;
    std::mt19937_64 rng(2024);
    const char* countries[] = {"DE", "FR", "US", "JP", "BR"};
    for (int i = 0; i < 60; ++i) {
      AddrBits bits{rng() << 32, 0};
      geo.push_back(GeoEntry{Prefix{Family::v4, bits.masked(24), 24},
                             countries[rng() % 5], static_cast<uint32_t>(rng() % 20)});
    }
    auto a = sample_country_prefixes(geo, 3, 42);
    auto shuffled = geo;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto b = sample_country_prefixes(shuffled, 3, 42);
    CHECK(a == b);
    CHECK(a == sample_country_prefixes(geo, 3, 42));
  }
}

}  // TEST_SUITE
