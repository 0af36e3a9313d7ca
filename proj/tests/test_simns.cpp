#include <doctest.h>

#include <random>

#include "ecscan/simns.hpp"
#include "ecscan/transport.hpp"
#include "helpers.hpp"

using namespace ecscan;
using namespace testutil;

namespace {

std::optional<EcsOption> ecs_for(const std::string& cidr) {
  auto p = P(cidr);
  return EcsOption{p.family, p.bits, p.length, 0};
}

}  // namespace

TEST_SUITE("simns") {

TEST_CASE("overlap example rules answer as planted") {
  auto zone = overlap_example_zone();
  auto r1 = zone_lookup(zone, "example.com", kTypeA, ecs_for("10.0.0.0/24"));
  REQUIRE(r1.answers.size() == 1);
  CHECK(r1.answers[0].rdata == "192.0.2.1");
  CHECK(r1.scope == 24);

  auto r2 = zone_lookup(zone, "example.com", kTypeA, ecs_for("10.0.1.0/24"));
  REQUIRE(r2.answers.size() == 1);
  CHECK(r2.answers[0].rdata == "198.51.100.1");
  CHECK(r2.scope == 23);
}

TEST_CASE("fixed scope policy always returns its length") {
  auto zone = uniform_zone("example.com", ScopePolicy::fixed(24));
  for (const char* cidr : {"10.0.0.0/24", "8.8.8.0/24", "192.0.2.0/24"}) {
    auto r = zone_lookup(zone, "example.com", kTypeA, ecs_for(cidr));
    CHECK(r.scope == 24);
  }
}

TEST_CASE("scope policies") {
  auto probe = ecs_for("10.1.2.0/24");
  auto check_scope = [&](ScopePolicy p, std::optional<uint8_t> want) {
    auto zone = uniform_zone("example.com", p);
    CHECK(zone_lookup(zone, "example.com", kTypeA, probe).scope == want);
  };
  check_scope(ScopePolicy::echo_source(), 24);
  check_scope(ScopePolicy::zero_always(), 0);
  check_scope(ScopePolicy::deeper(4), 28);
  check_scope(ScopePolicy::fixed(12), 12);
  check_scope(ScopePolicy::none(), std::nullopt);
  // deeper saturates at the family width
  auto z6 = uniform_zone("example.com", ScopePolicy::deeper(10));
  CHECK(zone_lookup(z6, "example.com", kTypeA, ecs_for("2001:db8::/126")).scope == 128);
}

TEST_CASE("rule_length policy mirrors the mapping granularity") {
  std::vector<ZoneRule> rules;
  rules.push_back(ZoneRule{P("10.0.0.0/12"), {A("192.0.2.1")}, ScopePolicy::rule_length()});
  rules.push_back(
      ZoneRule{P("10.0.0.0/20"), {A("192.0.2.2")}, ScopePolicy::rule_length()});
  auto zone = rules_zone("example.com", std::move(rules));
  CHECK(zone_lookup(zone, "example.com", kTypeA, ecs_for("10.0.1.0/24")).scope == 20);
  CHECK(zone_lookup(zone, "example.com", kTypeA, ecs_for("10.128.0.0/24")).scope == 12);
}

TEST_CASE("query without ecs gets default answers and no scope") {
  auto zone = overlap_example_zone();
  auto r = zone_lookup(zone, "example.com", kTypeA, std::nullopt);
  REQUIRE(r.answers.size() == 1);
  CHECK(r.answers[0].rdata == "203.0.113.1");
  CHECK(!r.scope.has_value());
}

TEST_CASE("unmatched qname is NXDOMAIN") {
  auto zone = uniform_zone("example.com", ScopePolicy::echo_source());
  auto r = zone_lookup(zone, "other.net", kTypeA, ecs_for("10.0.0.0/24"));
  CHECK(r.rcode == kRcodeNXDomain);
  CHECK(r.answers.empty());
}

TEST_CASE("wildcard patterns match deeper names") {
  auto zone = uniform_zone("*.cdn.example", ScopePolicy::fixed(20));
  CHECK(zone_lookup(zone, "a.cdn.example", kTypeA, ecs_for("10.0.0.0/24")).rcode == 0);
  CHECK(zone_lookup(zone, "a.b.cdn.example", kTypeA, ecs_for("10.0.0.0/24")).rcode == 0);
  CHECK(zone_lookup(zone, "cdn.example", kTypeA, ecs_for("10.0.0.0/24")).rcode ==
        kRcodeNXDomain);
}

TEST_CASE("lookup is pure and longest-match agrees with brute force") {
  std::mt19937_64 rng(21);
  std::vector<ZoneRule> rules;
  for (int i = 0; i < 40; ++i) {
    int len = 8 + static_cast<int>(rng() % 17);
    AddrBits bits{rng() << 32, 0};
    Prefix p{Family::v4, bits.masked(len), static_cast<uint8_t>(len)};
    bool dup = false;
    for (const auto& r : rules)
      if (r.client_prefix == p) dup = true;
    if (dup) continue;
    rules.push_back(ZoneRule{p, {A("192.0.2." + std::to_string(i % 250))},
                             ScopePolicy::rule_length()});
  }
  auto brute = rules;  // copy for the oracle
  auto zone = rules_zone("example.com", std::move(rules));
  for (int i = 0; i < 500; ++i) {
    AddrBits bits{rng() << 32, 0};
    Prefix probe{Family::v4, bits.masked(24), 24};
    auto got = zone_lookup(zone, "example.com", kTypeA, ecs_for(probe.to_string()));
    auto again = zone_lookup(zone, "example.com", kTypeA, ecs_for(probe.to_string()));
    CHECK(got.answers == again.answers);  // deterministic
    const ZoneRule* best = nullptr;
    for (const auto& r : brute)
      if (r.client_prefix.contains_addr(probe.bits) &&
          (!best || r.client_prefix.length > best->client_prefix.length))
        best = &r;
    if (best) {
      REQUIRE(got.answers.size() == 1);
      CHECK(got.answers[0] == best->answers[0]);
      CHECK(got.scope == best->client_prefix.length);
    } else {
      CHECK(got.answers.empty());  // empty default
    }
  }
}

TEST_CASE("served responses echo family, address and source unchanged") {
  RunningServer srv(uniform_zone("example.com", ScopePolicy::fixed(20)));
  QuerySpec spec;
  spec.qname = "example.com";
  spec.ecs = EcsOption{Family::v4, P("10.9.8.0/24").bits, 24, 0};
  auto res = exchange(srv.addr(), build_query(spec), fast_policy());
  REQUIRE(res.response.ecs_echo.has_value());
  CHECK(res.response.ecs_echo->family == Family::v4);
  CHECK(res.response.ecs_echo->source_len == 24);
  CHECK(addr_to_string(Family::v4, res.response.ecs_echo->address) == "10.9.8.0");
  CHECK(res.response.ecs_echo->scope_len == 20);
}

TEST_CASE("nsid is returned only when requested and configured") {
  auto zone = uniform_zone("example.com", ScopePolicy::echo_source());
  zone.nsid = "ns-frankfurt-1";
  RunningServer srv(std::move(zone));
  QuerySpec spec;
  spec.qname = "example.com";
  spec.request_nsid = true;
  auto res = exchange(srv.addr(), build_query(spec), fast_policy());
  REQUIRE(res.response.nsid.has_value());
  CHECK(std::string(res.response.nsid->begin(), res.response.nsid->end()) ==
        "ns-frankfurt-1");
  QuerySpec plain;
  plain.qname = "example.com";
  plain.ecs = EcsOption{Family::v4, P("10.0.0.0/24").bits, 24, 0};
  auto res2 = exchange(srv.addr(), build_query(plain), fast_policy());
  CHECK(!res2.response.nsid.has_value());
}

TEST_CASE("zone json round-trips") {
  const char* text = R"({
    "zones": [
      { "qname": "example.com",
        "rules": [
          {"prefix": "10.0.0.0/24",
           "answers": [{"type": "A", "ttl": 60, "rdata": "192.0.2.1"}],
           "scope": {"fixed": 24}},
          {"prefix": "10.0.1.0/24",
           "answers": [{"type": "A", "ttl": 60, "rdata": "198.51.100.1"}],
           "scope": {"fixed": 23}},
          {"prefix": "2600::/12",
           "answers": [{"type": "AAAA", "rdata": "2001:db8::1"}],
           "scope": "echo_source"}
        ],
        "default": {"answers": [{"type": "A", "rdata": "203.0.113.1"}],
                     "scope": "zero_always"} },
      { "qname": "chain.example",
        "default": {"answers": [{"type": "CNAME", "rdata": "example.com"}],
                     "scope": "none"} }
    ],
    "truncate_udp": false,
    "drop_probability": 0.0,
    "nsid": "sim-1"
  })";
  auto zone = SimZone::from_json_text(text);
  CHECK(zone.zones.size() == 2);
  CHECK(zone.nsid == "sim-1");
  auto r = zone_lookup(zone, "example.com", kTypeA, ecs_for("10.0.1.0/24"));
  CHECK(r.scope == 23);
  auto v6 = zone_lookup(zone, "example.com", kTypeAAAA, ecs_for("2600:1700::/48"));
  REQUIRE(v6.answers.size() == 1);
  CHECK(v6.answers[0].rdata == "2001:db8::1");
  auto chain = zone_lookup(zone, "chain.example", kTypeA, ecs_for("10.0.0.0/24"));
  REQUIRE(chain.answers.size() == 1);
  CHECK(chain.answers[0].type == kTypeCNAME);
  CHECK(!chain.scope.has_value());
}

TEST_CASE("total loss zone times out every exchange") {
  auto zone = uniform_zone("example.com", ScopePolicy::echo_source());
  zone.drop_probability = 1.0;
  RunningServer srv(std::move(zone));
  ExchangePolicy policy;
  policy.timeout_ms = 100;
  policy.retries = 0;
  policy.global_rate = policy.per_ns_rate = 100000;
  QuerySpec spec;
  spec.qname = "example.com";
  CHECK_THROWS_AS(exchange(srv.addr(), build_query(spec), policy), TimeoutError);
  CHECK(srv.server.dropped() >= 1);
}

TEST_CASE("seeded drop pattern is reproducible") {
  auto make = [](uint64_t seed) {
    auto zone = uniform_zone("example.com", ScopePolicy::echo_source());
    zone.drop_probability = 0.5;
    zone.rng_seed = seed;
    return zone;
  };
  auto run = [&](uint64_t seed) {
    RunningServer srv(make(seed));
    ExchangePolicy policy;
    policy.timeout_ms = 80;
    policy.retries = 0;
    policy.global_rate = policy.per_ns_rate = 100000;
    policy.burst = 100;
    std::vector<bool> outcomes;
    for (int i = 0; i < 12; ++i) {
      QuerySpec spec;
      spec.qname = "example.com";
      try {
        exchange(srv.addr(), build_query(spec), policy);
        outcomes.push_back(true);
      } catch (const TimeoutError&) {
        outcomes.push_back(false);
      }
    }
    return outcomes;
  };
  CHECK(run(99) == run(99));
}

}  // TEST_SUITE
