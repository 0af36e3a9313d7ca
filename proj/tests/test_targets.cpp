#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ecscan/targets.hpp"
#include "helpers.hpp"

using namespace ecscan;
using namespace testutil;

namespace {

ZoneAnswer CNAME(const std::string& target) { return ZoneAnswer{kTypeCNAME, 300, target}; }
ZoneAnswer NS(const std::string& name) { return ZoneAnswer{kTypeNS, 300, name}; }

// A small world with CNAME chains, a loop, a zone cut with two nameservers
// and a name whose zone has no reachable NS.
SimZone resolver_world() {
  SimZone zone;
  auto add = [&](const std::string& qname, std::vector<ZoneAnswer> answers) {
    ZoneEntry e;
    e.qname = qname;
    e.fallback.answers = std::move(answers);
    e.fallback.scope = ScopePolicy::none();
    zone.zones.push_back(std::move(e));
  };
  add("www.shop.example", {CNAME("edge.cdn.example")});
  add("m.shop.example", {CNAME("edge.cdn.example")});
  add("a.chain.example", {CNAME("b.chain.example")});
  add("b.chain.example", {CNAME("c.chain.example")});
  add("c.chain.example", {A("203.0.113.5"), NS("ns1.cdn.example")});
  add("a.loop.example", {CNAME("b.loop.example")});
  add("b.loop.example", {CNAME("a.loop.example")});
  add("edge.cdn.example", {A("203.0.113.10")});
  add("cdn.example", {NS("ns1.cdn.example"), NS("ns2.cdn.example")});
  add("ns1.cdn.example", {A("198.51.100.1"), AAAA("2001:db8::1")});
  add("ns2.cdn.example", {A("198.51.100.2"), AAAA("2001:db8::2")});
  add("lonely.example", {A("203.0.113.77")});
  return zone;
}

}  // namespace

TEST_SUITE("targets") {

TEST_CASE("resolve_chain") {
  RunningServer srv(resolver_world());
  auto policy = fast_policy();

  SUBCASE("a name without a CNAME resolves to itself") {
    CHECK(resolve_chain("edge.cdn.example", srv.addr(), policy) == "edge.cdn.example");
  }
  SUBCASE("chains are followed to the last name") {
    CHECK(resolve_chain("a.chain.example", srv.addr(), policy) == "c.chain.example");
    CHECK(resolve_chain("www.shop.example", srv.addr(), policy) == "edge.cdn.example");
  }
  SUBCASE("loops are detected") {
    CHECK_THROWS_AS(resolve_chain("a.loop.example", srv.addr(), policy), ChainLoopError);
  }
  SUBCASE("over-long chains error out") {
    CHECK_THROWS_AS(resolve_chain("a.chain.example", srv.addr(), policy, 1),
                    ChainTooDeepError);
  }
  SUBCASE("unreachable resolver is a resolution failure") {
    ExchangePolicy quick = policy;
    quick.timeout_ms = 60;
    quick.retries = 0;
    auto dead = *IpPort::parse("127.0.0.1:1");
    CHECK_THROWS_AS(resolve_chain("edge.cdn.example", dead, quick), ResolutionError);
  }
}

TEST_CASE("prepare_targets groups by canonical name and finds nameservers") {
  RunningServer srv(resolver_world());
  std::vector<std::string> domains{"www.shop.example", "m.shop.example",
                                   "a.chain.example", "lonely.example"};
  auto result = prepare_targets(domains, srv.addr(), fast_policy(), kTypeA, 4);

  REQUIRE(result.targets.size() == 2);
  // two inputs share edge.cdn.example; output order follows first appearance
  const auto& edge = result.targets[0];
  CHECK(edge.cdomain == "edge.cdn.example");
  CHECK(edge.input_domains == std::vector<std::string>{"www.shop.example",
                                                       "m.shop.example"});
  CHECK(edge.ns_names.size() == 2);
  CHECK(edge.ns_ips.size() == 4);  // two NS names with an A and an AAAA each
  for (const auto& ip : edge.ns_ips) CHECK(IpPort::parse(ip).has_value());

  const auto& chain = result.targets[1];
  CHECK(chain.cdomain == "c.chain.example");
  CHECK(chain.ns_names == std::vector<std::string>{"ns1.cdn.example"});
  CHECK(chain.ns_ips.size() == 2);

  // lonely.example has no NS anywhere up the tree
  REQUIRE(result.rejects.size() == 1);
  CHECK(result.rejects[0].domain == "lonely.example");
}

TEST_CASE("emitted records parse back as scanner targets") {
  RunningServer srv(resolver_world());
  std::vector<std::string> domains{"www.shop.example"};
  auto result = prepare_targets(domains, srv.addr(), fast_policy());
  REQUIRE(result.targets.size() == 1);
  auto line = target_record_to_jsonl(result.targets[0]);
  auto parsed = parse_target_lines(line + "\n", "test");
  REQUIRE(parsed.size() == 1);
  CHECK(parsed[0].qname == "edge.cdn.example");
  CHECK(parsed[0].qtype == kTypeA);
  CHECK(parsed[0].ns.size() == 4);
}

TEST_CASE("domain list loading skips comments and blanks") {
  namespace fs = std::filesystem;
  auto path = fs::temp_directory_path() / "ecscan_domains.txt";
  {
    std::ofstream out(path);
    out << "# top sites\n";
    out << "a.example\n\n";
    out << "b.example  # trailing comment\n";
  }
  auto domains = load_domain_list(path.string());
  CHECK(domains == std::vector<std::string>{"a.example", "b.example"});
  fs::remove(path);
}

}  // TEST_SUITE
