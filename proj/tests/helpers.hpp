#pragma once

#include <set>
#include <string>
#include <vector>

#include "ecscan/prefix.hpp"
#include "ecscan/scanner.hpp"
#include "ecscan/simns.hpp"

namespace testutil {

using namespace ecscan;

inline Prefix P(const std::string& cidr) {
  auto p = Prefix::parse(cidr);
  REQUIRE(p.has_value());
  return *p;
}

inline ZoneAnswer A(const std::string& ip, uint32_t ttl = 60) {
  return ZoneAnswer{kTypeA, ttl, ip};
}
inline ZoneAnswer AAAA(const std::string& ip, uint32_t ttl = 60) {
  return ZoneAnswer{kTypeAAAA, ttl, ip};
}

// A zone answering every query for qname with one constant record and the
// given scope policy.
inline SimZone uniform_zone(const std::string& qname, ScopePolicy policy,
                            std::vector<ZoneAnswer> answers = {A("192.0.2.1")}) {
  SimZone zone;
  ZoneEntry entry;
  entry.qname = qname;
  entry.fallback.answers = std::move(answers);
  entry.fallback.scope = policy;
  zone.zones.push_back(std::move(entry));
  return zone;
}

inline SimZone rules_zone(const std::string& qname, std::vector<ZoneRule> rules,
                          ZoneDefault fallback = {}) {
  SimZone zone;
  ZoneEntry entry;
  entry.qname = qname;
  entry.rules = std::move(rules);
  entry.fallback = std::move(fallback);
  zone.zones.push_back(std::move(entry));
  return zone;
}

// The paper's overlapping-response example: neighbouring /24 queries, the
// second answered with a covering /23 scope.
inline SimZone overlap_example_zone(const std::string& qname = "example.com") {
  std::vector<ZoneRule> rules;
  rules.push_back(ZoneRule{P("10.0.0.0/24"), {A("192.0.2.1")}, ScopePolicy::fixed(24)});
  rules.push_back(ZoneRule{P("10.0.1.0/24"), {A("198.51.100.1")}, ScopePolicy::fixed(23)});
  ZoneDefault fallback;
  fallback.answers = {A("203.0.113.1")};
  fallback.scope = ScopePolicy::echo_source();
  return rules_zone(qname, std::move(rules), std::move(fallback));
}

struct RunningServer {
  SimServer server;
  explicit RunningServer(SimZone zone)
      : server(std::move(zone), *IpPort::parse("127.0.0.1:0")) {
    server.start();
  }
  ~RunningServer() { server.stop(); }
  IpPort addr() { return server.endpoint(); }
};

inline ScanTarget target_for(RunningServer& srv, const std::string& qname,
                             uint16_t qtype = kTypeA) {
  return ScanTarget{qname, qtype, {srv.addr()}};
}

inline ExchangePolicy fast_policy(int timeout_ms = 2000, int retries = 2) {
  ExchangePolicy p;
  p.timeout_ms = timeout_ms;
  p.retries = retries;
  p.global_rate = 50000;
  p.per_ns_rate = 50000;
  p.burst = 1000;
  return p;
}

inline ScanJob base_job(RunningServer& srv, const std::string& qname, ScanMode mode) {
  ScanJob job;
  job.mode = mode;
  job.targets = {target_for(srv, qname)};
  job.policy = fast_policy();
  return job;
}

inline std::set<std::string> queried_prefixes(const std::vector<ScanRecord>& records) {
  std::set<std::string> out;
  for (const auto& r : records) out.insert(r.ecs_prefix().to_string());
  return out;
}

}  // namespace testutil
