#include "ecscan/targets.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include <json.hpp>

namespace ecscan {

namespace {

using nlohmann::json;

std::string lower_name(const std::string& s) {
  std::string out = s;
  if (!out.empty() && out.back() == '.') out.pop_back();
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

ResponseSummary do_query(const std::string& qname, uint16_t qtype, const IpPort& resolver,
                         const ExchangePolicy& policy) {
  QuerySpec spec;
  spec.qname = qname;
  spec.qtype = qtype;
  spec.recursion_desired = true;
  try {
    return exchange(resolver, build_query(spec), policy).response;
  } catch (const TransportError& e) {
    throw ResolutionError("query " + qname + ": " + e.what());
  }
}

std::string strip_leftmost_label(const std::string& name) {
  auto dot = name.find('.');
  return dot == std::string::npos ? std::string() : name.substr(dot + 1);
}

}  // namespace

std::string resolve_chain(const std::string& domain, const IpPort& resolver,
                          const ExchangePolicy& policy, int max_depth) {
  std::string current = domain;
  std::set<std::string> visited{lower_name(current)};
  int hops = 0;
  while (true) {
    auto resp = do_query(current, kTypeA, resolver, policy);
    bool advanced = false;
    // A response may carry several chain links; follow them all before
    // querying again.
    while (true) {
      const ResourceRecord* link = nullptr;
      for (const auto& rr : resp.answers)
        if (rr.type == kTypeCNAME && dns_name_equal(rr.name, current)) {
          link = &rr;
          break;
        }
      if (!link) break;
      std::string next = name_to_string(link->rdata);
      if (++hops > max_depth)
        throw ChainTooDeepError("CNAME chain for " + domain + " exceeds " +
                                std::to_string(max_depth) + " links");
      if (!visited.insert(lower_name(next)).second)
        throw ChainLoopError("CNAME loop at " + next + " while resolving " + domain);
      current = next;
      advanced = true;
    }
    if (!advanced) return current;
  }
}

PrepareResult prepare_targets(std::span<const std::string> domains, const IpPort& resolver,
                              const ExchangePolicy& policy, uint16_t qtype,
                              int parallelism) {
  struct Resolved {
    std::string cdomain;  // empty on failure
    std::string reason;
  };
  std::vector<Resolved> resolved(domains.size());

  // Bounded parallel CNAME resolution.
  std::atomic<size_t> next{0};
  auto chase = [&]() {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= domains.size()) return;
      try {
        resolved[i].cdomain = resolve_chain(domains[i], resolver, policy);
      } catch (const std::runtime_error& e) {
        resolved[i].reason = e.what();
      }
    }
  };
  int nthreads = std::clamp<int>(parallelism, 1, 64);
  std::vector<std::thread> threads;
  for (int t = 0; t < nthreads; ++t) threads.emplace_back(chase);
  for (auto& t : threads) t.join();

  PrepareResult result;
  std::map<std::string, size_t> by_cdomain;  // canonical name -> target index
  std::vector<TargetRecord> targets;
  for (size_t i = 0; i < domains.size(); ++i) {
    if (resolved[i].cdomain.empty()) {
      result.rejects.push_back({domains[i], resolved[i].reason});
      continue;
    }
    std::string key = lower_name(resolved[i].cdomain);
    auto [it, fresh] = by_cdomain.try_emplace(key, targets.size());
    if (fresh) {
      TargetRecord t;
      t.cdomain = resolved[i].cdomain;
      t.qtype = qtype;
      targets.push_back(std::move(t));
    }
    targets[it->second].input_domains.push_back(domains[i]);
  }

  // NS discovery per canonical name, walking up the labels to the zone cut.
  std::atomic<size_t> next_t{0};
  std::mutex reject_mu;
  std::vector<char> keep(targets.size(), 0);
  auto discover = [&]() {
    while (true) {
      size_t i = next_t.fetch_add(1);
      if (i >= targets.size()) return;
      TargetRecord& t = targets[i];
      try {
        std::string zone = t.cdomain;
        std::set<std::string> ns_names;
        while (!zone.empty()) {
          auto resp = do_query(zone, kTypeNS, resolver, policy);
          for (const auto& rr : resp.answers)
            if (rr.type == kTypeNS && dns_name_equal(rr.name, zone))
              ns_names.insert(name_to_string(rr.rdata));
          if (!ns_names.empty()) break;
          zone = strip_leftmost_label(zone);
        }
        if (ns_names.empty()) throw ResolutionError("no NS records found for " + t.cdomain);
        std::set<std::string> ips;
        for (const auto& ns : ns_names) {
          t.ns_names.push_back(ns);
          for (uint16_t addr_type : {kTypeA, kTypeAAAA}) {
            ResponseSummary resp;
            try {
              resp = do_query(ns, addr_type, resolver, policy);
            } catch (const ResolutionError&) {
              continue;  // the other family may still resolve
            }
            for (const auto& rr : resp.answers)
              if (rr.type == addr_type) ips.insert(rdata_to_string(rr.type, rr.rdata));
          }
        }
        if (ips.empty())
          throw ResolutionError("no addresses for nameservers of " + t.cdomain);
        t.ns_ips.assign(ips.begin(), ips.end());
        keep[i] = 1;
      } catch (const std::runtime_error& e) {
        std::lock_guard<std::mutex> lock(reject_mu);
        for (const auto& d : t.input_domains) result.rejects.push_back({d, e.what()});
      }
    }
  };
  threads.clear();
  for (int t = 0; t < nthreads; ++t) threads.emplace_back(discover);
  for (auto& t : threads) t.join();

  for (size_t i = 0; i < targets.size(); ++i)
    if (keep[i]) result.targets.push_back(std::move(targets[i]));
  return result;
}

std::string target_record_to_jsonl(const TargetRecord& t) {
  json j;
  j["qname"] = t.cdomain;
  j["qtype"] = qtype_to_string(t.qtype);
  j["ns"] = t.ns_ips;
  j["ns_names"] = t.ns_names;
  j["inputs"] = t.input_domains;
  return j.dump();
}

std::string reject_to_jsonl(const RejectRecord& r) {
  json j;
  j["domain"] = r.domain;
  j["reason"] = r.reason;
  return j.dump();
}

std::vector<std::string> load_domain_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open domain list: " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto begin = line.find_first_not_of(" \t\r");
    if (begin == std::string::npos) continue;
    auto end = line.find_last_not_of(" \t\r");
    out.push_back(line.substr(begin, end - begin + 1));
  }
  return out;
}

}  // namespace ecscan
