#include "ecscan/scanner.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace ecscan {

namespace {

using nlohmann::json;

double now_ts() {
  return std::chrono::duration<double>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

struct Dispatcher {
  const ScanJob& job;
  RateLimiter limiter;
  std::atomic<uint64_t> rr_counter{0};
  std::atomic<uint64_t> dispatched{0};
  std::atomic<uint64_t> responses{0};
  std::atomic<uint64_t> errors{0};
  std::atomic<uint64_t> fallbacks{0};

  explicit Dispatcher(const ScanJob& j) : job(j), limiter(j.policy) {}

  const IpPort& pick_ns(const ScanTarget& t) {
    size_t i = job.pin_ns ? *job.pin_ns : rr_counter.fetch_add(1);
    return t.ns[i % t.ns.size()];
  }

  ScanRecord query_one(const ScanTarget& target, const Prefix& probe, RecordSink& sink) {
    const IpPort& ns = pick_ns(target);
    QuerySpec spec;
    spec.qname = target.qname;
    spec.qtype = target.qtype;
    spec.ecs = EcsOption{probe.family, probe.bits, probe.length, 0};
    spec.request_nsid = job.request_nsid;
    spec.recursion_desired = job.recursion_desired;
    auto msg = build_query(spec);

    ScanRecord rec;
    rec.ts = now_ts();
    rec.qname = target.qname;
    rec.qtype = target.qtype;
    rec.ns_ip = ns.addr_string();
    rec.family = probe.family;
    rec.ecs_addr = probe.bits;
    rec.source_len = probe.length;
    dispatched.fetch_add(1);
    try {
      auto res = exchange(ns, msg, job.policy, &limiter);
      rec.rcode = res.response.rcode;
      if (res.response.ecs_echo) rec.scope_len = res.response.ecs_echo->scope_len;
      for (const auto& rr : res.response.answers)
        rec.answers.push_back(RecordAnswer{rr.type, rr.ttl, rdata_to_string(rr.type, rr.rdata)});
      if (res.response.nsid) rec.nsid_hex = rdata_to_string(0, *res.response.nsid);
      rec.rtt_ms = res.rtt_ms;
      rec.attempt = res.attempt;
      if (res.via_stream) fallbacks.fetch_add(1);
      responses.fetch_add(1);
    } catch (const TimeoutError&) {
      rec.error = "timeout";
      rec.attempt = job.policy.retries + 1;
      errors.fetch_add(1);
    } catch (const NetworkUnreachableError&) {
      rec.error = "unreachable";
      errors.fetch_add(1);
    } catch (const TransportError&) {
      rec.error = "transport";
      errors.fetch_add(1);
    }
    sink.write(rec);
    return rec;
  }

  ScanStats stats() const {
    return ScanStats{dispatched.load(), responses.load(), errors.load(), fallbacks.load()};
  }
};

void check_targets(const ScanJob& job) {
  if (job.targets.empty()) throw std::invalid_argument("no scan targets");
  for (const auto& t : job.targets)
    if (t.ns.empty() && job.mode != ScanMode::explore)
      throw std::invalid_argument("target without nameserver addresses: " + t.qname);
}

// Shared sweep for full_v4 and overlap_census: the census never applies
// returned scopes, which disables skipping.
ScanStats sweep_v4(const ScanJob& job, RecordSink& sink, bool response_aware) {
  check_targets(job);
  if (job.seeds.empty() && job.unrouted_seeds.empty())
    throw std::invalid_argument("IPv4 sweep requires seed prefixes");
  Dispatcher dispatcher(job);
  int source_len = job.source_len.value_or(24);

  for (const auto& target : job.targets) {
    PrefixTrie trie = PrefixTrie::from_seed_sets(job.seeds, job.unrouted_seeds);
    if (trie.family() != Family::v4)
      throw std::invalid_argument("IPv4 sweep with non-IPv4 seeds");
    // Effective scopes never reach above the floor, so partitions at the
    // floor depth are never covered from outside; workers own them outright.
    int part_depth = std::clamp(job.scope_floor, 0, source_len);
    auto partitions = trie.partitions(part_depth);
    std::atomic<size_t> next_part{0};

    auto worker = [&]() {
      while (true) {
        size_t i = next_part.fetch_add(1);
        if (i >= partitions.size()) return;
        const Prefix& part = partitions[i];
        AddrBits cursor = part.bits;
        while (auto cand = trie.next_uncovered(cursor, source_len)) {
          if (!part.contains(*cand)) break;
          if (!job.budgets.empty() && !trie.budget_ok(*cand, job.budgets)) {
            cursor = cand->bits;
            if (!advance_grid(cursor, Family::v4, source_len)) break;
            continue;
          }
          trie.record_query(*cand);
          ScanRecord rec = dispatcher.query_one(target, *cand, sink);
          int eff = source_len;
          if (response_aware && !rec.error) {
            std::optional<int> scope;
            if (rec.scope_len) scope = static_cast<int>(*rec.scope_len);
            eff = effective_scope(source_len, scope, job.scope_floor);
          }
          trie.apply_scope(*cand, eff);
          cursor = cand->bits;
          if (!advance_grid(cursor, Family::v4, source_len)) break;
        }
      }
    };

    int nworkers = std::max(1, job.workers);
    std::vector<std::thread> threads;
    threads.reserve(nworkers);
    for (int w = 0; w < nworkers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  return dispatcher.stats();
}

}  // namespace

ScanStats run_full_v4(const ScanJob& job, RecordSink& sink) {
  return sweep_v4(job, sink, true);
}

ScanStats run_overlap_census(const ScanJob& job, RecordSink& sink) {
  return sweep_v4(job, sink, false);
}

ScanStats run_seeded_v6(const ScanJob& job, RecordSink& sink) {
  check_targets(job);
  if (job.seeds.empty() && job.unrouted_seeds.empty())
    throw std::invalid_argument("seeded scan requires seed prefixes");
  Dispatcher dispatcher(job);
  int source_len = job.source_len.value_or(48);
  BudgetTable budgets = job.budgets.empty() ? BudgetTable::ipv6_defaults() : job.budgets;

  for (const auto& target : job.targets) {
    PrefixTrie trie = PrefixTrie::from_seed_sets(job.seeds, job.unrouted_seeds);
    if (trie.family() != Family::v6)
      throw std::invalid_argument("seeded IPv6 scan with non-IPv6 seeds");

    int nworkers = std::max(1, std::min<int>(job.workers, trie.seed_count()));
    std::vector<std::vector<size_t>> owned(nworkers);
    for (size_t i = 0; i < trie.seed_count(); ++i) owned[i % nworkers].push_back(i);

    auto worker = [&](int w) {
      std::seed_seq seq{job.rng_seed, static_cast<uint64_t>(w)};
      std::mt19937_64 rng(seq);
      while (auto cand = trie.random_eligible(rng, source_len, budgets, job.seed_once,
                                              owned[w])) {
        trie.record_query(*cand);
        ScanRecord rec = dispatcher.query_one(target, *cand, sink);
        int eff = source_len;
        if (!rec.error) {
          std::optional<int> scope;
          if (rec.scope_len) scope = static_cast<int>(*rec.scope_len);
          eff = effective_scope(source_len, scope, job.scope_floor);
        }
        trie.apply_scope(*cand, eff);
      }
    };

    std::vector<std::thread> threads;
    threads.reserve(nworkers);
    for (int w = 0; w < nworkers; ++w) threads.emplace_back(worker, w);
    for (auto& t : threads) t.join();
  }
  return dispatcher.stats();
}

ScanStats run_static(const ScanJob& job, RecordSink& sink) {
  check_targets(job);
  if (job.probes.empty()) return ScanStats{};
  Dispatcher dispatcher(job);
  std::atomic<size_t> next_target{0};
  auto worker = [&]() {
    while (true) {
      size_t i = next_target.fetch_add(1);
      if (i >= job.targets.size()) return;
      for (const auto& probe : job.probes)
        dispatcher.query_one(job.targets[i], probe, sink);
    }
  };
  int nworkers = std::max(1, job.workers);
  std::vector<std::thread> threads;
  for (int w = 0; w < nworkers; ++w) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  return dispatcher.stats();
}

ScanStats run_explore(const ScanJob& job, RecordSink& sink,
                      std::vector<ExploreOutcome>& outcomes) {
  check_targets(job);
  Dispatcher dispatcher(job);
  outcomes.resize(job.targets.size());
  std::atomic<size_t> next_target{0};

  auto worker = [&]() {
    while (true) {
      size_t i = next_target.fetch_add(1);
      if (i >= job.targets.size()) return;
      const ScanTarget& target = job.targets[i];
      Family family = target.qtype == kTypeAAAA ? Family::v6 : Family::v4;
      std::vector<Prefix> probes;
      for (const auto& p : job.probes)
        if (p.family == family) probes.push_back(p);
      if (probes.empty()) probes = default_explore_probes(family);

      ExploreOutcome& outcome = outcomes[i];
      outcome.qname = target.qname;
      outcome.family = family;
      if (target.ns.empty()) {
        outcome.cls = EcsClass::unresolved;
        continue;
      }
      std::vector<ScanRecord> records;
      records.reserve(probes.size());
      for (const auto& probe : probes)
        records.push_back(dispatcher.query_one(target, probe, sink));
      outcome.cls = classify_ecs(records);
    }
  };

  int nworkers = std::max(1, job.workers);
  std::vector<std::thread> threads;
  for (int w = 0; w < nworkers; ++w) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  return dispatcher.stats();
}

ScanStats run_scan(const ScanJob& job, RecordSink& sink,
                   std::vector<ExploreOutcome>* outcomes) {
  switch (job.mode) {
    case ScanMode::full_v4:
      return run_full_v4(job, sink);
    case ScanMode::seeded_v6:
      return run_seeded_v6(job, sink);
    case ScanMode::static_list:
      return run_static(job, sink);
    case ScanMode::overlap_census:
      return run_overlap_census(job, sink);
    case ScanMode::explore: {
      std::vector<ExploreOutcome> local;
      return run_explore(job, sink, outcomes ? *outcomes : local);
    }
  }
  throw std::invalid_argument("unknown scan mode");
}

std::vector<ScanTarget> parse_target_lines(const std::string& text,
                                           const std::string& origin) {
  std::vector<ScanTarget> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
    ScanTarget t;
    t.qname = j.at("qname").get<std::string>();
    if (j.contains("qtype")) {
      if (j["qtype"].is_string()) {
        auto qt = qtype_from_string(j["qtype"].get<std::string>());
        if (!qt)
          throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": bad qtype");
        t.qtype = *qt;
      } else {
        t.qtype = j["qtype"].get<uint16_t>();
      }
    }
    if (j.contains("ns")) {
      for (const auto& ns : j["ns"]) {
        auto ip = IpPort::parse(ns.get<std::string>());
        if (!ip)
          throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                                   ": bad nameserver address " + ns.get<std::string>());
        t.ns.push_back(*ip);
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<ScanTarget> load_targets(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open target file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_target_lines(ss.str(), path);
}

std::string target_to_jsonl(const ScanTarget& t) {
  json j;
  j["qname"] = t.qname;
  j["qtype"] = qtype_to_string(t.qtype);
  json ns = json::array();
  for (const auto& ip : t.ns) ns.push_back(ip.addr_string());
  j["ns"] = ns;
  return j.dump();
}

std::vector<Prefix> default_explore_probes(Family family) {
  auto parse_all = [](std::initializer_list<const char*> cidrs) {
    std::vector<Prefix> out;
    for (const char* c : cidrs) out.push_back(*Prefix::parse(c));
    return out;
  };
  if (family == Family::v4)
    return parse_all({"108.238.84.0/24", "2.59.158.0/24", "5.200.28.0/24", "1.23.92.0/24"});
  return parse_all(
      {"2600:1700::/48", "2a00:1630::/48", "2a01:6f0:100::/48", "4000:2002::/48"});
}

}  // namespace ecscan
