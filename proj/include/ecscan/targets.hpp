#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecscan/scanner.hpp"
#include "ecscan/transport.hpp"

namespace ecscan {

struct ChainTooDeepError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ChainLoopError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ResolutionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A deduplicated scan target: the canonical name a group of input domains
// resolves to, plus the authoritative nameservers of that name.
struct TargetRecord {
  std::vector<std::string> input_domains;
  std::string cdomain;
  uint16_t qtype = kTypeA;
  std::vector<std::string> ns_names;
  std::vector<std::string> ns_ips;
};

struct RejectRecord {
  std::string domain;
  std::string reason;
};

struct PrepareResult {
  std::vector<TargetRecord> targets;
  std::vector<RejectRecord> rejects;
};

// Follows CNAME links up to max_depth and returns the final name.
std::string resolve_chain(const std::string& domain, const IpPort& resolver,
                          const ExchangePolicy& policy, int max_depth = 16);

// Resolves every input domain to its canonical name, groups duplicates,
// discovers the NS set of each canonical name (walking up labels to the
// zone cut) and resolves nameserver addresses. Per-domain failures land in
// rejects; output order follows first appearance in the input.
PrepareResult prepare_targets(std::span<const std::string> domains, const IpPort& resolver,
                              const ExchangePolicy& policy, uint16_t qtype = kTypeA,
                              int parallelism = 8);

std::string target_record_to_jsonl(const TargetRecord& t);
std::string reject_to_jsonl(const RejectRecord& r);

std::vector<std::string> load_domain_list(const std::string& path);

}  // namespace ecscan
