#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ecscan/prefix.hpp"
#include "ecscan/transport.hpp"
#include "ecscan/wire.hpp"

namespace ecscan {

struct BindError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Presentation-form answer record: dotted/colon form for A/AAAA, a domain
// name for CNAME/NS/PTR, text for TXT.
struct ZoneAnswer {
  uint16_t type = kTypeA;
  uint32_t ttl = 60;
  std::string rdata;

  friend bool operator==(const ZoneAnswer&, const ZoneAnswer&) = default;
};

struct ScopePolicy {
  enum class Kind { fixed, echo_source, rule_length, zero_always, deeper_than_source, none };
  Kind kind = Kind::echo_source;
  int value = 0;  // fixed length or deeper delta

  static ScopePolicy fixed(int len) { return {Kind::fixed, len}; }
  static ScopePolicy echo_source() { return {Kind::echo_source, 0}; }
  static ScopePolicy rule_length() { return {Kind::rule_length, 0}; }
  static ScopePolicy zero_always() { return {Kind::zero_always, 0}; }
  static ScopePolicy deeper(int delta) { return {Kind::deeper_than_source, delta}; }
  static ScopePolicy none() { return {Kind::none, 0}; }
};

struct ZoneRule {
  Prefix client_prefix;
  std::vector<ZoneAnswer> answers;
  ScopePolicy scope;
};

struct ZoneDefault {
  std::vector<ZoneAnswer> answers;
  ScopePolicy scope = ScopePolicy::echo_source();
};

// One qname pattern (exact name or "*.suffix") with its client-prefix rules.
struct ZoneEntry {
  std::string qname;
  std::vector<ZoneRule> rules;
  ZoneDefault fallback;
};

struct SimZone {
  std::vector<ZoneEntry> zones;
  bool truncate_udp = false;
  double drop_probability = 0.0;
  uint64_t rng_seed = 1;
  std::optional<std::string> nsid;

  static SimZone from_json_text(const std::string& text);
  static SimZone from_file(const std::string& path);
};

struct LookupResult {
  std::vector<ZoneAnswer> answers;
  std::optional<uint8_t> scope;  // echoed ECS scope; nullopt when not echoed
  int rcode = kRcodeNoError;
};

// Deterministic rule selection: longest matching client_prefix against the
// query's ECS address, the entry's default otherwise. Answers are filtered
// to the query type, with CNAMEs taking precedence as in real resolution.
LookupResult zone_lookup(const SimZone& zone, const std::string& qname, uint16_t qtype,
                         const std::optional<EcsOption>& ecs);

std::vector<uint8_t> zone_answer_rdata(const ZoneAnswer& a);

// UDP+TCP service answering per zone_lookup. Bind to port 0 for an
// ephemeral port (see port()).
class SimServer {
 public:
  SimServer(SimZone zone, IpPort bind_addr);
  ~SimServer();
  SimServer(const SimServer&) = delete;
  SimServer& operator=(const SimServer&) = delete;

  void start();
  void stop();
  uint16_t port() const { return port_; }
  IpPort endpoint() const;

  uint64_t udp_served() const { return udp_served_.load(); }
  uint64_t tcp_served() const { return tcp_served_.load(); }
  uint64_t dropped() const { return dropped_.load(); }

 private:
  void udp_loop();
  void tcp_loop();
  void handle_tcp_client(int fd);
  std::optional<std::vector<uint8_t>> make_reply(std::span<const uint8_t> msg, bool udp);
  bool should_drop();

  SimZone zone_;
  IpPort bind_addr_;
  uint16_t port_ = 0;
  int udp_fd_ = -1;
  int tcp_fd_ = -1;
  std::atomic<bool> running_{false};
  std::thread udp_thread_;
  std::thread tcp_thread_;
  std::mutex clients_mu_;
  std::vector<std::thread> clients_;
  std::mutex rng_mu_;
  std::mt19937_64 rng_;
  std::atomic<uint64_t> udp_served_{0};
  std::atomic<uint64_t> tcp_served_{0};
  std::atomic<uint64_t> dropped_{0};
};

}  // namespace ecscan
