#include "ecscan/simns.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace ecscan {

namespace {

using nlohmann::json;

uint16_t type_from_text(const json& v) {
  if (v.is_number()) return v.get<uint16_t>();
  std::string s = v.get<std::string>();
  if (s == "A") return kTypeA;
  if (s == "AAAA") return kTypeAAAA;
  if (s == "CNAME") return kTypeCNAME;
  if (s == "NS") return kTypeNS;
  if (s == "PTR") return kTypePTR;
  if (s == "TXT") return kTypeTXT;
  throw std::runtime_error("unknown record type: " + s);
}

ScopePolicy scope_from_json(const json& v) {
  if (v.is_string()) {
    std::string s = v.get<std::string>();
    if (s == "echo_source") return ScopePolicy::echo_source();
    if (s == "rule_length") return ScopePolicy::rule_length();
    if (s == "zero_always") return ScopePolicy::zero_always();
    if (s == "none") return ScopePolicy::none();
    throw std::runtime_error("unknown scope policy: " + s);
  }
  if (v.contains("fixed")) return ScopePolicy::fixed(v["fixed"].get<int>());
  if (v.contains("deeper")) return ScopePolicy::deeper(v["deeper"].get<int>());
  throw std::runtime_error("unknown scope policy object");
}

std::vector<ZoneAnswer> answers_from_json(const json& v) {
  std::vector<ZoneAnswer> out;
  for (const auto& a : v) {
    ZoneAnswer za;
    za.type = type_from_text(a.at("type"));
    za.ttl = a.value("ttl", 60u);
    za.rdata = a.at("rdata").get<std::string>();
    out.push_back(std::move(za));
  }
  return out;
}

bool qname_matches(const std::string& pattern, const std::string& qname) {
  if (pattern.size() > 2 && pattern[0] == '*' && pattern[1] == '.') {
    std::string suffix = pattern.substr(2);
    std::string name = qname;
    if (!name.empty() && name.back() == '.') name.pop_back();
    if (name.size() <= suffix.size()) return false;
    return dns_name_equal(name.substr(name.size() - suffix.size()), suffix) &&
           name[name.size() - suffix.size() - 1] == '.';
  }
  return dns_name_equal(pattern, qname);
}

std::optional<uint8_t> scope_for(const ScopePolicy& policy, const EcsOption& ecs,
                                 std::optional<int> rule_len) {
  int width = family_width(ecs.family);
  switch (policy.kind) {
    case ScopePolicy::Kind::fixed:
      return static_cast<uint8_t>(std::min(policy.value, width));
    case ScopePolicy::Kind::echo_source:
      return ecs.source_len;
    case ScopePolicy::Kind::rule_length:
      return static_cast<uint8_t>(rule_len.value_or(0));
    case ScopePolicy::Kind::zero_always:
      return 0;
    case ScopePolicy::Kind::deeper_than_source:
      return static_cast<uint8_t>(std::min(ecs.source_len + policy.value, width));
    case ScopePolicy::Kind::none:
      return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace

SimZone SimZone::from_json_text(const std::string& text) {
  json j = json::parse(text);
  SimZone zone;
  zone.truncate_udp = j.value("truncate_udp", false);
  zone.drop_probability = j.value("drop_probability", 0.0);
  zone.rng_seed = j.value("rng_seed", 1ull);
  if (j.contains("nsid")) zone.nsid = j["nsid"].get<std::string>();
  for (const auto& z : j.at("zones")) {
    ZoneEntry entry;
    entry.qname = z.at("qname").get<std::string>();
    if (z.contains("rules")) {
      for (const auto& r : z["rules"]) {
        ZoneRule rule;
        auto p = Prefix::parse(r.at("prefix").get<std::string>());
        if (!p) throw std::runtime_error("bad rule prefix in zone " + entry.qname);
        rule.client_prefix = *p;
        rule.answers = answers_from_json(r.at("answers"));
        rule.scope = scope_from_json(r.at("scope"));
        entry.rules.push_back(std::move(rule));
      }
    }
    if (z.contains("default")) {
      const auto& d = z["default"];
      if (d.contains("answers")) entry.fallback.answers = answers_from_json(d["answers"]);
      if (d.contains("scope")) entry.fallback.scope = scope_from_json(d["scope"]);
    }
    zone.zones.push_back(std::move(entry));
  }
  return zone;
}

SimZone SimZone::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open zone file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

LookupResult zone_lookup(const SimZone& zone, const std::string& qname, uint16_t qtype,
                         const std::optional<EcsOption>& ecs) {
  const ZoneEntry* entry = nullptr;
  for (const auto& z : zone.zones) {
    if (qname_matches(z.qname, qname)) {
      entry = &z;
      break;
    }
  }
  if (!entry) return LookupResult{{}, std::nullopt, kRcodeNXDomain};

  const std::vector<ZoneAnswer>* answers = &entry->fallback.answers;
  const ScopePolicy* policy = &entry->fallback.scope;
  std::optional<int> rule_len;
  if (ecs) {
    const ZoneRule* best = nullptr;
    for (const auto& rule : entry->rules) {
      if (rule.client_prefix.family != ecs->family) continue;
      if (!rule.client_prefix.contains_addr(ecs->address)) continue;
      if (!best || rule.client_prefix.length > best->client_prefix.length) best = &rule;
    }
    if (best) {
      answers = &best->answers;
      policy = &best->scope;
      rule_len = best->client_prefix.length;
    }
  }

  LookupResult result;
  // CNAMEs shadow other record types, as in real resolution.
  bool has_cname = false;
  for (const auto& a : *answers)
    if (a.type == kTypeCNAME) has_cname = true;
  for (const auto& a : *answers) {
    if (has_cname && qtype != kTypeCNAME) {
      if (a.type == kTypeCNAME) result.answers.push_back(a);
    } else if (a.type == qtype) {
      result.answers.push_back(a);
    }
  }
  if (ecs) result.scope = scope_for(*policy, *ecs, rule_len);
  return result;
}

std::vector<uint8_t> zone_answer_rdata(const ZoneAnswer& a) {
  switch (a.type) {
    case kTypeA: {
      auto bits = addr_parse(Family::v4, a.rdata);
      if (!bits) throw std::runtime_error("bad A rdata: " + a.rdata);
      return addr_to_bytes(Family::v4, *bits);
    }
    case kTypeAAAA: {
      auto bits = addr_parse(Family::v6, a.rdata);
      if (!bits) throw std::runtime_error("bad AAAA rdata: " + a.rdata);
      return addr_to_bytes(Family::v6, *bits);
    }
    case kTypeCNAME:
    case kTypeNS:
    case kTypePTR:
      return encode_name(a.rdata);
    case kTypeTXT: {
      std::vector<uint8_t> out;
      out.push_back(static_cast<uint8_t>(std::min<size_t>(a.rdata.size(), 255)));
      out.insert(out.end(), a.rdata.begin(),
                 a.rdata.begin() + std::min<size_t>(a.rdata.size(), 255));
      return out;
    }
    default:
      return std::vector<uint8_t>(a.rdata.begin(), a.rdata.end());
  }
}

SimServer::SimServer(SimZone zone, IpPort bind_addr)
    : zone_(std::move(zone)), bind_addr_(bind_addr), rng_(zone_.rng_seed) {}

SimServer::~SimServer() { stop(); }

IpPort SimServer::endpoint() const {
  IpPort ep = bind_addr_;
  ep.port = port_;
  return ep;
}

void SimServer::start() {
  int af = bind_addr_.family == Family::v4 ? AF_INET : AF_INET6;
  auto bytes = addr_to_bytes(bind_addr_.family, bind_addr_.addr);
  sockaddr_storage ss{};
  socklen_t slen;
  if (af == AF_INET) {
    auto* a4 = reinterpret_cast<sockaddr_in*>(&ss);
    a4->sin_family = AF_INET;
    a4->sin_port = htons(bind_addr_.port);
    std::memcpy(&a4->sin_addr, bytes.data(), 4);
    slen = sizeof(sockaddr_in);
  } else {
    auto* a6 = reinterpret_cast<sockaddr_in6*>(&ss);
    a6->sin6_family = AF_INET6;
    a6->sin6_port = htons(bind_addr_.port);
    std::memcpy(&a6->sin6_addr, bytes.data(), 16);
    slen = sizeof(sockaddr_in6);
  }

  udp_fd_ = ::socket(af, SOCK_DGRAM | SOCK_CLOEXEC, 0);
  if (udp_fd_ < 0) throw BindError("udp socket: " + std::string(strerror(errno)));
  if (::bind(udp_fd_, reinterpret_cast<sockaddr*>(&ss), slen) < 0) {
    ::close(udp_fd_);
    udp_fd_ = -1;
    throw BindError("udp bind " + bind_addr_.to_string() + ": " + strerror(errno));
  }
  sockaddr_storage bound{};
  socklen_t blen = sizeof(bound);
  getsockname(udp_fd_, reinterpret_cast<sockaddr*>(&bound), &blen);
  port_ = ntohs(af == AF_INET ? reinterpret_cast<sockaddr_in*>(&bound)->sin_port
                              : reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port);

  // TCP listener on the same port as the UDP socket.
  if (af == AF_INET)
    reinterpret_cast<sockaddr_in*>(&ss)->sin_port = htons(port_);
  else
    reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port = htons(port_);
  tcp_fd_ = ::socket(af, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (tcp_fd_ < 0) throw BindError("tcp socket: " + std::string(strerror(errno)));
  int one = 1;
  setsockopt(tcp_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(tcp_fd_, reinterpret_cast<sockaddr*>(&ss), slen) < 0 ||
      ::listen(tcp_fd_, 64) < 0) {
    ::close(udp_fd_);
    ::close(tcp_fd_);
    udp_fd_ = tcp_fd_ = -1;
    throw BindError("tcp bind " + bind_addr_.to_string() + ": " + strerror(errno));
  }

  running_.store(true);
  udp_thread_ = std::thread(&SimServer::udp_loop, this);
  tcp_thread_ = std::thread(&SimServer::tcp_loop, this);
}

void SimServer::stop() {
  if (!running_.exchange(false)) return;
  if (udp_thread_.joinable()) udp_thread_.join();
  if (tcp_thread_.joinable()) tcp_thread_.join();
  std::vector<std::thread> clients;
  {
    std::lock_guard<std::mutex> lock(clients_mu_);
    clients.swap(clients_);
  }
  for (auto& t : clients)
    if (t.joinable()) t.join();
  if (udp_fd_ >= 0) ::close(udp_fd_);
  if (tcp_fd_ >= 0) ::close(tcp_fd_);
  udp_fd_ = tcp_fd_ = -1;
}

bool SimServer::should_drop() {
  if (zone_.drop_probability <= 0.0) return false;
  std::lock_guard<std::mutex> lock(rng_mu_);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  return d(rng_) < zone_.drop_probability;
}

std::optional<std::vector<uint8_t>> SimServer::make_reply(std::span<const uint8_t> msg,
                                                          bool udp) {
  QueryView q;
  try {
    q = parse_query(msg);
  } catch (const WireError&) {
    return std::nullopt;  // not a usable query; stay silent
  }
  if (should_drop()) {
    dropped_.fetch_add(1);
    return std::nullopt;
  }
  auto looked = zone_lookup(zone_, q.qname, q.qtype, q.ecs);
  ResponseSpec spec;
  spec.rcode = looked.rcode;
  spec.ecs_scope = looked.scope;
  if (zone_.nsid && q.request_nsid)
    spec.nsid = std::vector<uint8_t>(zone_.nsid->begin(), zone_.nsid->end());
  if (udp && zone_.truncate_udp) {
    spec.truncated = true;  // empty answer section, client should retry over TCP
  } else {
    for (const auto& a : looked.answers)
      spec.answers.push_back(ResourceRecord{q.qname, a.type, a.ttl, zone_answer_rdata(a)});
  }
  return build_response(q, spec);
}

void SimServer::udp_loop() {
  uint8_t buf[65535];
  while (running_.load()) {
    pollfd pfd{udp_fd_, POLLIN, 0};
    int n = ::poll(&pfd, 1, 100);
    if (n <= 0) continue;
    sockaddr_storage peer{};
    socklen_t plen = sizeof(peer);
    ssize_t got = ::recvfrom(udp_fd_, buf, sizeof(buf), 0,
                             reinterpret_cast<sockaddr*>(&peer), &plen);
    if (got <= 0) continue;
    auto reply = make_reply(std::span<const uint8_t>(buf, got), true);
    if (!reply) continue;
    ::sendto(udp_fd_, reply->data(), reply->size(), 0,
             reinterpret_cast<sockaddr*>(&peer), plen);
    udp_served_.fetch_add(1);
  }
}

void SimServer::tcp_loop() {
  while (running_.load()) {
    pollfd pfd{tcp_fd_, POLLIN, 0};
    int n = ::poll(&pfd, 1, 100);
    if (n <= 0) continue;
    int client = ::accept(tcp_fd_, nullptr, nullptr);
    if (client < 0) continue;
    std::lock_guard<std::mutex> lock(clients_mu_);
    clients_.emplace_back(&SimServer::handle_tcp_client, this, client);
  }
}

void SimServer::handle_tcp_client(int fd) {
  uint8_t lenbuf[2];
  while (running_.load()) {
    pollfd pfd{fd, POLLIN, 0};
    if (::poll(&pfd, 1, 2000) <= 0) break;
    ssize_t got = ::recv(fd, lenbuf, 2, MSG_WAITALL);
    if (got != 2) break;
    size_t mlen = static_cast<size_t>(lenbuf[0]) << 8 | lenbuf[1];
    std::vector<uint8_t> msg(mlen);
    if (::recv(fd, msg.data(), mlen, MSG_WAITALL) != static_cast<ssize_t>(mlen)) break;
    auto reply = make_reply(msg, false);
    if (!reply) break;
    uint8_t rlen[2] = {static_cast<uint8_t>(reply->size() >> 8),
                       static_cast<uint8_t>(reply->size())};
    if (::send(fd, rlen, 2, MSG_NOSIGNAL) != 2) break;
    if (::send(fd, reply->data(), reply->size(), MSG_NOSIGNAL) !=
        static_cast<ssize_t>(reply->size()))
      break;
    tcp_served_.fetch_add(1);
  }
  ::close(fd);
}

}  // namespace ecscan
