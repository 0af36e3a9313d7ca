#pragma once

#include <chrono>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include "ecscan/prefix.hpp"
#include "ecscan/wire.hpp"

namespace ecscan {

struct IpPort {
  Family family = Family::v4;
  AddrBits addr{};
  uint16_t port = 53;

  // "10.0.0.1", "10.0.0.1:5353", "::1", "[::1]:5353"
  static std::optional<IpPort> parse(std::string_view text, uint16_t default_port = 53);
  std::string addr_string() const { return addr_to_string(family, addr); }
  std::string to_string() const;

  friend auto operator<=>(const IpPort&, const IpPort&) = default;
};

struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TimeoutError : TransportError {
  using TransportError::TransportError;
};
struct NetworkUnreachableError : TransportError {
  using TransportError::TransportError;
};

struct ExchangePolicy {
  int timeout_ms = 1000;
  int retries = 2;
  bool stream_fallback = true;
  double global_rate = 1000.0;   // queries/second, all nameservers combined
  double per_ns_rate = 20.0;     // queries/second per nameserver address
  int burst = 10;
};

// Token buckets, one global and one per nameserver address. acquire blocks
// until both buckets hold a token.
class RateLimiter {
 public:
  RateLimiter(double global_rate, double per_ns_rate, int burst);
  explicit RateLimiter(const ExchangePolicy& p)
      : RateLimiter(p.global_rate, p.per_ns_rate, p.burst) {}

  void acquire(const IpPort& ns);

 private:
  struct Bucket {
    double tokens;
    std::chrono::steady_clock::time_point last;
  };
  void refill(Bucket& b, double rate, std::chrono::steady_clock::time_point now) const;

  std::mutex mu_;
  Bucket global_;
  std::map<std::string, Bucket> per_ns_;
  double global_rate_;
  double per_ns_rate_;
  double burst_;
};

struct ExchangeResult {
  ResponseSummary response;
  double rtt_ms = 0;
  int attempt = 1;
  bool via_stream = false;
};

// Sends the query over UDP with a fresh random txid and source port per
// attempt, discarding responses whose txid or question do not match. On a
// truncated answer the query is reissued over TCP (RFC1035 4.2.2 framing).
// The limiter, when given, gates every transmission.
ExchangeResult exchange(const IpPort& ns, std::span<const uint8_t> query,
                        const ExchangePolicy& policy, RateLimiter* limiter = nullptr);

}  // namespace ecscan
