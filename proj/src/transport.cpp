#include "ecscan/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <random>
#include <thread>

namespace ecscan {

namespace {

using Clock = std::chrono::steady_clock;

uint16_t random_txid() {
  thread_local std::mt19937 rng{std::random_device{}()};
  return static_cast<uint16_t>(rng());
}

struct Fd {
  int fd = -1;
  Fd() = default;
  explicit Fd(int f) : fd(f) {}
  ~Fd() {
    if (fd >= 0) ::close(fd);
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
};

struct SockAddr {
  sockaddr_storage ss{};
  socklen_t len = 0;
};

SockAddr to_sockaddr(const IpPort& ip) {
  SockAddr sa;
  auto bytes = addr_to_bytes(ip.family, ip.addr);
  if (ip.family == Family::v4) {
    auto* a4 = reinterpret_cast<sockaddr_in*>(&sa.ss);
    a4->sin_family = AF_INET;
    a4->sin_port = htons(ip.port);
    std::memcpy(&a4->sin_addr, bytes.data(), 4);
    sa.len = sizeof(sockaddr_in);
  } else {
    auto* a6 = reinterpret_cast<sockaddr_in6*>(&sa.ss);
    a6->sin6_family = AF_INET6;
    a6->sin6_port = htons(ip.port);
    std::memcpy(&a6->sin6_addr, bytes.data(), 16);
    sa.len = sizeof(sockaddr_in6);
  }
  return sa;
}

int remaining_ms(Clock::time_point deadline) {
  auto left =
      std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
  return static_cast<int>(left.count());
}

bool question_matches(const ResponseSummary& rs, const QueryView& q) {
  return rs.qtype == q.qtype && dns_name_equal(rs.qname, q.qname);
}

// One UDP attempt; returns nullopt on timeout.
std::optional<ResponseSummary> udp_attempt(const IpPort& ns, std::span<const uint8_t> msg,
                                           uint16_t txid, const QueryView& question,
                                           int timeout_ms) {
  Fd sock(::socket(ns.family == Family::v4 ? AF_INET : AF_INET6,
                   SOCK_DGRAM | SOCK_CLOEXEC, 0));
  if (sock.fd < 0) throw TransportError("socket: " + std::string(strerror(errno)));
  auto sa = to_sockaddr(ns);
  if (::connect(sock.fd, reinterpret_cast<sockaddr*>(&sa.ss), sa.len) < 0)
    throw TransportError("connect: " + std::string(strerror(errno)));
  if (::send(sock.fd, msg.data(), msg.size(), 0) < 0) {
    if (errno == ENETUNREACH || errno == EHOSTUNREACH)
      throw NetworkUnreachableError("network unreachable: " + ns.to_string());
    throw TransportError("send: " + std::string(strerror(errno)));
  }
  auto deadline = Clock::now() + std::chrono::milliseconds(timeout_ms);
  uint8_t buf[65535];
  while (true) {
    int left = remaining_ms(deadline);
    if (left <= 0) return std::nullopt;
    pollfd pfd{sock.fd, POLLIN, 0};
    int n = ::poll(&pfd, 1, left);
    if (n == 0) return std::nullopt;
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError("poll: " + std::string(strerror(errno)));
    }
    ssize_t got = ::recv(sock.fd, buf, sizeof(buf), 0);
    if (got < 0) {
      if (errno == ECONNREFUSED || errno == EAGAIN || errno == EINTR) continue;
      if (errno == ENETUNREACH || errno == EHOSTUNREACH)
        throw NetworkUnreachableError("network unreachable: " + ns.to_string());
      throw TransportError("recv: " + std::string(strerror(errno)));
    }
    try {
      auto rs = parse_response(std::span<const uint8_t>(buf, got));
      if (rs.txid != txid || !question_matches(rs, question)) continue;  // spoofed/stale
      return rs;
    } catch (const WireError&) {
      continue;  // garbage datagram
    }
  }
}

bool send_all(int fd, const uint8_t* data, size_t n, Clock::time_point deadline) {
  size_t off = 0;
  while (off < n) {
    int left = remaining_ms(deadline);
    if (left <= 0) return false;
    pollfd pfd{fd, POLLOUT, 0};
    if (::poll(&pfd, 1, left) <= 0) return false;
    ssize_t w = ::send(fd, data + off, n - off, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      return false;
    }
    off += static_cast<size_t>(w);
  }
  return true;
}

bool recv_all(int fd, uint8_t* data, size_t n, Clock::time_point deadline) {
  size_t off = 0;
  while (off < n) {
    int left = remaining_ms(deadline);
    if (left <= 0) return false;
    pollfd pfd{fd, POLLIN, 0};
    if (::poll(&pfd, 1, left) <= 0) return false;
    ssize_t r = ::recv(fd, data + off, n - off, 0);
    if (r == 0) return false;
    if (r < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      return false;
    }
    off += static_cast<size_t>(r);
  }
  return true;
}

std::optional<ResponseSummary> tcp_attempt(const IpPort& ns, std::span<const uint8_t> msg,
                                           uint16_t txid, const QueryView& question,
                                           int timeout_ms) {
  Fd sock(::socket(ns.family == Family::v4 ? AF_INET : AF_INET6,
                   SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0));
  if (sock.fd < 0) throw TransportError("socket: " + std::string(strerror(errno)));
  auto deadline = Clock::now() + std::chrono::milliseconds(timeout_ms);
  auto sa = to_sockaddr(ns);
  if (::connect(sock.fd, reinterpret_cast<sockaddr*>(&sa.ss), sa.len) < 0) {
    if (errno != EINPROGRESS) {
      if (errno == ENETUNREACH || errno == EHOSTUNREACH)
        throw NetworkUnreachableError("network unreachable: " + ns.to_string());
      return std::nullopt;
    }
    pollfd pfd{sock.fd, POLLOUT, 0};
    int left = remaining_ms(deadline);
    if (left <= 0 || ::poll(&pfd, 1, left) <= 0) return std::nullopt;
    int err = 0;
    socklen_t elen = sizeof(err);
    getsockopt(sock.fd, SOL_SOCKET, SO_ERROR, &err, &elen);
    if (err != 0) return std::nullopt;
  }
  uint8_t lenbuf[2] = {static_cast<uint8_t>(msg.size() >> 8),
                       static_cast<uint8_t>(msg.size())};
  if (!send_all(sock.fd, lenbuf, 2, deadline)) return std::nullopt;
  if (!send_all(sock.fd, msg.data(), msg.size(), deadline)) return std::nullopt;
  while (true) {
    if (!recv_all(sock.fd, lenbuf, 2, deadline)) return std::nullopt;
    size_t rlen = static_cast<size_t>(lenbuf[0]) << 8 | lenbuf[1];
    std::vector<uint8_t> buf(rlen);
    if (!recv_all(sock.fd, buf.data(), rlen, deadline)) return std::nullopt;
    try {
      auto rs = parse_response(buf);
      if (rs.txid != txid || !question_matches(rs, question)) continue;
      return rs;
    } catch (const WireError&) {
      return std::nullopt;
    }
  }
}

}  // namespace

std::optional<IpPort> IpPort::parse(std::string_view text, uint16_t default_port) {
  std::string addr;
  uint16_t port = default_port;
  if (!text.empty() && text.front() == '[') {
    auto close = text.find(']');
    if (close == std::string_view::npos) return std::nullopt;
    addr.assign(text.substr(1, close - 1));
    if (close + 1 < text.size()) {
      if (text[close + 1] != ':') return std::nullopt;
      auto p = text.substr(close + 2);
      int v = 0;
      for (char c : p) {
        if (c < '0' || c > '9') return std::nullopt;
        v = v * 10 + (c - '0');
        if (v > 65535) return std::nullopt;
      }
      port = static_cast<uint16_t>(v);
    }
  } else {
    auto colon = text.find(':');
    if (colon != std::string_view::npos && text.find(':', colon + 1) == std::string_view::npos) {
      // exactly one colon: v4 with port
      addr.assign(text.substr(0, colon));
      int v = 0;
      for (char c : text.substr(colon + 1)) {
        if (c < '0' || c > '9') return std::nullopt;
        v = v * 10 + (c - '0');
        if (v > 65535) return std::nullopt;
      }
      port = static_cast<uint16_t>(v);
    } else {
      addr.assign(text);
    }
  }
  Family fam = addr.find(':') != std::string::npos ? Family::v6 : Family::v4;
  auto bits = addr_parse(fam, addr);
  if (!bits) return std::nullopt;
  return IpPort{fam, *bits, port};
}

std::string IpPort::to_string() const {
  if (family == Family::v6) return "[" + addr_string() + "]:" + std::to_string(port);
  return addr_string() + ":" + std::to_string(port);
}

RateLimiter::RateLimiter(double global_rate, double per_ns_rate, int burst)
    : global_rate_(global_rate), per_ns_rate_(per_ns_rate), burst_(std::max(1, burst)) {
  global_ = {burst_, Clock::now()};
}

void RateLimiter::refill(Bucket& b, double rate, Clock::time_point now) const {
  double dt = std::chrono::duration<double>(now - b.last).count();
  b.tokens = std::min(burst_, b.tokens + dt * rate);
  b.last = now;
}

void RateLimiter::acquire(const IpPort& ns) {
  const std::string key = ns.addr_string();
  while (true) {
    double wait_s = 0;
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto now = Clock::now();
      refill(global_, global_rate_, now);
      auto [it, fresh] = per_ns_.try_emplace(key, Bucket{burst_, now});
      if (!fresh) refill(it->second, per_ns_rate_, now);
      if (global_.tokens >= 1.0 && it->second.tokens >= 1.0) {
        global_.tokens -= 1.0;
        it->second.tokens -= 1.0;
        return;
      }
      double need_g = global_.tokens >= 1.0 ? 0 : (1.0 - global_.tokens) / global_rate_;
      double need_n =
          it->second.tokens >= 1.0 ? 0 : (1.0 - it->second.tokens) / per_ns_rate_;
      wait_s = std::max(need_g, need_n);
    }
    std::this_thread::sleep_for(std::chrono::duration<double>(wait_s + 1e-4));
  }
}

ExchangeResult exchange(const IpPort& ns, std::span<const uint8_t> query,
                        const ExchangePolicy& policy, RateLimiter* limiter) {
  if (query.size() < 12) throw TransportError("query shorter than a DNS header");
  QueryView question = parse_query(query);
  std::vector<uint8_t> msg(query.begin(), query.end());

  for (int attempt = 1; attempt <= policy.retries + 1; ++attempt) {
    uint16_t txid = random_txid();
    msg[0] = static_cast<uint8_t>(txid >> 8);
    msg[1] = static_cast<uint8_t>(txid);
    if (limiter) limiter->acquire(ns);
    auto start = Clock::now();
    auto rs = udp_attempt(ns, msg, txid, question, policy.timeout_ms);
    if (!rs) continue;
    ExchangeResult result;
    result.attempt = attempt;
    if (rs->truncated && policy.stream_fallback) {
      uint16_t tcp_txid = random_txid();
      msg[0] = static_cast<uint8_t>(tcp_txid >> 8);
      msg[1] = static_cast<uint8_t>(tcp_txid);
      if (limiter) limiter->acquire(ns);
      auto full = tcp_attempt(ns, msg, tcp_txid, question, policy.timeout_ms);
      if (full) {
        result.response = std::move(*full);
        result.via_stream = true;
        result.rtt_ms =
            std::chrono::duration<double, std::milli>(Clock::now() - start).count();
        return result;
      }
      continue;  // stream retry failed; treat the attempt as lost
    }
    result.response = std::move(*rs);
    result.rtt_ms =
        std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    return result;
  }
  throw TimeoutError("no response from " + ns.to_string() + " after " +
                     std::to_string(policy.retries + 1) + " attempts");
}

}  // namespace ecscan
