#include "ecscan/prefix.hpp"

#include <arpa/inet.h>

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ecscan {

bool advance_grid(AddrBits& a, Family fam, int len) {
  if (len <= 0) return false;  // a /0 block has no successor
  a = a.masked(len);
  if (fam == Family::v4) {
    uint64_t v = (a.hi >> 32) + (1ULL << (32 - len));
    if (v > 0xFFFFFFFFULL) return false;
    a.hi = v << 32;
    a.lo = 0;
    return true;
  }
  if (len > 64) {
    uint64_t inc = 1ULL << (128 - len);
    uint64_t old = a.lo;
    a.lo += inc;
    if (a.lo < old) {
      if (a.hi == UINT64_MAX) return false;
      a.hi += 1;
    }
    return true;
  }
  uint64_t inc = 1ULL << (64 - len);
  uint64_t old = a.hi;
  a.hi += inc;
  return a.hi > old;
}

std::vector<uint8_t> addr_to_bytes(Family fam, const AddrBits& a) {
  std::vector<uint8_t> out(fam == Family::v4 ? 4 : 16);
  for (size_t i = 0; i < out.size(); ++i) {
    uint64_t word = i < 8 ? a.hi : a.lo;
    out[i] = static_cast<uint8_t>(word >> (56 - 8 * (i % 8)));
  }
  return out;
}

AddrBits addr_from_bytes(Family fam, const uint8_t* data, size_t n) {
  AddrBits a;
  size_t width = fam == Family::v4 ? 4 : 16;
  for (size_t i = 0; i < width && i < n; ++i) {
    uint64_t& word = i < 8 ? a.hi : a.lo;
    word |= static_cast<uint64_t>(data[i]) << (56 - 8 * (i % 8));
  }
  return a;
}

std::string addr_to_string(Family fam, const AddrBits& a) {
  char buf[INET6_ADDRSTRLEN] = {};
  auto bytes = addr_to_bytes(fam, a);
  inet_ntop(fam == Family::v4 ? AF_INET : AF_INET6, bytes.data(), buf, sizeof(buf));
  return buf;
}

std::optional<AddrBits> addr_parse(Family fam, const std::string& text) {
  uint8_t buf[16] = {};
  int af = fam == Family::v4 ? AF_INET : AF_INET6;
  if (inet_pton(af, text.c_str(), buf) != 1) return std::nullopt;
  return addr_from_bytes(fam, buf, fam == Family::v4 ? 4 : 16);
}

std::optional<Prefix> Prefix::parse(std::string_view cidr) {
  std::string addr(cidr);
  int len = -1;
  if (auto slash = cidr.find('/'); slash != std::string_view::npos) {
    addr.assign(cidr.substr(0, slash));
    auto lenstr = cidr.substr(slash + 1);
    if (lenstr.empty()) return std::nullopt;
    len = 0;
    for (char c : lenstr) {
      if (c < '0' || c > '9') return std::nullopt;
      len = len * 10 + (c - '0');
      if (len > 128) return std::nullopt;
    }
  }
  Family fam = addr.find(':') != std::string::npos ? Family::v6 : Family::v4;
  auto bits = addr_parse(fam, addr);
  if (!bits) return std::nullopt;
  if (len < 0) len = family_width(fam);
  if (len > family_width(fam)) return std::nullopt;
  return Prefix{fam, bits->masked(len), static_cast<uint8_t>(len)};
}

std::string Prefix::to_string() const {
  return addr_to_string(family, bits) + "/" + std::to_string(length);
}

std::vector<Prefix> parse_prefix_lines(const std::string& text, const std::string& origin) {
  std::vector<Prefix> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto begin = line.find_first_not_of(" \t\r");
    if (begin == std::string::npos) continue;
    auto end = line.find_last_not_of(" \t\r");
    auto token = line.substr(begin, end - begin + 1);
    auto p = Prefix::parse(token);
    if (!p)
      throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                               ": invalid prefix '" + token + "'");
    out.push_back(*p);
  }
  return out;
}

std::vector<Prefix> load_prefix_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open prefix file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_prefix_lines(ss.str(), path);
}

}  // namespace ecscan
