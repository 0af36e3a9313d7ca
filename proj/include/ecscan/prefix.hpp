#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ecscan {

// IANA address family numbers, as used on the wire by the client-subnet option.
enum class Family : uint8_t { v4 = 1, v6 = 2 };

constexpr int family_width(Family f) { return f == Family::v4 ? 32 : 128; }

// 128-bit address value. Bit 0 is the most significant bit; IPv4 addresses
// occupy bits 0..31 so that prefix arithmetic is family-agnostic.
struct AddrBits {
  uint64_t hi = 0;
  uint64_t lo = 0;

  bool bit(int i) const {
    return i < 64 ? (hi >> (63 - i)) & 1 : (lo >> (127 - i)) & 1;
  }
  void set_bit(int i, bool v) {
    uint64_t mask = i < 64 ? 1ULL << (63 - i) : 1ULL << (127 - i);
    uint64_t& word = i < 64 ? hi : lo;
    word = v ? (word | mask) : (word & ~mask);
  }
  // Zeroes all bits at positions >= len.
  AddrBits masked(int len) const {
    AddrBits r = *this;
    if (len <= 0) return AddrBits{};
    if (len < 64) {
      r.hi &= ~0ULL << (64 - len);
      r.lo = 0;
    } else if (len < 128) {
      r.lo &= ~0ULL << (128 - len);
    }
    return r;
  }

  friend auto operator<=>(const AddrBits&, const AddrBits&) = default;
};

// Advances an address to the start of the next /len block, aligning down
// first. Returns false when the step overflows the family's address width.
bool advance_grid(AddrBits& a, Family fam, int len);

std::vector<uint8_t> addr_to_bytes(Family fam, const AddrBits& a);
AddrBits addr_from_bytes(Family fam, const uint8_t* data, size_t n);
std::string addr_to_string(Family fam, const AddrBits& a);
std::optional<AddrBits> addr_parse(Family fam, const std::string& text);

// A CIDR prefix; canonical form keeps bits beyond the length zero.
struct Prefix {
  Family family = Family::v4;
  AddrBits bits{};
  uint8_t length = 0;

  static std::optional<Prefix> parse(std::string_view cidr);
  std::string to_string() const;

  bool contains(const Prefix& other) const {
    return family == other.family && length <= other.length &&
           other.bits.masked(length) == bits;
  }
  bool contains_addr(const AddrBits& a) const { return a.masked(length) == bits; }
  Prefix supernet(int len) const {
    return Prefix{family, bits.masked(len), static_cast<uint8_t>(len)};
  }

  friend auto operator<=>(const Prefix&, const Prefix&) = default;
};

// Reads one CIDR per line; '#' starts a comment, blank lines are ignored.
// Throws std::runtime_error on unparsable entries (with line number).
std::vector<Prefix> load_prefix_file(const std::string& path);
std::vector<Prefix> parse_prefix_lines(const std::string& text, const std::string& origin);

}  // namespace ecscan
