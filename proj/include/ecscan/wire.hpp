#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecscan/prefix.hpp"

namespace ecscan {

// Record types and EDNS option codes used by the scanner.
inline constexpr uint16_t kTypeA = 1;
inline constexpr uint16_t kTypeNS = 2;
inline constexpr uint16_t kTypeCNAME = 5;
inline constexpr uint16_t kTypePTR = 12;
inline constexpr uint16_t kTypeTXT = 16;
inline constexpr uint16_t kTypeAAAA = 28;
inline constexpr uint16_t kTypeOPT = 41;
inline constexpr uint16_t kOptNSID = 3;
inline constexpr uint16_t kOptClientSubnet = 8;

inline constexpr int kRcodeNoError = 0;
inline constexpr int kRcodeFormErr = 1;
inline constexpr int kRcodeServFail = 2;
inline constexpr int kRcodeNXDomain = 3;
inline constexpr int kRcodeRefused = 5;

struct WireError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MalformedMessage : WireError {
  using WireError::WireError;
};
struct InvalidLength : WireError {
  using WireError::WireError;
};
struct UnknownFamily : WireError {
  using WireError::WireError;
};
struct NameTooLong : WireError {
  using WireError::WireError;
};

// The RFC7871 client-subnet tuple. Canonical form zeroes address bits
// beyond source_len; decode enforces this, encode assumes it.
struct EcsOption {
  Family family = Family::v4;
  AddrBits address{};
  uint8_t source_len = 0;
  uint8_t scope_len = 0;

  friend bool operator==(const EcsOption&, const EcsOption&) = default;
};

struct QuerySpec {
  std::string qname;
  uint16_t qtype = kTypeA;
  std::optional<EcsOption> ecs;
  bool request_nsid = false;
  uint16_t txid = 0;
  uint16_t udp_payload_size = 1232;
  bool recursion_desired = false;
};

struct ResourceRecord {
  std::string name;
  uint16_t type = 0;
  uint32_t ttl = 0;
  std::vector<uint8_t> rdata;  // names inside rdata stored decompressed
};

struct ResponseSummary {
  uint16_t txid = 0;
  int rcode = 0;
  bool truncated = false;
  std::string qname;
  uint16_t qtype = 0;
  std::vector<ResourceRecord> answers;  // wire order preserved
  std::optional<EcsOption> ecs_echo;
  std::optional<std::vector<uint8_t>> nsid;
};

// Query fields as seen by a server.
struct QueryView {
  uint16_t txid = 0;
  std::string qname;
  uint16_t qtype = 0;
  std::optional<EcsOption> ecs;
  bool request_nsid = false;
  uint16_t udp_payload_size = 512;
  bool recursion_desired = false;
  bool has_opt = false;
};

struct ResponseSpec {
  int rcode = kRcodeNoError;
  bool truncated = false;
  bool authoritative = true;
  std::vector<ResourceRecord> answers;
  std::optional<uint8_t> ecs_scope;  // echo the query's option with this scope
  std::optional<std::vector<uint8_t>> nsid;
};

// family(2) | source_len(1) | scope_len(1) | address, ceil(source_len/8) octets.
std::vector<uint8_t> encode_ecs_option(const EcsOption& opt);
EcsOption decode_ecs_option(std::span<const uint8_t> data);

std::vector<uint8_t> build_query(const QuerySpec& spec);
ResponseSummary parse_response(std::span<const uint8_t> data);

QueryView parse_query(std::span<const uint8_t> data);
std::vector<uint8_t> build_response(const QueryView& query, const ResponseSpec& spec);

// Presentation-form name ("a.example.com") to uncompressed wire labels.
std::vector<uint8_t> encode_name(const std::string& name);
std::string name_to_string(std::span<const uint8_t> wire_name);

// a/b equal under DNS case-insensitivity.
bool dns_name_equal(const std::string& a, const std::string& b);

// A/AAAA rdata in dotted/colon form, names as text, anything else lowercase hex.
std::string rdata_to_string(uint16_t type, std::span<const uint8_t> rdata);

}  // namespace ecscan
